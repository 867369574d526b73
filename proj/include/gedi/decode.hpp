// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>
#include <vector>

#include "gedi/cclm.hpp"

namespace gedi {

/// Decoding hyperparameters. Defaults are the published recipe:
/// omega=30, rho=0.2, tau=0.8, repetition penalty 1.2, greedy decoding.
struct GenerationConfig {
    double omega = 30.0;        // class-posterior exponent, >= 0
    double rho = 0.2;           // cumulative-mass floor of the keep set, in [0,1]
    double tau = 0.8;           // posterior keep threshold, in [0,1]
    double rep_penalty = 1.2;   // >= 1
    double target_bias = 0.0;   // added to the target class's prior bias
    std::vector<double> bias_override; // per contrast class; empty = model biases
    int max_new_tokens = 32;
    bool filtering = true;
    enum class Mode { Guided, Direct } mode = Mode::Guided;

    void validate() const;

    static GenerationConfig paper_default() { return {}; }
    static GenerationConfig detox_style() {
        GenerationConfig c;
        c.tau = 0.97;
        c.target_bias = 2.0;
        return c;
    }
    static GenerationConfig strong_penalty() {
        GenerationConfig c;
        c.rep_penalty = 1.5;
        return c;
    }
    /// Preset by name ("paper-default" | "detox-style" | "strong-penalty").
    static GenerationConfig preset(const std::string& name);
};

/// Per-class decoding state of a guide. The contrast set is every class of a
/// standard guide and the {true,false} pair of a binarized one (where the
/// class-name token has already been consumed into both states). All states
/// share the position counter t.
struct GuideState {
    std::vector<LMState> states;
    std::vector<int> contrast_model_classes;
    int target_index = 0;
    long t = 0;
};

GuideState init_guide(const TabularCCLM& guide, int target_class);
/// Advance every per-class state with one token (one evaluation per class).
void guide_consume(const TabularCCLM& guide, GuideState& gstate, int token);

/// One decoding step's record. Pass counts are the evidence that per-token
/// cost is one base evaluation plus |contrast set| guide evaluations,
/// independent of vocab size.
struct StepTrace {
    std::vector<double> target_posterior; // P(target | candidate, prefix) per vocab id
    std::vector<double> weighted;         // normalized weighted posterior, pre-filter
    std::vector<int> kept;                // kept token ids, ascending
    std::vector<double> final_dist;       // post-filter renormalized distribution
    int chosen = -1;
    int base_passes = 1;
    int guide_passes = 0;
};

/// Online contrastive class posterior for every candidate next token.
/// Row-major [vocab.size()][contrast size]; each row sums to 1 within 1e-12.
/// Uses cumulative per-class log-likelihoods plus one next-token row per
/// contrast class (exactly |contrast| evaluations, never per-candidate),
/// exponent alpha/t with t = gstate.t + 1, prior biases, and a max-subtracted
/// softmax. Candidates impossible under every class get a uniform row.
/// `biases` must have one entry per contrast class (empty = model biases).
std::vector<double> candidate_class_posteriors(const TabularCCLM& guide,
                                               const GuideState& gstate,
                                               std::span<const double> biases = {},
                                               std::optional<double> alpha_override = {});

/// Normalized P_LM(x)·P(c|x)^omega over the vocab, computed in log space.
/// Raises NumericError when every weight is zero.
std::vector<double> weighted_posterior(std::span<const double> base_logprobs,
                                       std::span<const double> target_posteriors,
                                       double omega);

struct FilterResult {
    std::vector<int> kept;        // V_k, ascending token ids
    std::vector<double> dist;     // weighted with non-kept zeroed, renormalized
};

/// Candidate filtering: V_m is the smallest descending-posterior prefix whose
/// weighted mass reaches rho (the single top token when rho = 0; everything
/// when total mass < rho), V_p keeps posteriors strictly above tau, and
/// V_k = V_p ∪ V_m. Ties sort by lower token id.
FilterResult filter_candidates(std::span<const double> weighted,
                               std::span<const double> target_posteriors,
                               double rho, double tau);

/// Divide the scores of history tokens by r (once each, regardless of
/// repeat count). Scores must be positive.
void apply_repetition_penalty(std::span<double> scores,
                              std::span<const int> history,
                              double r);

struct GenerationResult {
    std::vector<int> tokens;
    std::vector<StepTrace> trace;
    long prompt_base_passes = 0;
    long prompt_guide_passes = 0;
};

/// Guided greedy decoding: per step, candidate posteriors -> weighted
/// posterior -> filter -> positive shift -> repetition penalty -> argmax
/// (ties to the lowest id); stops at EOS or max_new_tokens. The base model
/// must be single-class and share the guide's vocab.
GenerationResult gedi_generate(const TabularCCLM& base, const TabularCCLM& guide,
                               int target_class, std::span<const int> prompt,
                               const GenerationConfig& config);

/// Greedy decoding straight from the CC-LM conditioned on a class, with the
/// same positive-shift + repetition-penalty treatment.
std::vector<int> direct_generate(const TabularCCLM& model, int class_id,
                                 std::span<const int> prompt,
                                 const GenerationConfig& config);

} // namespace gedi
