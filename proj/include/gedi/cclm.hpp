// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gedi/vocab.hpp"

namespace gedi {

/// Class-conditional language model with an exact tabular order-k backend.
///
/// The logit table is dense, row-major over (model class, context, predicted
/// token). Contexts are tuples of the k most recent token ids, each slot
/// ranging over every vocab id (BOS pads positions before the sequence
/// start); the context index folds the tuple oldest-first:
///   idx = ((slot0 * size + slot1) * size + ...) + slot[k-1].
/// Predicted-token columns cover content tokens followed by EOS.
///
/// Conditioning is indexed by class directly, which is equivalent to the
/// prepended-control-code view for the autoregressive factorization. In
/// binarized mode the model keeps one row set per (code, task class) pair:
/// 2*C model classes, addressed via model_class(). That realizes "the class
/// name is the first token and conditions everything after it" exactly,
/// while the public contrast is always the {true,false} pair.
///
/// Parameters are immutable during inference; training mutates them under
/// exclusive access.
struct TabularCCLM {
    Vocab vocab;
    ControlCodeSet codes;
    int order = 0;                 // k >= 0
    double alpha = 1.0;            // learnable scale, kept > 0
    std::vector<double> logits;    // [n_model_classes][n_contexts][n_predicted]

    int n_model_classes() const {
        return codes.binarized ? 2 * codes.n_classes() : codes.n_classes();
    }
    std::int64_t n_contexts() const;
    int n_predicted() const { return vocab.n_predicted(); }
    std::int64_t n_cells() const {
        return static_cast<std::int64_t>(n_model_classes()) * n_contexts() * n_predicted();
    }

    double& logit(int model_class, std::int64_t ctx, int col) {
        return logits[(static_cast<std::int64_t>(model_class) * n_contexts() + ctx) * n_predicted() + col];
    }
    double logit(int model_class, std::int64_t ctx, int col) const {
        return logits[(static_cast<std::int64_t>(model_class) * n_contexts() + ctx) * n_predicted() + col];
    }
    std::span<const double> logit_row(int model_class, std::int64_t ctx) const;
    std::span<double> logit_row_mut(int model_class, std::int64_t ctx);

    /// Model row for a standard class. InvalidArgument when out of range or
    /// when the model is binarized.
    int model_class(int class_id) const;
    /// Model row for a binarized (code, task class) pair.
    int model_class(BinaryCode code, int task_class) const;

    /// Effective prior bias of a model class (bias attaches to codes in
    /// binarized mode, to classes otherwise).
    double bias_of_model_class(int model_class) const;

    void validate() const;
};

/// Decoding/scoring state for one conditioning class: the context window, the
/// position counter t (tokens consumed after the control code, prompt
/// included) and the running sequence log-likelihood.
struct LMState {
    int model_class = 0;
    std::vector<int> context;   // exactly `order` ids, oldest first, BOS-padded
    long t = 0;
    double cum_logprob = 0.0;
};

enum class InitScheme { Zeros, Noise };

/// Fresh table: zero logits (uniform rows) or i.i.d. Gaussian noise of the
/// given sigma, reproducible per seed. alpha starts at 1, biases at 0.
TabularCCLM tabular_init(const Vocab& vocab, int order, ControlCodeSet codes,
                         InitScheme scheme, std::uint64_t seed, double noise_sigma = 0.01);

/// Fresh state conditioned on a standard class id (errors on bad ids).
LMState init_state(const TabularCCLM& model, int class_id);
/// Fresh state for an internal model-class row (standard or binarized).
LMState init_state_model_class(const TabularCCLM& model, int model_class);

std::int64_t context_index(const TabularCCLM& model, const LMState& state);

/// Log P(token | context, class) for every vocab id. Content and EOS entries
/// come from the table's log-softmax row; BOS and PAD are -inf. Exponentiates
/// and sums to 1 within 1e-12.
std::vector<double> next_token_logprobs(const TabularCCLM& model, const LMState& state);
/// Same, writing into a caller buffer of vocab.size() entries.
void next_token_logprobs_into(const TabularCCLM& model, const LMState& state, std::span<double> out);

/// Consume one token: shifts the context window, increments t, adds
/// log P(token | context, class) to the cumulative log-likelihood.
void advance_inplace(const TabularCCLM& model, LMState& state, int token);
LMState advance(const TabularCCLM& model, const LMState& state, int token);
/// Advance using an already-computed log-prob row for this state (saves the
/// re-evaluation inside decoding loops; must be the row for `state`).
void advance_with_row(const TabularCCLM& model, LMState& state, int token,
                      std::span<const double> row_logprobs);

/// Log P(tokens | class) as the exact fold of advance over the tokens; the
/// summation order is identical to repeated advance calls, so the two agree
/// bitwise.
double sequence_logprob(const TabularCCLM& model, int class_id, std::span<const int> tokens);
double sequence_logprob_model_class(const TabularCCLM& model, int model_class,
                                    std::span<const int> tokens);

/// Checkpoint io: a self-describing file with a key-value text preamble
/// (format version, vocab, order, codes, alpha) followed by the logit table
/// as row-major little-endian 64-bit floats. Round-trips bitwise. `note`
/// embeds free-form provenance (the producing config and seed).
void save_checkpoint(const std::string& path, const TabularCCLM& model,
                     const std::string& note = "");
TabularCCLM load_checkpoint(const std::string& path);

} // namespace gedi
