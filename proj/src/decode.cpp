// SPDX-License-Identifier: Apache-2.0

#include "gedi/decode.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gedi/numeric.hpp"

namespace gedi {

void GenerationConfig::validate() const {
    if (!(omega >= 0.0)) throw InvalidArgument("GenerationConfig: omega must be >= 0");
    if (!(rho >= 0.0 && rho <= 1.0)) throw InvalidArgument("GenerationConfig: rho must be in [0,1]");
    if (!(tau >= 0.0 && tau <= 1.0)) throw InvalidArgument("GenerationConfig: tau must be in [0,1]");
    if (!(rep_penalty >= 1.0)) throw InvalidArgument("GenerationConfig: repetition penalty must be >= 1");
    if (max_new_tokens < 1) throw InvalidArgument("GenerationConfig: max_new_tokens must be positive");
}

GenerationConfig GenerationConfig::preset(const std::string& name) {
    if (name == "paper-default") return paper_default();
    if (name == "detox-style") return detox_style();
    if (name == "strong-penalty") return strong_penalty();
    throw InvalidArgument("GenerationConfig: unknown preset '" + name + "'");
}

GuideState init_guide(const TabularCCLM& guide, int target_class) {
    GuideState g;
    if (guide.codes.binarized) {
        if (target_class < 0 || target_class >= guide.codes.n_classes())
            throw InvalidArgument("init_guide: task class " + std::to_string(target_class) + " out of range");
        g.contrast_model_classes = {guide.model_class(BinaryCode::True, target_class),
                                    guide.model_class(BinaryCode::False, target_class)};
        g.target_index = 0;
        for (int mc : g.contrast_model_classes) g.states.push_back(init_state_model_class(guide, mc));
        // The class name is the first sequence token under both codes.
        guide_consume(guide, g, guide.codes.name_token_ids[static_cast<std::size_t>(target_class)]);
    } else {
        if (guide.codes.n_classes() < 2)
            throw InvalidArgument("init_guide: contrast needs at least two classes");
        const int target_mc = guide.model_class(target_class);
        for (int c = 0; c < guide.codes.n_classes(); ++c) {
            g.contrast_model_classes.push_back(c);
            g.states.push_back(init_state_model_class(guide, c));
        }
        g.target_index = target_mc;
    }
    return g;
}

void guide_consume(const TabularCCLM& guide, GuideState& gstate, int token) {
    for (auto& s : gstate.states) advance_inplace(guide, s, token);
    gstate.t += 1;
}

namespace {

// Posterior matrix plus the per-class next-token rows it was computed from,
// so the decode loop can advance states without re-evaluating.
struct PosteriorsAndRows {
    std::vector<double> posteriors;          // [vocab][n_contrast]
    std::vector<std::vector<double>> rows;   // per contrast class, full vocab
};

PosteriorsAndRows candidate_posteriors_impl(const TabularCCLM& guide, const GuideState& gstate,
                                            std::span<const double> biases,
                                            std::optional<double> alpha_override) {
    const int nc = static_cast<int>(gstate.contrast_model_classes.size());
    if (nc < 2) throw InvalidArgument("candidate_class_posteriors: contrast set must have >= 2 classes");
    std::vector<double> eff_bias(static_cast<std::size_t>(nc));
    if (biases.empty()) {
        for (int c = 0; c < nc; ++c)
            eff_bias[static_cast<std::size_t>(c)] =
                guide.bias_of_model_class(gstate.contrast_model_classes[static_cast<std::size_t>(c)]);
    } else {
        if (static_cast<int>(biases.size()) != nc)
            throw InvalidArgument("candidate_class_posteriors: bias vector size mismatch");
        std::copy(biases.begin(), biases.end(), eff_bias.begin());
    }
    const double alpha = alpha_override.value_or(guide.alpha);
    if (!std::isfinite(alpha)) throw NumericError("candidate_class_posteriors: non-finite alpha");
    const double t_next = static_cast<double>(gstate.t + 1);
    const double exponent = alpha / t_next;

    PosteriorsAndRows out;
    out.rows.resize(static_cast<std::size_t>(nc));
    // One next-token evaluation per contrast class; every candidate's
    // posterior is assembled from these rows and the cached cumulative
    // log-likelihoods.
    for (int c = 0; c < nc; ++c)
        out.rows[static_cast<std::size_t>(c)] =
            next_token_logprobs(guide, gstate.states[static_cast<std::size_t>(c)]);

    const int n_vocab = guide.vocab.size();
    out.posteriors.assign(static_cast<std::size_t>(n_vocab) * static_cast<std::size_t>(nc), 0.0);
    std::vector<double> z(static_cast<std::size_t>(nc));
    for (int v = 0; v < n_vocab; ++v) {
        for (int c = 0; c < nc; ++c) {
            const auto cs = static_cast<std::size_t>(c);
            const double ll = gstate.states[cs].cum_logprob + out.rows[cs][static_cast<std::size_t>(v)];
            if (!std::isfinite(ll) && ll != kNegInf)
                throw NumericError("candidate_class_posteriors: non-finite sequence log-likelihood");
            z[cs] = eff_bias[cs] + exponent * ll;
        }
        // Candidates impossible under every class carry no class evidence;
        // their row is uniform (their weighted-posterior mass is zero anyway).
        softmax_from_logits(z, std::span<double>(out.posteriors.data() + static_cast<std::size_t>(v) * nc,
                                                 static_cast<std::size_t>(nc)));
    }
    return out;
}

} // namespace

std::vector<double> candidate_class_posteriors(const TabularCCLM& guide, const GuideState& gstate,
                                               std::span<const double> biases,
                                               std::optional<double> alpha_override) {
    return candidate_posteriors_impl(guide, gstate, biases, alpha_override).posteriors;
}

std::vector<double> weighted_posterior(std::span<const double> base_logprobs,
                                       std::span<const double> target_posteriors,
                                       double omega) {
    if (base_logprobs.size() != target_posteriors.size())
        throw InvalidArgument("weighted_posterior: input length mismatch");
    if (!(omega >= 0.0)) throw InvalidArgument("weighted_posterior: omega must be >= 0");
    const std::size_t n = base_logprobs.size();
    std::vector<double> lw(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double p = target_posteriors[i];
        if (!(p >= 0.0 && p <= 1.0 + 1e-12))
            throw InvalidArgument("weighted_posterior: posterior outside [0,1]");
        double term;
        if (omega == 0.0)
            term = 0.0; // x^0 = 1, including x = 0
        else
            term = (p > 0.0) ? omega * std::log(p) : kNegInf;
        lw[i] = base_logprobs[i] + term;
    }
    double m = kNegInf;
    for (double x : lw)
        if (x > m) m = x;
    if (m == kNegInf)
        throw NumericError("weighted_posterior: degenerate distribution (all weights zero)");
    std::vector<double> out(n);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = std::exp(lw[i] - m);
        s += out[i];
    }
    for (double& x : out) x /= s;
    return out;
}

FilterResult filter_candidates(std::span<const double> weighted,
                               std::span<const double> target_posteriors,
                               double rho, double tau) {
    if (weighted.size() != target_posteriors.size())
        throw InvalidArgument("filter_candidates: input length mismatch");
    if (!(rho >= 0.0 && rho <= 1.0)) throw InvalidArgument("filter_candidates: rho must be in [0,1]");
    if (!(tau >= 0.0 && tau <= 1.0)) throw InvalidArgument("filter_candidates: tau must be in [0,1]");
    const std::size_t n = weighted.size();
    if (n == 0) throw InvalidArgument("filter_candidates: empty input");

    // Descending posterior, ties to the lower token id.
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return target_posteriors[static_cast<std::size_t>(a)] > target_posteriors[static_cast<std::size_t>(b)];
    });

    std::vector<char> keep(n, 0);
    // V_m: smallest prefix reaching rho in weighted mass. With rho = 0 the
    // condition stops at the single top-posterior token; when the total never
    // reaches rho the whole vocab ends up kept.
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const int tok = order[i];
        keep[static_cast<std::size_t>(tok)] = 1;
        acc += weighted[static_cast<std::size_t>(tok)];
        if (acc >= rho) break;
    }
    // V_p: posterior strictly above tau.
    for (std::size_t v = 0; v < n; ++v)
        if (target_posteriors[v] > tau) keep[v] = 1;

    FilterResult r;
    r.dist.assign(n, 0.0);
    double mass = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
        if (keep[v]) {
            r.kept.push_back(static_cast<int>(v));
            mass += weighted[v];
        }
    }
    if (!(mass > 0.0))
        throw NumericError("filter_candidates: kept set carries zero probability mass");
    for (int v : r.kept) r.dist[static_cast<std::size_t>(v)] = weighted[static_cast<std::size_t>(v)] / mass;
    return r;
}

void apply_repetition_penalty(std::span<double> scores, std::span<const int> history, double r) {
    if (!(r >= 1.0)) throw InvalidArgument("apply_repetition_penalty: r must be >= 1");
    for (double s : scores)
        if (!(s > 0.0))
            throw InvalidArgument("apply_repetition_penalty: scores must be positive");
    std::vector<char> seen(scores.size(), 0);
    for (int tok : history) {
        if (tok < 0 || tok >= static_cast<int>(scores.size()))
            throw InvalidArgument("apply_repetition_penalty: history token out of range");
        seen[static_cast<std::size_t>(tok)] = 1;
    }
    for (std::size_t v = 0; v < scores.size(); ++v)
        if (seen[v]) scores[v] /= r;
}

namespace {

constexpr double kPositiveShiftEpsilon = 1e-6;

// Shift a probability vector to strictly positive scores: p - min(p) + eps.
// Ordering is preserved, which is all greedy decoding needs.
std::vector<double> positive_scores(std::span<const double> probs) {
    double mn = probs[0];
    for (double p : probs) mn = std::min(mn, p);
    std::vector<double> s(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) s[i] = probs[i] - mn + kPositiveShiftEpsilon;
    return s;
}

int argmax_lowest_id(std::span<const double> v) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(v.size()); ++i)
        if (v[static_cast<std::size_t>(i)] > v[static_cast<std::size_t>(best)]) best = i;
    return best;
}

} // namespace

GenerationResult gedi_generate(const TabularCCLM& base, const TabularCCLM& guide,
                               int target_class, std::span<const int> prompt,
                               const GenerationConfig& config) {
    config.validate();
    if (base.codes.n_classes() != 1 || base.codes.binarized)
        throw InvalidArgument("gedi_generate: the base model must be single-class");
    if (base.vocab != guide.vocab)
        throw DataError("gedi_generate: base and guide must share the same vocab");

    GuideState gstate = init_guide(guide, target_class);
    const int nc = static_cast<int>(gstate.contrast_model_classes.size());

    std::vector<double> biases(static_cast<std::size_t>(nc));
    for (int c = 0; c < nc; ++c)
        biases[static_cast<std::size_t>(c)] =
            guide.bias_of_model_class(gstate.contrast_model_classes[static_cast<std::size_t>(c)]);
    if (!config.bias_override.empty()) {
        if (static_cast<int>(config.bias_override.size()) != nc)
            throw InvalidArgument("gedi_generate: bias override size must match the contrast set");
        biases = config.bias_override;
    }
    biases[static_cast<std::size_t>(gstate.target_index)] += config.target_bias;

    LMState bstate = init_state_model_class(base, 0);
    GenerationResult out;
    std::vector<int> history;
    for (int tok : prompt) {
        advance_inplace(base, bstate, tok);
        out.prompt_base_passes += 1;
        guide_consume(guide, gstate, tok);
        out.prompt_guide_passes += nc;
        history.push_back(tok);
    }

    const std::size_t n_vocab = static_cast<std::size_t>(base.vocab.size());
    for (int step = 0; step < config.max_new_tokens; ++step) {
        auto pr = candidate_posteriors_impl(guide, gstate, biases, std::nullopt);
        const auto base_row = next_token_logprobs(base, bstate);

        StepTrace tr;
        tr.base_passes = 1;
        tr.guide_passes = nc;
        tr.target_posterior.resize(n_vocab);
        for (std::size_t v = 0; v < n_vocab; ++v)
            tr.target_posterior[v] = pr.posteriors[v * static_cast<std::size_t>(nc) +
                                                   static_cast<std::size_t>(gstate.target_index)];

        tr.weighted = weighted_posterior(base_row, tr.target_posterior, config.omega);

        if (config.filtering) {
            auto filtered = filter_candidates(tr.weighted, tr.target_posterior, config.rho, config.tau);
            tr.kept = std::move(filtered.kept);
            tr.final_dist = std::move(filtered.dist);
        } else {
            tr.kept.resize(n_vocab);
            std::iota(tr.kept.begin(), tr.kept.end(), 0);
            tr.final_dist = tr.weighted;
        }

        auto scores = positive_scores(tr.final_dist);
        apply_repetition_penalty(scores, history, config.rep_penalty);
        const int chosen = argmax_lowest_id(scores);
        tr.chosen = chosen;
        out.trace.push_back(std::move(tr));

        if (chosen == base.vocab.eos) break;

        out.tokens.push_back(chosen);
        history.push_back(chosen);
        advance_with_row(base, bstate, chosen, base_row);
        for (int c = 0; c < nc; ++c)
            advance_with_row(guide, gstate.states[static_cast<std::size_t>(c)], chosen,
                             pr.rows[static_cast<std::size_t>(c)]);
        gstate.t += 1;
    }
    return out;
}

std::vector<int> direct_generate(const TabularCCLM& model, int class_id,
                                 std::span<const int> prompt,
                                 const GenerationConfig& config) {
    config.validate();
    LMState state = init_state(model, class_id);
    std::vector<int> history;
    for (int tok : prompt) {
        advance_inplace(model, state, tok);
        history.push_back(tok);
    }
    std::vector<int> out;
    for (int step = 0; step < config.max_new_tokens; ++step) {
        const auto row = next_token_logprobs(model, state);
        std::vector<double> probs(row.size());
        for (std::size_t v = 0; v < row.size(); ++v)
            probs[v] = (row[v] == kNegInf) ? 0.0 : std::exp(row[v]);
        auto scores = positive_scores(probs);
        apply_repetition_penalty(scores, history, config.rep_penalty);
        const int chosen = argmax_lowest_id(scores);
        if (chosen == model.vocab.eos) break;
        out.push_back(chosen);
        history.push_back(chosen);
        advance_with_row(model, state, chosen, row);
    }
    return out;
}

} // namespace gedi
