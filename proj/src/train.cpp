// SPDX-License-Identifier: Apache-2.0

#include "gedi/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gedi/numeric.hpp"

namespace gedi {

void TrainConfig::validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidArgument("TrainConfig: lambda must be in [0,1]");
    if (!(lr > 0.0)) throw InvalidArgument("TrainConfig: learning rate must be positive");
    if (epochs < 0) throw InvalidArgument("TrainConfig: epochs must be >= 0");
    if (batch_size < 0) throw InvalidArgument("TrainConfig: batch size must be >= 0");
}

namespace {

void check_batch(const TabularCCLM& model, const TrainingBatch& batch) {
    if (batch.empty()) throw InvalidArgument("training batch must be nonempty");
    for (const auto& ex : batch) {
        if (ex.tokens.empty()) throw InvalidArgument("training sequences must be nonempty");
        if (ex.class_id < 0 || ex.class_id >= model.n_model_classes())
            throw InvalidArgument("training example class out of range");
        if (ex.paired_negative >= model.n_model_classes())
            throw InvalidArgument("paired negative class out of range");
    }
}

// Contrast rows for the discriminative term of one example: all classes for
// standard examples, the {true,false} pair when a paired negative is present.
std::vector<int> contrast_rows(const TabularCCLM& model, const TrainingExample& ex) {
    if (ex.paired_negative >= 0) return {ex.class_id, ex.paired_negative};
    std::vector<int> rows(static_cast<std::size_t>(model.n_model_classes()));
    std::iota(rows.begin(), rows.end(), 0);
    return rows;
}

} // namespace

double generative_loss(const TabularCCLM& model, const TrainingBatch& batch) {
    check_batch(model, batch);
    double total = 0.0;
    for (const auto& ex : batch) {
        const double ll = sequence_logprob_model_class(model, ex.class_id, ex.tokens);
        total += ll / static_cast<double>(ex.tokens.size());
    }
    const double loss = -total / static_cast<double>(batch.size());
    if (!std::isfinite(loss)) throw NumericError("generative_loss: non-finite loss");
    return loss;
}

namespace {

std::vector<double> posterior_over_rows(const TabularCCLM& model, std::span<const int> tokens,
                                        std::span<const int> rows, std::optional<double> alpha_override) {
    if (tokens.empty()) throw InvalidArgument("class posterior: token sequence must be nonempty");
    const double alpha = alpha_override.value_or(model.alpha);
    const double exponent = alpha / static_cast<double>(tokens.size());
    std::vector<double> z(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const double ll = sequence_logprob_model_class(model, rows[i], tokens);
        z[i] = model.bias_of_model_class(rows[i]) + exponent * ll;
    }
    std::vector<double> post(rows.size());
    softmax_from_logits(z, post);
    return post;
}

} // namespace

std::vector<double> class_posterior_offline(const TabularCCLM& model, std::span<const int> tokens,
                                            std::optional<double> alpha_override) {
    if (model.codes.binarized)
        throw InvalidArgument("class_posterior_offline: binarized models use class_posterior_pair");
    std::vector<int> rows(static_cast<std::size_t>(model.n_model_classes()));
    std::iota(rows.begin(), rows.end(), 0);
    return posterior_over_rows(model, tokens, rows, alpha_override);
}

std::vector<double> class_posterior_pair(const TabularCCLM& model, std::span<const int> tokens,
                                         int model_class_a, int model_class_b,
                                         std::optional<double> alpha_override) {
    const std::vector<int> rows = {model_class_a, model_class_b};
    return posterior_over_rows(model, tokens, rows, alpha_override);
}

double discriminative_loss(const TabularCCLM& model, const TrainingBatch& batch) {
    check_batch(model, batch);
    double total = 0.0;
    for (const auto& ex : batch) {
        const auto rows = contrast_rows(model, ex);
        const auto post = posterior_over_rows(model, ex.tokens, rows, std::nullopt);
        const auto self = std::find(rows.begin(), rows.end(), ex.class_id) - rows.begin();
        const double p = post[static_cast<std::size_t>(self)];
        total += (p > 0.0) ? std::log(p) : kNegInf;
    }
    const double loss = -total / static_cast<double>(batch.size());
    if (!std::isfinite(loss)) throw NumericError("discriminative_loss: non-finite loss");
    return loss;
}

std::tuple<double, double, double> hybrid_loss(const TabularCCLM& model, const TrainingBatch& batch,
                                               double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidArgument("hybrid_loss: lambda must be in [0,1]");
    const double lg = generative_loss(model, batch);
    const double ld = discriminative_loss(model, batch);
    return {lambda * lg + (1.0 - lambda) * ld, lg, ld};
}

namespace {

// Per-example gradient scatter. Everything is exact: the table enters through
// log-softmax rows, alpha through its exp reparameterization, biases through
// the posterior logits. Accumulates into `g` and returns (loss_g_i, loss_d_i)
// contributions (per-sequence averaged for L_g, raw log posterior for L_d).
struct ExampleLosses {
    double g = 0.0;
    double d = 0.0;
};

ExampleLosses accumulate_example(const TabularCCLM& model, const TrainingExample& ex,
                                 double lambda, double inv_n, GradientBundle& g) {
    const double T = static_cast<double>(ex.tokens.size());
    const int np = model.n_predicted();
    std::vector<double> probs(static_cast<std::size_t>(np));
    ExampleLosses out;

    // Generative part: lambda/(N*T) * (softmax - onehot) at each visited row.
    if (lambda > 0.0) {
        LMState s = init_state_model_class(model, ex.class_id);
        const double w = lambda * inv_n / T;
        for (int tok : ex.tokens) {
            const auto ctx = context_index(model, s);
            const auto row = model.logit_row(ex.class_id, ctx);
            softmax_from_logits(row, probs);
            auto grow = std::span<double>(
                g.d_logits.data() + (static_cast<std::int64_t>(ex.class_id) * model.n_contexts() + ctx) * np,
                static_cast<std::size_t>(np));
            for (int v = 0; v < np; ++v) grow[static_cast<std::size_t>(v)] += w * probs[static_cast<std::size_t>(v)];
            if (tok < np) grow[static_cast<std::size_t>(tok)] -= w;
            advance_inplace(model, s, tok);
        }
        out.g = -s.cum_logprob / T;
    } else {
        out.g = -sequence_logprob_model_class(model, ex.class_id, ex.tokens) / T;
    }

    // Discriminative part.
    const double dweight = 1.0 - lambda;
    const auto rows = contrast_rows(model, ex);
    const std::size_t nc = rows.size();
    std::vector<double> ll(nc);
    for (std::size_t c = 0; c < nc; ++c)
        ll[c] = sequence_logprob_model_class(model, rows[c], ex.tokens);
    const double exponent = model.alpha / T;
    std::vector<double> z(nc), q(nc);
    for (std::size_t c = 0; c < nc; ++c) z[c] = model.bias_of_model_class(rows[c]) + exponent * ll[c];
    softmax_from_logits(z, q);
    std::size_t self = 0;
    for (std::size_t c = 0; c < nc; ++c)
        if (rows[c] == ex.class_id) self = c;
    out.d = (q[self] > 0.0) ? -std::log(q[self]) : std::numeric_limits<double>::infinity();

    if (dweight > 0.0) {
        for (std::size_t c = 0; c < nc; ++c) {
            const double coef = dweight * inv_n * (q[c] - (c == self ? 1.0 : 0.0));
            if (coef == 0.0) continue;
            const int mc = rows[c];
            // Bias: dz/db = 1 (bias attaches to the code in binarized mode).
            const int bidx = model.codes.binarized ? mc / model.codes.n_classes() : mc;
            g.d_bias[static_cast<std::size_t>(bidx)] += coef;
            // Alpha through a = log(alpha): dz/da = alpha * ll / T.
            g.d_log_alpha += coef * model.alpha * ll[c] / T;
            // Table: dz/dlogit = (alpha/T) * (onehot - softmax) over positions.
            LMState s = init_state_model_class(model, mc);
            for (int tok : ex.tokens) {
                const auto ctx = context_index(model, s);
                const auto row = model.logit_row(mc, ctx);
                softmax_from_logits(row, probs);
                auto grow = std::span<double>(
                    g.d_logits.data() + (static_cast<std::int64_t>(mc) * model.n_contexts() + ctx) * np,
                    static_cast<std::size_t>(np));
                const double w = coef * exponent;
                for (int v = 0; v < np; ++v)
                    grow[static_cast<std::size_t>(v)] -= w * probs[static_cast<std::size_t>(v)];
                if (tok < np) grow[static_cast<std::size_t>(tok)] += w;
                advance_inplace(model, s, tok);
            }
        }
    }
    return out;
}

void add_bundle(GradientBundle& into, const GradientBundle& from) {
    for (std::size_t i = 0; i < into.d_logits.size(); ++i) into.d_logits[i] += from.d_logits[i];
    for (std::size_t i = 0; i < into.d_bias.size(); ++i) into.d_bias[i] += from.d_bias[i];
    into.d_log_alpha += from.d_log_alpha;
    into.loss_g += from.loss_g;
    into.loss_d += from.loss_d;
}

} // namespace

GradientBundle loss_gradients(const TabularCCLM& model, const TrainingBatch& batch,
                              double lambda, ExecMode exec) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidArgument("loss_gradients: lambda must be in [0,1]");
    check_batch(model, batch);
    const std::size_t n = batch.size();
    const double inv_n = 1.0 / static_cast<double>(n);
    const std::size_t n_blocks = reduction_block_count(n);

    const std::size_t n_bias = model.codes.bias.size();
    std::vector<GradientBundle> partials(n_blocks);
    parallel_for(exec, n_blocks, [&](std::size_t b) {
        auto& part = partials[b];
        part.d_logits.assign(model.logits.size(), 0.0);
        part.d_bias.assign(n_bias, 0.0);
        const auto range = reduction_block(n, b, n_blocks);
        for (std::size_t i = range.begin; i < range.end; ++i) {
            const auto losses = accumulate_example(model, batch[i], lambda, inv_n, part);
            part.loss_g += losses.g;
            part.loss_d += losses.d;
        }
    });

    GradientBundle g;
    g.d_logits.assign(model.logits.size(), 0.0);
    g.d_bias.assign(n_bias, 0.0);
    for (const auto& part : partials) add_bundle(g, part);
    g.loss_g *= inv_n;
    g.loss_d *= inv_n;
    g.loss_gd = lambda * g.loss_g + (1.0 - lambda) * g.loss_d;

    if (!std::isfinite(g.loss_gd) || !std::isfinite(g.d_log_alpha) ||
        !all_finite(g.d_logits) || !all_finite(g.d_bias))
        throw NumericError("loss_gradients: non-finite loss or gradient");
    return g;
}

BinarizedExample binarize_example(std::span<const int> tokens, int class_id,
                                  const ControlCodeSet& codes, Rng& rng) {
    const int C = codes.n_classes();
    if (C < 2) throw InvalidArgument("binarize_example: no false class available (single-class set)");
    if (class_id < 0 || class_id >= C) throw InvalidArgument("binarize_example: class id out of range");
    if (codes.name_token_ids.size() != static_cast<std::size_t>(C))
        throw InvalidArgument("binarize_example: code set carries no class-name tokens");

    BinarizedExample out;
    const bool true_pairing = rng.uniform01() < 0.5;
    if (true_pairing) {
        out.code = BinaryCode::True;
        out.name_class = class_id;
    } else {
        out.code = BinaryCode::False;
        auto other = static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(C - 1)));
        if (other >= class_id) ++other;
        out.name_class = other;
    }
    out.tokens.reserve(tokens.size() + 1);
    out.tokens.push_back(codes.name_token_ids[static_cast<std::size_t>(out.name_class)]);
    out.tokens.insert(out.tokens.end(), tokens.begin(), tokens.end());
    return out;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace {

struct AdamState {
    std::vector<double> m, v;
    long step = 0;
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;
};

void adam_update(AdamState& st, std::span<double> params, std::span<const double> grads, double lr) {
    st.step += 1;
    const double c1 = 1.0 - std::pow(AdamState::kBeta1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(AdamState::kBeta2, static_cast<double>(st.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        st.m[i] = AdamState::kBeta1 * st.m[i] + (1.0 - AdamState::kBeta1) * grads[i];
        st.v[i] = AdamState::kBeta2 * st.v[i] + (1.0 - AdamState::kBeta2) * grads[i] * grads[i];
        params[i] -= lr * (st.m[i] / c1) / (std::sqrt(st.v[i] / c2) + AdamState::kEps);
    }
}

TrainingBatch build_batch_view(const TabularCCLM& model,
                               const std::vector<LabeledSequence>& data,
                               const TrainConfig& config, Rng& rng) {
    TrainingBatch batch;
    batch.reserve(data.size());
    if (config.binarized) {
        if (!model.codes.binarized)
            throw InvalidArgument("train: binarized config requires a binarized model");
        for (const auto& seq : data) {
            auto bin = binarize_example(seq.tokens, seq.class_id, model.codes, rng);
            TrainingExample ex;
            ex.tokens = std::move(bin.tokens);
            ex.class_id = model.model_class(bin.code, bin.name_class);
            ex.paired_negative = model.model_class(
                bin.code == BinaryCode::True ? BinaryCode::False : BinaryCode::True, bin.name_class);
            batch.push_back(std::move(ex));
        }
    } else {
        if (model.codes.binarized)
            throw InvalidArgument("train: binarized models require config.binarized");
        for (const auto& seq : data) batch.push_back({seq.tokens, model.model_class(seq.class_id), -1});
    }
    return batch;
}

double validation_accuracy(const TabularCCLM& model, const std::vector<LabeledSequence>& val,
                           ExecMode exec) {
    if (val.empty() || model.codes.n_classes() < 2) return 0.0;
    std::vector<char> correct(val.size(), 0);
    parallel_for(exec, val.size(), [&](std::size_t i) {
        const auto& ex = val[i];
        int best = 0;
        double best_p = -1.0;
        if (model.codes.binarized) {
            for (int j = 0; j < model.codes.n_classes(); ++j) {
                std::vector<int> prefixed;
                prefixed.reserve(ex.tokens.size() + 1);
                prefixed.push_back(model.codes.name_token_ids[static_cast<std::size_t>(j)]);
                prefixed.insert(prefixed.end(), ex.tokens.begin(), ex.tokens.end());
                const auto post = class_posterior_pair(model, prefixed,
                                                       model.model_class(BinaryCode::True, j),
                                                       model.model_class(BinaryCode::False, j));
                if (post[0] > best_p) {
                    best_p = post[0];
                    best = j;
                }
            }
        } else {
            const auto post = class_posterior_offline(model, ex.tokens);
            for (int c = 0; c < static_cast<int>(post.size()); ++c)
                if (post[static_cast<std::size_t>(c)] > best_p) {
                    best_p = post[static_cast<std::size_t>(c)];
                    best = c;
                }
        }
        correct[i] = (best == ex.class_id) ? 1 : 0;
    });
    long n_correct = 0;
    for (char c : correct) n_correct += c;
    return static_cast<double>(n_correct) / static_cast<double>(val.size());
}

double validation_perplexity(const TabularCCLM& model, const std::vector<LabeledSequence>& val,
                             bool binarized, ExecMode exec) {
    if (val.empty()) return 0.0;
    // Conditional perplexity given the true class; binarized models condition
    // on the true pairing (code=true, the example's own class name).
    std::vector<double> nll(val.size());
    std::vector<long> count(val.size());
    parallel_for(exec, val.size(), [&](std::size_t i) {
        const auto& ex = val[i];
        if (binarized) {
            std::vector<int> prefixed;
            prefixed.reserve(ex.tokens.size() + 1);
            prefixed.push_back(model.codes.name_token_ids[static_cast<std::size_t>(ex.class_id)]);
            prefixed.insert(prefixed.end(), ex.tokens.begin(), ex.tokens.end());
            nll[i] = -sequence_logprob_model_class(
                model, model.model_class(BinaryCode::True, ex.class_id), prefixed);
            count[i] = static_cast<long>(prefixed.size());
        } else {
            nll[i] = -sequence_logprob_model_class(model, model.model_class(ex.class_id), ex.tokens);
            count[i] = static_cast<long>(ex.tokens.size());
        }
    });
    double total = 0.0;
    long tokens = 0;
    for (std::size_t i = 0; i < val.size(); ++i) {
        total += nll[i];
        tokens += count[i];
    }
    return std::exp(total / static_cast<double>(tokens));
}

} // namespace

TrainResult train(TabularCCLM& model, const std::vector<LabeledSequence>& train_data,
                  const std::vector<LabeledSequence>& val_data, const TrainConfig& config) {
    config.validate();
    if (train_data.empty()) throw InvalidArgument("train: corpus must be nonempty");

    Rng rng(config.seed);
    TrainingBatch all = build_batch_view(model, train_data, config, rng);

    const std::size_t n_params = model.logits.size() + 1 + model.codes.bias.size();
    AdamState adam;
    if (config.optimizer == TrainConfig::Optimizer::Adam) {
        adam.m.assign(n_params, 0.0);
        adam.v.assign(n_params, 0.0);
    }

    std::vector<std::size_t> order(all.size());
    std::iota(order.begin(), order.end(), 0);

    TrainResult result;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        // Deterministic per-epoch shuffle (identity when full-batch).
        if (config.batch_size > 0) {
            for (std::size_t i = order.size(); i > 1; --i) {
                const auto j = static_cast<std::size_t>(rng.uniform_below(i));
                std::swap(order[i - 1], order[j]);
            }
        }
        const std::size_t bs = (config.batch_size > 0) ? static_cast<std::size_t>(config.batch_size)
                                                       : all.size();
        EpochStats stats;
        for (std::size_t start = 0; start < all.size(); start += bs) {
            TrainingBatch batch;
            const std::size_t end = std::min(all.size(), start + bs);
            for (std::size_t i = start; i < end; ++i) batch.push_back(all[order[i]]);

            GradientBundle g;
            try {
                g = loss_gradients(model, batch, config.lambda, config.exec);
            } catch (const NumericError& e) {
                throw NumericError("train: diverged at epoch " + std::to_string(epoch) + ": " + e.what());
            }

            // Flattened parameter/gradient views: [logits..., log(alpha), bias...].
            std::vector<double> params(n_params), grads(n_params);
            std::copy(model.logits.begin(), model.logits.end(), params.begin());
            params[model.logits.size()] = std::log(model.alpha);
            std::copy(model.codes.bias.begin(), model.codes.bias.end(),
                      params.begin() + static_cast<std::ptrdiff_t>(model.logits.size()) + 1);
            std::copy(g.d_logits.begin(), g.d_logits.end(), grads.begin());
            grads[model.logits.size()] = g.d_log_alpha;
            if (config.learn_bias)
                std::copy(g.d_bias.begin(), g.d_bias.end(),
                          grads.begin() + static_cast<std::ptrdiff_t>(model.logits.size()) + 1);
            // else: biases stay fixed (their gradient slots are zero)

            if (config.optimizer == TrainConfig::Optimizer::Adam) {
                adam_update(adam, params, grads, config.lr);
            } else {
                for (std::size_t i = 0; i < n_params; ++i) params[i] -= config.lr * grads[i];
            }

            std::copy(params.begin(), params.begin() + static_cast<std::ptrdiff_t>(model.logits.size()),
                      model.logits.begin());
            model.alpha = std::exp(params[model.logits.size()]);
            std::copy(params.begin() + static_cast<std::ptrdiff_t>(model.logits.size()) + 1, params.end(),
                      model.codes.bias.begin());
            if (!std::isfinite(model.alpha) || !(model.alpha > 0.0))
                throw NumericError("train: diverged at epoch " + std::to_string(epoch) +
                                   ": alpha left the positive range");
        }

        const auto [lgd, lg, ld] = hybrid_loss(model, all, config.lambda);
        stats.loss_g = lg;
        stats.loss_d = ld;
        stats.loss_gd = lgd;
        stats.val_accuracy = validation_accuracy(model, val_data, config.exec);
        stats.val_perplexity = validation_perplexity(model, val_data, config.binarized, config.exec);
        result.history.push_back(stats);
    }
    return result;
}

} // namespace gedi
