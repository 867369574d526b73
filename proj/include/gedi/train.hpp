// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <tuple>
#include <vector>

#include "gedi/cclm.hpp"
#include "gedi/parallel.hpp"
#include "gedi/rng.hpp"

namespace gedi {

struct TrainConfig {
    double lambda = 0.5;          // in [0,1]; 1 = pure generative
    double lr = 0.1;              // > 0
    int epochs = 50;
    int batch_size = 0;           // 0 = full batch
    std::uint64_t seed = 0;
    enum class Optimizer { Adam, Sgd } optimizer = Optimizer::Adam;
    bool learn_bias = false;      // off when classes are balanced
    bool binarized = false;
    ExecMode exec = default_exec_mode();

    void validate() const;
};

/// One training sequence. `class_id` is a model-class row; binarized examples
/// carry the paired incorrect row for the two-way posterior.
struct TrainingExample {
    std::vector<int> tokens;
    int class_id = 0;
    int paired_negative = -1;
};

using TrainingBatch = std::vector<TrainingExample>;

/// Gradients for every parameter plus the scalar losses they came from.
/// d_log_alpha is the gradient through the positive reparameterization
/// alpha = exp(a).
struct GradientBundle {
    std::vector<double> d_logits;    // same layout as TabularCCLM::logits
    double d_log_alpha = 0.0;
    std::vector<double> d_bias;      // per model bias entry
    double loss_g = 0.0;
    double loss_d = 0.0;
    double loss_gd = 0.0;
};

/// Average per-token negative log-likelihood:
/// -(1/N) sum_i (1/T_i) sum_t log P(x_t | x_<t, c_i).
double generative_loss(const TabularCCLM& model, const TrainingBatch& batch);

/// Offline class posterior with exponent alpha/T and prior biases, normalized
/// over all C classes of a standard model. Sums to 1 within 1e-12.
std::vector<double> class_posterior_offline(const TabularCCLM& model,
                                            std::span<const int> tokens,
                                            std::optional<double> alpha_override = {});

/// Same posterior over an explicit pair of model-class rows (the binarized
/// {true,false} contrast). Returns {P(first), P(second)}.
std::vector<double> class_posterior_pair(const TabularCCLM& model,
                                         std::span<const int> tokens,
                                         int model_class_a, int model_class_b,
                                         std::optional<double> alpha_override = {});

/// -(1/N) sum_i log posterior of the true class (pair posterior for examples
/// carrying a paired negative, full C-way otherwise).
double discriminative_loss(const TabularCCLM& model, const TrainingBatch& batch);

/// L_gd = lambda*L_g + (1-lambda)*L_d. Returns (L_gd, L_g, L_d).
std::tuple<double, double, double> hybrid_loss(const TabularCCLM& model,
                                               const TrainingBatch& batch,
                                               double lambda);

/// Exact analytic gradients of the hybrid loss for every logit cell, the
/// alpha reparameterization and each bias. Accumulation over the batch runs
/// per example on a fixed block grid with a deterministic fold, so Serial
/// and Parallel modes agree bitwise.
GradientBundle loss_gradients(const TabularCCLM& model, const TrainingBatch& batch,
                              double lambda, ExecMode exec = default_exec_mode());

struct BinarizedExample {
    BinaryCode code = BinaryCode::True; // the classification label
    int name_class = 0;                 // task class whose name token was prepended
    std::vector<int> tokens;            // [name token] + original tokens
};

/// Binarize one example: with probability 1/2 a true pairing (the example's
/// own class name), otherwise a false pairing with a class name drawn
/// uniformly from the other classes. The name token is prepended.
/// InvalidArgument when the code set has a single class.
BinarizedExample binarize_example(std::span<const int> tokens, int class_id,
                                  const ControlCodeSet& codes, Rng& rng);

struct EpochStats {
    double loss_g = 0.0;
    double loss_d = 0.0;
    double loss_gd = 0.0;
    double val_accuracy = 0.0;
    double val_perplexity = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> history;
};

/// Labeled sequence as fed to training (before any binarization).
struct LabeledSequence {
    std::vector<int> tokens;
    int class_id = 0;
};

/// Full training loop: builds the (possibly binarized) batch view of the
/// data, runs the chosen optimizer for config.epochs epochs, and records
/// per-epoch losses plus held-out accuracy and conditional perplexity.
/// Deterministic per seed; alpha stays positive through exp-reparameterized
/// updates; non-finite losses abort with a NumericError diagnostic.
TrainResult train(TabularCCLM& model,
                  const std::vector<LabeledSequence>& train_data,
                  const std::vector<LabeledSequence>& val_data,
                  const TrainConfig& config);

} // namespace gedi
