// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "gedi/decode.hpp"
#include "gedi/synth.hpp"
#include "gedi/train.hpp"

namespace gedi {

struct Classification {
    int class_id = 0;
    double posterior = 0.0;
};

/// Generative classification via the offline class posterior; ties break to
/// the lowest class id. Binarized classifiers score P(true | name_j + tokens)
/// for every task class j and take the argmax over j.
Classification classify(const TabularCCLM& classifier, std::span<const int> tokens);

/// Same decision rule under the exact source parameters.
Classification classify_oracle(const SourceSpec& spec, std::span<const int> tokens);

using Classifier = std::function<Classification(std::span<const int>)>;

struct FidelityReport {
    std::vector<double> per_class;  // fidelity among generations with that control class
    std::vector<int> per_class_n;
    double overall = 0.0;
    int n = 0;
    std::string classifier_id;
};

/// A generation to score: the control class it was asked for and the tokens
/// handed to the classifier.
struct ControlledSample {
    int control_class = 0;
    std::vector<int> tokens;
};

/// Fraction of generations whose predicted label matches their control code.
/// Classification runs per sample (parallelizable); aggregation order is
/// fixed, so reports are deterministic and permutation-consistent.
FidelityReport label_fidelity(const std::vector<ControlledSample>& generations,
                              const Classifier& classifier,
                              const std::string& classifier_id,
                              int n_classes,
                              ExecMode exec = default_exec_mode());

/// exp of the token-count-weighted mean negative log-likelihood, conditioning
/// on each sequence's true class.
double conditional_perplexity(const TabularCCLM& model,
                              const std::vector<LabeledSequence>& corpus,
                              ExecMode exec = default_exec_mode());

struct CostReport {
    long tokens = 0;
    long base_passes = 0;
    long guide_passes = 0;
    long prompt_base_passes = 0;
    long prompt_guide_passes = 0;
    int contrast_size = 0;
    double seconds_per_token = 0.0;
};

/// Aggregate pass counts over one run's step traces and enforce the cost
/// invariant: per generated token, exactly one base evaluation and
/// |contrast set| guide evaluations. Violations raise DataError.
CostReport audit_cost(const std::vector<StepTrace>& traces, int contrast_size,
                      long prompt_base_passes = 0, long prompt_guide_passes = 0,
                      double elapsed_seconds = 0.0);

struct SweepConfig {
    TrainConfig train;              // lambda is overwritten per sweep point
    int guide_order = 0;
    TrainConfig classifier_train;   // split-B classifier
    int classifier_order = 0;
    int generations_per_class = 50;
    int prompt_len = 4;
    GenerationConfig generation;    // used for direct generation (mode Direct)
    ExecMode exec = default_exec_mode();
};

struct SweepRow {
    double lambda = 0.0;
    double accuracy = 0.0;
    double fidelity = 0.0;
    double perplexity = 0.0;
};

/// Per lambda: train a guide on split A, score held-out accuracy and
/// conditional perplexity on the validation split, and score label fidelity
/// of direct generations (validation prompts, both halves of the prompt
/// handed to the classifier) with a split-B-trained CC-LM classifier.
std::vector<SweepRow> lambda_sweep(const LabeledCorpus& corpus,
                                   std::span<const double> lambdas,
                                   const SweepConfig& config);

/// Structured text record emitters (format documented in the README).
void write_fidelity_report(std::ostream& os, const FidelityReport& report);
void write_cost_report(std::ostream& os, const CostReport& report);
void write_sweep_table(std::ostream& os, const std::vector<SweepRow>& rows,
                       const std::string& provenance);

} // namespace gedi
