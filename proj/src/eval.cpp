// SPDX-License-Identifier: Apache-2.0

#include "gedi/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "gedi/numeric.hpp"

namespace gedi {

namespace {

Classification argmax_class(std::span<const double> posterior) {
    Classification out;
    out.class_id = 0;
    out.posterior = posterior[0];
    for (int c = 1; c < static_cast<int>(posterior.size()); ++c) {
        const double p = posterior[static_cast<std::size_t>(c)];
        if (p > out.posterior) { // strict: ties break to the lowest class id
            out.posterior = p;
            out.class_id = c;
        }
    }
    return out;
}

std::string fmt17(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

} // namespace

Classification classify(const TabularCCLM& classifier, std::span<const int> tokens) {
    if (tokens.empty()) throw InvalidArgument("classify: token sequence must be nonempty");
    if (classifier.codes.binarized) {
        // Score P(true | <name_j> + tokens) for every task class and take the
        // argmax over classes.
        Classification best;
        best.class_id = -1;
        for (int j = 0; j < classifier.codes.n_classes(); ++j) {
            std::vector<int> prefixed;
            prefixed.reserve(tokens.size() + 1);
            prefixed.push_back(classifier.codes.name_token_ids[static_cast<std::size_t>(j)]);
            prefixed.insert(prefixed.end(), tokens.begin(), tokens.end());
            const auto post = class_posterior_pair(classifier, prefixed,
                                                   classifier.model_class(BinaryCode::True, j),
                                                   classifier.model_class(BinaryCode::False, j));
            if (best.class_id < 0 || post[0] > best.posterior) {
                best.class_id = j;
                best.posterior = post[0];
            }
        }
        return best;
    }
    if (classifier.codes.n_classes() < 2)
        throw InvalidArgument("classify: classifier needs at least two classes");
    return argmax_class(class_posterior_offline(classifier, tokens));
}

Classification classify_oracle(const SourceSpec& spec, std::span<const int> tokens) {
    if (tokens.empty()) throw InvalidArgument("classify_oracle: token sequence must be nonempty");
    return argmax_class(oracle_posterior(spec, tokens));
}

FidelityReport label_fidelity(const std::vector<ControlledSample>& generations,
                              const Classifier& classifier, const std::string& classifier_id,
                              int n_classes, ExecMode exec) {
    if (generations.empty()) throw InvalidArgument("label_fidelity: no generations to score");
    if (n_classes < 1) throw InvalidArgument("label_fidelity: bad class count");

    std::vector<int> predicted(generations.size());
    parallel_for(exec, generations.size(), [&](std::size_t i) {
        predicted[i] = classifier(generations[i].tokens).class_id;
    });

    FidelityReport report;
    report.classifier_id = classifier_id;
    report.n = static_cast<int>(generations.size());
    report.per_class.assign(static_cast<std::size_t>(n_classes), 0.0);
    report.per_class_n.assign(static_cast<std::size_t>(n_classes), 0);
    std::vector<int> matches(static_cast<std::size_t>(n_classes), 0);
    int total_matches = 0;
    for (std::size_t i = 0; i < generations.size(); ++i) {
        const int control = generations[i].control_class;
        if (control < 0 || control >= n_classes)
            throw InvalidArgument("label_fidelity: control class out of range");
        report.per_class_n[static_cast<std::size_t>(control)] += 1;
        if (predicted[i] == control) {
            matches[static_cast<std::size_t>(control)] += 1;
            total_matches += 1;
        }
    }
    for (int c = 0; c < n_classes; ++c) {
        const int nc = report.per_class_n[static_cast<std::size_t>(c)];
        report.per_class[static_cast<std::size_t>(c)] =
            nc > 0 ? static_cast<double>(matches[static_cast<std::size_t>(c)]) / nc : 0.0;
    }
    report.overall = static_cast<double>(total_matches) / static_cast<double>(report.n);
    return report;
}

double conditional_perplexity(const TabularCCLM& model, const std::vector<LabeledSequence>& corpus,
                              ExecMode exec) {
    if (corpus.empty()) throw InvalidArgument("conditional_perplexity: corpus must be nonempty");
    std::vector<double> nll(corpus.size());
    std::vector<long> counts(corpus.size());
    parallel_for(exec, corpus.size(), [&](std::size_t i) {
        nll[i] = -sequence_logprob(model, corpus[i].class_id, corpus[i].tokens);
        counts[i] = static_cast<long>(corpus[i].tokens.size());
    });
    double total = 0.0;
    long tokens = 0;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        total += nll[i];
        tokens += counts[i];
    }
    return std::exp(total / static_cast<double>(tokens));
}

CostReport audit_cost(const std::vector<StepTrace>& traces, int contrast_size,
                      long prompt_base_passes, long prompt_guide_passes, double elapsed_seconds) {
    if (contrast_size < 2) throw InvalidArgument("audit_cost: contrast size must be >= 2");
    CostReport report;
    report.contrast_size = contrast_size;
    report.prompt_base_passes = prompt_base_passes;
    report.prompt_guide_passes = prompt_guide_passes;
    for (std::size_t i = 0; i < traces.size(); ++i) {
        const auto& tr = traces[i];
        if (tr.base_passes != 1)
            throw DataError("audit_cost: step " + std::to_string(i) + " used " +
                            std::to_string(tr.base_passes) + " base passes (expected 1)");
        if (tr.guide_passes != contrast_size)
            throw DataError("audit_cost: step " + std::to_string(i) + " used " +
                            std::to_string(tr.guide_passes) + " guide passes (expected " +
                            std::to_string(contrast_size) + ")");
        report.tokens += 1;
        report.base_passes += tr.base_passes;
        report.guide_passes += tr.guide_passes;
    }
    if (report.guide_passes != report.tokens * contrast_size)
        throw DataError("audit_cost: aggregate guide passes violate the per-token invariant");
    if (report.tokens > 0 && elapsed_seconds > 0.0)
        report.seconds_per_token = elapsed_seconds / static_cast<double>(report.tokens);
    return report;
}

// ---------------------------------------------------------------------------
// Lambda sweep
// ---------------------------------------------------------------------------

namespace {

std::vector<LabeledSequence> to_sequences(const std::vector<LabeledExample>& items) {
    std::vector<LabeledSequence> out;
    out.reserve(items.size());
    for (const auto& e : items) out.push_back({e.tokens, e.class_id});
    return out;
}

} // namespace

std::vector<SweepRow> lambda_sweep(const LabeledCorpus& corpus, std::span<const double> lambdas,
                                   const SweepConfig& config) {
    for (double l : lambdas)
        if (!(l >= 0.0 && l <= 1.0)) throw InvalidArgument("lambda_sweep: lambda values must be in [0,1]");
    const auto split_a = to_sequences(corpus.of_split(Split::A));
    const auto split_b = to_sequences(corpus.of_split(Split::B));
    const auto validation = to_sequences(corpus.of_split(Split::Validation));
    if (split_a.empty() || split_b.empty() || validation.empty())
        throw DataError("lambda_sweep: corpus must carry A/B/validation split tags (run half_split)");
    const int C = static_cast<int>(corpus.class_names.size());
    if (C < 2) throw InvalidArgument("lambda_sweep: needs at least two classes");

    // External classifier on split B, shared across sweep points.
    TabularCCLM classifier =
        tabular_init(corpus.vocab, config.classifier_order,
                     ControlCodeSet::standard(corpus.class_names), InitScheme::Zeros, 0);
    {
        TrainConfig cc = config.classifier_train;
        cc.binarized = false;
        cc.exec = config.exec;
        train(classifier, split_b, validation, cc);
    }
    const Classifier clf = [&classifier](std::span<const int> tokens) {
        return classify(classifier, tokens);
    };

    std::vector<SweepRow> rows;
    for (double lambda : lambdas) {
        TabularCCLM guide = tabular_init(corpus.vocab, config.guide_order,
                                         ControlCodeSet::standard(corpus.class_names),
                                         InitScheme::Zeros, 0);
        TrainConfig tc = config.train;
        tc.lambda = lambda;
        tc.binarized = false;
        tc.exec = config.exec;
        const auto history = train(guide, split_a, validation, tc);

        SweepRow row;
        row.lambda = lambda;
        row.accuracy = history.history.empty() ? 0.0 : history.history.back().val_accuracy;
        row.perplexity = conditional_perplexity(guide, validation, config.exec);

        // Label fidelity of direct generation: prompts from validation
        // sequences regardless of their class, each control class generated
        // per prompt, prompt + generation handed to the classifier.
        GenerationConfig gen = config.generation;
        gen.mode = GenerationConfig::Mode::Direct;
        std::vector<ControlledSample> samples;
        const int n_prompts = std::min<int>(config.generations_per_class,
                                            static_cast<int>(validation.size()));
        samples.resize(static_cast<std::size_t>(n_prompts) * static_cast<std::size_t>(C));
        parallel_for(config.exec, samples.size(), [&](std::size_t s) {
            const int p = static_cast<int>(s) / C;
            const int cls = static_cast<int>(s) % C;
            const auto& src = validation[static_cast<std::size_t>(p)].tokens;
            std::vector<int> prompt(src.begin(),
                                    src.begin() + std::min<std::size_t>(src.size(),
                                                                        static_cast<std::size_t>(config.prompt_len)));
            auto tokens = direct_generate(guide, cls, prompt, gen);
            ControlledSample sample;
            sample.control_class = cls;
            sample.tokens = prompt;
            sample.tokens.insert(sample.tokens.end(), tokens.begin(), tokens.end());
            samples[s] = std::move(sample);
        });
        row.fidelity = label_fidelity(samples, clf, "cclm(split-B)", C, config.exec).overall;
        rows.push_back(row);
    }
    return rows;
}

void write_fidelity_report(std::ostream& os, const FidelityReport& report) {
    os << "# gedi-report v1\n";
    os << "metric: label-fidelity\n";
    os << "classifier: " << report.classifier_id << "\n";
    os << "samples: " << report.n << "\n";
    os << "overall: " << fmt17(report.overall) << "\n";
    for (std::size_t c = 0; c < report.per_class.size(); ++c)
        os << "class " << c << ": " << fmt17(report.per_class[c]) << " (n=" << report.per_class_n[c]
           << ")\n";
}

void write_cost_report(std::ostream& os, const CostReport& report) {
    os << "# gedi-report v1\n";
    os << "metric: generation-cost\n";
    os << "tokens: " << report.tokens << "\n";
    os << "contrast-size: " << report.contrast_size << "\n";
    os << "base-passes: " << report.base_passes << "\n";
    os << "guide-passes: " << report.guide_passes << "\n";
    os << "prompt-base-passes: " << report.prompt_base_passes << "\n";
    os << "prompt-guide-passes: " << report.prompt_guide_passes << "\n";
    os << "seconds-per-token: " << fmt17(report.seconds_per_token) << "\n";
}

void write_sweep_table(std::ostream& os, const std::vector<SweepRow>& rows,
                       const std::string& provenance) {
    os << "# gedi-sweep v1\n";
    if (!provenance.empty()) os << "# " << provenance << "\n";
    os << "lambda\taccuracy\tfidelity\tperplexity\n";
    for (const auto& r : rows)
        os << fmt17(r.lambda) << '\t' << fmt17(r.accuracy) << '\t' << fmt17(r.fidelity) << '\t'
           << fmt17(r.perplexity) << "\n";
}

} // namespace gedi
