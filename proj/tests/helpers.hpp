// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "gedi/cclm.hpp"
#include "gedi/numeric.hpp"
#include "gedi/synth.hpp"

namespace gedi::testing {

/// Exact S1 model: P(A|class0)=0.8 mirrored, order 0, no EOS mass.
inline TabularCCLM s1_model() { return model_from_source(make_s1()); }

/// Single-class model with an explicit distribution over content+EOS.
inline TabularCCLM single_class_model(const Vocab& vocab, std::vector<double> row_probs) {
    SourceSpec spec;
    spec.name = "toy";
    spec.vocab = vocab;
    spec.class_names = {"only"};
    spec.order = 0;
    spec.length = {1, 4, 0.0};
    spec.probs = std::move(row_probs);
    spec.validate();
    return model_from_source(spec);
}

/// Order-0 model with one explicit distribution per class.
inline TabularCCLM multi_class_model(const Vocab& vocab,
                                     std::vector<std::string> class_names,
                                     std::vector<double> probs) {
    SourceSpec spec;
    spec.name = "toy";
    spec.vocab = vocab;
    spec.class_names = std::move(class_names);
    spec.order = 0;
    spec.length = {1, 4, 0.0};
    spec.probs = std::move(probs);
    spec.validate();
    return model_from_source(spec);
}

/// Uniform model over n content tokens (zero EOS mass), one or more classes.
inline TabularCCLM uniform_model(int n_content, int n_classes = 1) {
    std::vector<std::string> names;
    for (int i = 0; i < n_content; ++i) names.push_back("u" + std::to_string(i));
    Vocab v = Vocab::make(std::move(names));
    std::vector<std::string> classes;
    for (int c = 0; c < n_classes; ++c) classes.push_back("class" + std::to_string(c));
    std::vector<double> probs;
    for (int c = 0; c < n_classes; ++c) {
        for (int i = 0; i < n_content; ++i) probs.push_back(1.0 / n_content);
        probs.push_back(0.0); // EOS
    }
    if (n_classes == 1) return single_class_model(v, probs);
    return multi_class_model(v, classes, probs);
}

/// Brute-force Eq.-5 posterior: full-sequence likelihoods via
/// sequence_logprob for prefix+candidate, exponent alpha/t, biases, softmax.
/// Independent of the incremental path under test.
inline std::vector<double> brute_posterior_matrix(const TabularCCLM& guide,
                                                  std::span<const int> prefix,
                                                  std::span<const int> contrast_classes,
                                                  std::span<const double> biases,
                                                  double alpha) {
    const int n_vocab = guide.vocab.size();
    const int nc = static_cast<int>(contrast_classes.size());
    const double t = static_cast<double>(prefix.size()) + 1.0;
    std::vector<double> out(static_cast<std::size_t>(n_vocab) * static_cast<std::size_t>(nc));
    std::vector<int> seq(prefix.begin(), prefix.end());
    seq.push_back(0);
    for (int v = 0; v < n_vocab; ++v) {
        seq.back() = v;
        std::vector<double> z(static_cast<std::size_t>(nc));
        for (int c = 0; c < nc; ++c) {
            const double ll = sequence_logprob_model_class(
                guide, contrast_classes[static_cast<std::size_t>(c)], seq);
            z[static_cast<std::size_t>(c)] =
                (biases.empty() ? 0.0 : biases[static_cast<std::size_t>(c)]) + (alpha / t) * ll;
        }
        softmax_from_logits(z, std::span<double>(out.data() + static_cast<std::size_t>(v) * nc,
                                                 static_cast<std::size_t>(nc)));
    }
    return out;
}

/// All token sequences over the content alphabet with length in [1, max_len].
inline std::vector<std::vector<int>> all_sequences(int n_content, int max_len) {
    std::vector<std::vector<int>> out;
    std::vector<std::vector<int>> frontier = {{}};
    for (int len = 1; len <= max_len; ++len) {
        std::vector<std::vector<int>> next;
        for (const auto& s : frontier) {
            for (int v = 0; v < n_content; ++v) {
                auto e = s;
                e.push_back(v);
                out.push_back(e);
                next.push_back(std::move(e));
            }
        }
        frontier = std::move(next);
    }
    return out;
}

} // namespace gedi::testing
