// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gedi/cclm.hpp"
#include "gedi/parallel.hpp"

namespace gedi {

/// Sequence-length law: uniform on [min_len, max_len] when stop_p = 0,
/// otherwise min_len plus a geometric tail (stop with probability stop_p per
/// extra token) truncated at max_len.
struct LengthDist {
    int min_len = 8;
    int max_len = 16;
    double stop_p = 0.0;
};

/// A synthetic class-labeled source with exact per-class order-k conditional
/// token probabilities, so exact Bayes oracles exist for everything sampled
/// from it.
struct SourceSpec {
    std::string name;
    Vocab vocab;
    std::vector<std::string> class_names;
    int order = 0;
    LengthDist length;
    std::uint64_t seed = 0;        // seed that generated randomized parameters
    std::vector<double> probs;     // [C][n_contexts][n_predicted], rows sum to 1

    int n_classes() const { return static_cast<int>(class_names.size()); }
    std::int64_t n_contexts() const;
    double prob(int class_id, std::int64_t ctx, int col) const;

    void validate() const;
    std::uint64_t hash() const;    // FNV-1a over the canonical serialization
};

/// Canonical two-token source: classes class0/class1, order 0,
/// P(A|class0) = 0.8 mirrored, lengths uniform on [8,16].
SourceSpec make_s1();

/// Harder source for multi-class and binarized runs: 4 classes, 8 content
/// tokens plus 4 class-name tokens (never emitted by the source), order 1,
/// per-class transition rows drawn Dirichlet(1) from the seed.
SourceSpec make_s2(std::uint64_t seed);

/// Exact CC-LM with the source's probabilities (logit = ln p, -inf at zero
/// mass; unreachable context rows are uniform). alpha = 1, biases 0.
TabularCCLM model_from_source(const SourceSpec& spec);

enum class Split : int { None = 0, A = 1, B = 2, Validation = 3 };

std::string split_tag(Split s);
Split split_from_tag(const std::string& tag);

struct LabeledExample {
    std::vector<int> tokens;
    int class_id = 0;
    Split split = Split::None;
};

struct LabeledCorpus {
    Vocab vocab;
    std::vector<std::string> class_names;
    std::vector<LabeledExample> items;
    std::string source_name;
    std::uint64_t source_hash = 0;
    std::uint64_t seed = 0;

    std::vector<LabeledExample> of_split(Split s) const;
};

/// n sequences with uniformly drawn classes. Each sequence uses an
/// independent child RNG stream derived from the master seed, so sampling is
/// reproducible, order-independent and parallelizable.
LabeledCorpus sample_corpus(const SourceSpec& spec, int n, std::uint64_t seed,
                            ExecMode exec = default_exec_mode());

/// Exact Bayes class posterior of a token sequence under the source (uniform
/// prior, no length normalization). Empty input returns the prior.
std::vector<double> oracle_posterior(const SourceSpec& spec, std::span<const int> tokens);

/// Class-stratified split into validation (10%) and equal halves A and B.
/// Deterministic per seed; corpora smaller than 3 are rejected.
void half_split(LabeledCorpus& corpus, std::uint64_t seed);

/// Corpus file io: line-delimited text, one sequence per line as
/// "<split-tag> <class-name> <token names...>", preceded by a versioned
/// header carrying vocab, class names and provenance. Round-trips exactly.
void save_corpus(const std::string& path, const LabeledCorpus& corpus);
LabeledCorpus load_corpus(const std::string& path);

/// SourceSpec io: human-readable parameter file with a format-version tag.
/// Probabilities print with 17 significant digits and round-trip exactly.
void save_source(const std::string& path, const SourceSpec& spec);
SourceSpec load_source(const std::string& path);

} // namespace gedi
