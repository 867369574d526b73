// SPDX-License-Identifier: Apache-2.0

// Times the OpenMP kernels against their serial reference paths on a
// scaled-up instance: corpus sampling, batch gradient accumulation, batch
// classification, and batch guided generation. Both paths produce identical
// results (see tests/test_parallel.cpp); this target reports the speed.

#include <chrono>
#include <cstdio>
#include <string>
#include <vector>

#include "gedi/eval.hpp"
#include "gedi/rng.hpp"

using namespace gedi;

namespace {

#ifdef _OPENMP
constexpr bool kHaveOpenMp = true;
#else
constexpr bool kHaveOpenMp = false;
#endif

template <typename F>
double time_ms(F&& fn, int repeats = 3) {
    double best = 1e300;
    for (int r = 0; r < repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto dt = std::chrono::duration<double, std::milli>(
                            std::chrono::steady_clock::now() - t0)
                            .count();
        if (dt < best) best = dt;
    }
    return best;
}

void report(const char* name, double serial_ms, double parallel_ms) {
    std::printf("%-28s %10.2f ms %10.2f ms %8.2fx\n", name, serial_ms, parallel_ms,
                serial_ms / parallel_ms);
}

SourceSpec big_source(std::uint64_t seed) {
    SourceSpec s;
    s.name = "bench";
    std::vector<std::string> content;
    for (int i = 0; i < 64; ++i) content.push_back("w" + std::to_string(i));
    s.vocab = Vocab::make(std::move(content));
    s.class_names = {"c0", "c1", "c2", "c3"};
    s.order = 1;
    s.length = {24, 48, 0.0};
    s.seed = seed;
    Rng rng(seed);
    const auto n_ctx = s.n_contexts();
    const int np = s.vocab.n_predicted();
    s.probs.assign(static_cast<std::size_t>(4 * n_ctx * np), 0.0);
    for (int c = 0; c < 4; ++c)
        for (std::int64_t ctx = 0; ctx < n_ctx; ++ctx) {
            double total = 0.0;
            std::vector<double> row(64);
            for (auto& x : row) {
                x = -std::log(rng.uniform01() + 1e-12);
                total += x;
            }
            const auto off = static_cast<std::size_t>((c * n_ctx + ctx) * np);
            for (int v = 0; v < 64; ++v) s.probs[off + static_cast<std::size_t>(v)] = row[static_cast<std::size_t>(v)] / total;
        }
    s.validate();
    return s;
}

} // namespace

int main() {
    std::printf("kernel benchmark (OpenMP %s)\n", kHaveOpenMp ? "enabled" : "disabled");
    std::printf("%-28s %13s %13s %9s\n", "kernel", "serial", "parallel", "speedup");

    const auto spec = big_source(7);
    const int n_corpus = 20000;

    LabeledCorpus corpus;
    report("sample_corpus (20k seqs)",
           time_ms([&] { corpus = sample_corpus(spec, n_corpus, 11, ExecMode::Serial); }),
           time_ms([&] { corpus = sample_corpus(spec, n_corpus, 11, ExecMode::Parallel); }));

    const auto model = model_from_source(spec);
    TrainingBatch batch;
    for (int i = 0; i < 4000; ++i) {
        const auto& e = corpus.items[static_cast<std::size_t>(i)];
        batch.push_back({e.tokens, e.class_id, -1});
    }
    report("loss_gradients (4k seqs)",
           time_ms([&] { loss_gradients(model, batch, 0.5, ExecMode::Serial); }),
           time_ms([&] { loss_gradients(model, batch, 0.5, ExecMode::Parallel); }));

    std::vector<LabeledSequence> data;
    std::vector<ControlledSample> samples;
    for (const auto& e : corpus.items) {
        data.push_back({e.tokens, e.class_id});
        samples.push_back({e.class_id, e.tokens});
    }
    const Classifier clf = [&](std::span<const int> tokens) { return classify(model, tokens); };
    report("classify (20k seqs)",
           time_ms([&] { label_fidelity(samples, clf, "bench", 4, ExecMode::Serial); }),
           time_ms([&] { label_fidelity(samples, clf, "bench", 4, ExecMode::Parallel); }));

    report("perplexity (20k seqs)",
           time_ms([&] { conditional_perplexity(model, data, ExecMode::Serial); }),
           time_ms([&] { conditional_perplexity(model, data, ExecMode::Parallel); }));

    // Batch guided generation: per-generation parallelism as used by the
    // evaluation harness.
    SourceSpec mix = spec;
    mix.class_names = {"mix"};
    mix.probs.resize(mix.probs.size() / 4);
    {
        // average the four class tables into one unconditional base
        const auto n_ctx = spec.n_contexts();
        const int np = spec.vocab.n_predicted();
        for (std::int64_t ctx = 0; ctx < n_ctx; ++ctx)
            for (int v = 0; v < np; ++v) {
                double m = 0.0;
                for (int c = 0; c < 4; ++c) m += spec.prob(c, ctx, v);
                mix.probs[static_cast<std::size_t>(ctx * np + v)] = m / 4.0;
            }
    }
    mix.validate();
    const auto base = model_from_source(mix);
    GenerationConfig gen;
    gen.max_new_tokens = 32;
    const int n_gens = 500;
    auto generate_all = [&](ExecMode exec) {
        std::vector<std::size_t> lens(static_cast<std::size_t>(n_gens));
        parallel_for(exec, static_cast<std::size_t>(n_gens), [&](std::size_t i) {
            const auto& prompt = corpus.items[i].tokens;
            std::span<const int> p(prompt.data(), std::min<std::size_t>(prompt.size(), 8));
            const auto r = gedi_generate(base, model, static_cast<int>(i % 4), p, gen);
            lens[i] = r.tokens.size();
        });
    };
    report("gedi_generate (500 x 32 tok)", time_ms([&] { generate_all(ExecMode::Serial); }),
           time_ms([&] { generate_all(ExecMode::Parallel); }));
    return 0;
}
