// SPDX-License-Identifier: Apache-2.0

// Acceptance suite: one test case per criterion, each printing a single
// [PASS]/[FAIL] line with its wall time. Everything is pinned: seeds,
// training budgets, tolerances.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <unistd.h>

#include "gedi/eval.hpp"
#include "helpers.hpp"

using namespace gedi;
using namespace gedi::testing;
namespace fs = std::filesystem;

namespace {

struct Criterion {
    const char* name;
    double budget_seconds;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    bool ok = true;

    Criterion(const char* n, double budget) : name(n), budget_seconds(budget) {}

    void check(bool condition, const char* what) {
        ok = ok && condition;
        CHECK_MESSAGE(condition, std::string(what));
    }

    ~Criterion() {
        const double dt =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_budget = dt < budget_seconds;
        CHECK_MESSAGE(in_budget, name << " exceeded its runtime budget");
        std::printf("[%s] %s (%.2f s, budget %.0f s)\n", (ok && in_budget) ? "PASS" : "FAIL", name,
                    dt, budget_seconds);
        std::fflush(stdout);
    }
};

std::vector<LabeledSequence> split_sequences(const LabeledCorpus& corpus,
                                             std::initializer_list<Split> splits) {
    std::vector<LabeledSequence> out;
    for (const auto& e : corpus.items)
        for (Split s : splits)
            if (e.split == s) {
                out.push_back({e.tokens, e.class_id});
                break;
            }
    return out;
}

} // namespace

TEST_CASE("criterion 1: Bayes-oracle equivalence of the online posterior") {
    Criterion crit("criterion 1: Bayes-oracle equivalence", 5.0);
    const auto vocab = Vocab::make({"x", "y", "z"});
    for (int n_classes : {2, 3}) {
        std::vector<std::string> classes;
        for (int c = 0; c < n_classes; ++c) classes.push_back("c" + std::to_string(c));
        auto guide = tabular_init(vocab, 1, ControlCodeSet::standard(classes), InitScheme::Noise,
                                  50 + n_classes, 1.1);
        guide.alpha = 1.6;
        for (int c = 0; c < n_classes; ++c) guide.codes.bias[static_cast<std::size_t>(c)] = 0.1 * c;

        std::vector<int> contrast(static_cast<std::size_t>(n_classes));
        std::iota(contrast.begin(), contrast.end(), 0);

        auto sequences = all_sequences(3, 4);
        sequences.push_back({}); // the empty prefix
        double worst = 0.0;
        for (const auto& prefix : sequences) {
            auto gstate = init_guide(guide, 0);
            for (int tok : prefix) guide_consume(guide, gstate, tok);
            const auto got = candidate_class_posteriors(guide, gstate);
            const auto want =
                brute_posterior_matrix(guide, prefix, contrast, guide.codes.bias, guide.alpha);
            for (std::size_t i = 0; i < want.size(); ++i)
                worst = std::max(worst, std::abs(got[i] - want[i]));
        }
        crit.check(worst < 1e-9, "incremental posterior must match brute force within 1e-9");
    }
}

TEST_CASE("criterion 2: analytic gradients match finite differences") {
    Criterion crit("criterion 2: gradient correctness", 30.0);

    auto fd_of = [](TabularCCLM& model, const TrainingBatch& batch, double lambda, double* slot) {
        const double h = 1e-5;
        const double x0 = *slot;
        *slot = x0 + h;
        const double up = std::get<0>(hybrid_loss(model, batch, lambda));
        *slot = x0 - h;
        const double down = std::get<0>(hybrid_loss(model, batch, lambda));
        *slot = x0;
        return (up - down) / (2.0 * h);
    };
    auto rel = [](double a, double b) {
        return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-4});
    };

    double worst = 0.0;
    for (int seed = 0; seed < 20; ++seed) {
        Rng rng(static_cast<std::uint64_t>(1000 + seed));
        const int n_content = 2 + static_cast<int>(rng.uniform_below(3)); // |V| <= 4
        const int order = static_cast<int>(rng.uniform_below(2));         // k <= 1
        const int n_classes = 2 + static_cast<int>(rng.uniform_below(2)); // C <= 3
        std::vector<std::string> content, classes;
        for (int i = 0; i < n_content; ++i) content.push_back("w" + std::to_string(i));
        for (int c = 0; c < n_classes; ++c) classes.push_back("c" + std::to_string(c));
        auto model = tabular_init(Vocab::make(content), order, ControlCodeSet::standard(classes),
                                  InitScheme::Noise, static_cast<std::uint64_t>(seed), 0.9);
        model.alpha = 0.6 + rng.uniform01();
        for (auto& b : model.codes.bias) b = rng.uniform01() - 0.5;

        TrainingBatch batch;
        const int n_ex = 2 + static_cast<int>(rng.uniform_below(4));
        for (int i = 0; i < n_ex; ++i) {
            TrainingExample ex;
            const int len = 1 + static_cast<int>(rng.uniform_below(6));
            for (int p = 0; p < len; ++p)
                ex.tokens.push_back(static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(n_content))));
            ex.class_id = static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(n_classes)));
            batch.push_back(std::move(ex));
        }

        for (double lambda : {0.0, 0.5, 1.0}) {
            const auto g = loss_gradients(model, batch, lambda);
            for (std::size_t cell = 0; cell < model.logits.size(); ++cell)
                worst = std::max(worst, rel(g.d_logits[cell],
                                            fd_of(model, batch, lambda, &model.logits[cell])));
            // alpha via a = log alpha: nudge alpha multiplicatively
            {
                const double h = 1e-5;
                const double a0 = std::log(model.alpha);
                model.alpha = std::exp(a0 + h);
                const double up = std::get<0>(hybrid_loss(model, batch, lambda));
                model.alpha = std::exp(a0 - h);
                const double down = std::get<0>(hybrid_loss(model, batch, lambda));
                model.alpha = std::exp(a0);
                worst = std::max(worst, rel(g.d_log_alpha, (up - down) / (2.0 * h)));
            }
            for (std::size_t b = 0; b < model.codes.bias.size(); ++b)
                worst = std::max(worst, rel(g.d_bias[b],
                                            fd_of(model, batch, lambda, &model.codes.bias[b])));
        }
    }
    crit.check(worst < 1e-4, "every analytic gradient must match central differences within 1e-4");
}

TEST_CASE("criterion 3: lambda-sweep directionality on S2") {
    Criterion crit("criterion 3: lambda-sweep directionality", 300.0);

    const auto spec = make_s2(1);
    auto corpus = sample_corpus(spec, 4000, 2026);
    half_split(corpus, 2027);

    SweepConfig cfg;
    cfg.train.epochs = 400; // full-batch: one optimizer step per epoch
    cfg.train.lr = 0.1;
    cfg.train.seed = 7;
    cfg.guide_order = 0; // capacity-limited guide against the order-1 source
    cfg.classifier_train.epochs = 80;
    cfg.classifier_train.lr = 0.1;
    cfg.classifier_train.lambda = 0.5;
    cfg.classifier_train.seed = 8;
    cfg.classifier_order = 1;
    cfg.generations_per_class = 20;
    cfg.prompt_len = 4;
    cfg.generation.max_new_tokens = 16;

    const std::vector<double> lambdas = {0.05, 0.5, 1.0};
    const auto rows = lambda_sweep(corpus, lambdas, cfg);
    REQUIRE(rows.size() == 3);
    const auto& low = rows[0];   // 0.05
    const auto& mid = rows[1];   // 0.5
    const auto& gen = rows[2];   // 1.0
    std::printf("    lambda=0.05: acc=%.4f ppl=%.4f | lambda=0.5: acc=%.4f ppl=%.4f | "
                "lambda=1.0: acc=%.4f ppl=%.4f\n",
                low.accuracy, low.perplexity, mid.accuracy, mid.perplexity, gen.accuracy,
                gen.perplexity);
    crit.check(mid.accuracy >= gen.accuracy,
               "held-out accuracy at lambda=0.5 must not fall below lambda=1.0");
    crit.check(gen.perplexity <= low.perplexity,
               "held-out perplexity at lambda=1.0 must not exceed lambda=0.05");
}

TEST_CASE("criterion 4: guidance efficacy on S1") {
    Criterion crit("criterion 4: guidance efficacy", 120.0);

    const auto spec = make_s1();
    auto corpus = sample_corpus(spec, 4000, 4242);
    half_split(corpus, 4243);
    const auto split_a = split_sequences(corpus, {Split::A});
    const auto val = split_sequences(corpus, {Split::Validation});

    // Guide on split A with the hybrid objective.
    auto guide = tabular_init(corpus.vocab, 0, ControlCodeSet::standard(corpus.class_names),
                              InitScheme::Zeros, 0);
    TrainConfig gcfg;
    gcfg.lambda = 0.6;
    gcfg.lr = 0.1;
    gcfg.epochs = 150;
    gcfg.seed = 9;
    train(guide, split_a, val, gcfg);

    // Base LM on the unlabeled mixture (labels discarded).
    auto base = tabular_init(corpus.vocab, 0, ControlCodeSet::standard({"uncond"}),
                             InitScheme::Zeros, 0);
    auto mixture = split_sequences(corpus, {Split::A, Split::B});
    for (auto& s : mixture) s.class_id = 0;
    TrainConfig bcfg;
    bcfg.lambda = 1.0;
    bcfg.lr = 0.1;
    bcfg.epochs = 150;
    bcfg.seed = 10;
    train(base, mixture, {}, bcfg);

    const auto gen_cfg = [] {
        auto c = GenerationConfig::paper_default();
        c.max_new_tokens = 32;
        return c;
    }();

    const int per_class = 200;
    REQUIRE(static_cast<int>(val.size()) >= per_class);
    std::vector<ControlledSample> guided, unguided;
    std::vector<StepTrace> all_traces;
    for (int i = 0; i < per_class; ++i) {
        const auto& src = val[static_cast<std::size_t>(i)].tokens;
        const std::vector<int> prompt(src.begin(), src.begin() + 8);
        for (int cls = 0; cls < 2; ++cls) {
            auto result = gedi_generate(base, guide, cls, prompt, gen_cfg);
            ControlledSample sample;
            sample.control_class = cls;
            sample.tokens = prompt;
            sample.tokens.insert(sample.tokens.end(), result.tokens.begin(), result.tokens.end());
            guided.push_back(std::move(sample));
            for (auto& tr : result.trace) all_traces.push_back(std::move(tr));

            auto btokens = direct_generate(base, 0, prompt, gen_cfg);
            ControlledSample bs;
            bs.control_class = cls;
            bs.tokens = prompt;
            bs.tokens.insert(bs.tokens.end(), btokens.begin(), btokens.end());
            unguided.push_back(std::move(bs));
        }
    }

    const Classifier oracle = [&spec](std::span<const int> tokens) {
        return classify_oracle(spec, tokens);
    };
    const auto guided_report = label_fidelity(guided, oracle, "oracle", 2);
    const auto unguided_report = label_fidelity(unguided, oracle, "oracle", 2);
    std::printf("    guided fidelity=%.4f unguided fidelity=%.4f\n", guided_report.overall,
                unguided_report.overall);
    crit.check(guided_report.overall >= 0.95, "guided fidelity must reach 0.95");
    crit.check(std::abs(unguided_report.overall - 0.5) <= 0.10,
               "unguided base fidelity must sit at chance (0.5 +/- 0.10)");
    // the whole run's step traces satisfy the cost invariant as well
    const auto cost = audit_cost(all_traces, 2);
    crit.check(cost.tokens > 0, "guided runs must have produced steps");
}

TEST_CASE("criterion 5: pass-count efficiency across vocab and class counts") {
    Criterion crit("criterion 5: pass-count efficiency", 60.0);

    auto content_names = [](int n) {
        std::vector<std::string> names;
        for (int i = 0; i < n; ++i) names.push_back("v" + std::to_string(i));
        return names;
    };

    for (int vocab_size : {2, 8, 64}) {
        // binary standard contrast
        {
            const auto vocab = Vocab::make(content_names(vocab_size));
            auto guide = tabular_init(vocab, 0, ControlCodeSet::standard({"c0", "c1"}),
                                      InitScheme::Noise, 60 + vocab_size, 0.4);
            auto base = tabular_init(vocab, 0, ControlCodeSet::standard({"base"}),
                                     InitScheme::Noise, 61 + vocab_size, 0.4);
            GenerationConfig cfg;
            cfg.max_new_tokens = 10;
            cfg.filtering = false;
            cfg.omega = 2.0;
            const auto result = gedi_generate(base, guide, 0, {}, cfg);
            const auto cost = audit_cost(result.trace, 2, result.prompt_base_passes,
                                         result.prompt_guide_passes);
            crit.check(cost.guide_passes == cost.tokens * 2,
                       "binary contrast must use 2 guide passes per token");
            crit.check(cost.base_passes == cost.tokens, "one base pass per token");
        }
        // binarized contrast: guide passes stay 2 regardless of class count
        for (int n_classes : {2, 4}) {
            auto names = content_names(vocab_size);
            std::vector<int> name_ids;
            std::vector<std::string> class_names;
            for (int c = 0; c < n_classes; ++c) {
                name_ids.push_back(static_cast<int>(names.size()));
                names.push_back("<k" + std::to_string(c) + ">");
                class_names.push_back("k" + std::to_string(c));
            }
            const auto vocab = Vocab::make(names);
            auto guide = tabular_init(vocab, 0,
                                      ControlCodeSet::binary_pair(class_names, name_ids),
                                      InitScheme::Noise, 70 + vocab_size + n_classes, 0.4);
            auto base = tabular_init(vocab, 0, ControlCodeSet::standard({"base"}),
                                     InitScheme::Noise, 71 + vocab_size, 0.4);
            GenerationConfig cfg;
            cfg.max_new_tokens = 10;
            cfg.filtering = false;
            cfg.omega = 2.0;
            const auto result = gedi_generate(base, guide, n_classes - 1, {}, cfg);
            const auto cost = audit_cost(result.trace, 2, result.prompt_base_passes,
                                         result.prompt_guide_passes);
            crit.check(cost.guide_passes == cost.tokens * 2,
                       "binarized contrast must use 2 guide passes per token, independent of C");
        }
    }
}

TEST_CASE("criterion 6: filtering contract under randomized inputs") {
    Criterion crit("criterion 6: filtering contract", 10.0);

    Rng rng(606);
    bool survivors_ok = true, mass_ok = true, sum_ok = true, union_ok = true;
    for (int it = 0; it < 1000; ++it) {
        const int n = 2 + static_cast<int>(rng.uniform_below(30));
        std::vector<double> w(static_cast<std::size_t>(n)), post(static_cast<std::size_t>(n));
        double total = 0.0;
        for (auto& x : w) {
            x = rng.uniform01();
            total += x;
        }
        for (auto& x : w) x /= total;
        for (auto& p : post) p = rng.uniform01();
        const double rho = rng.uniform01();
        const double tau = rng.uniform01();

        const auto r = filter_candidates(w, post, rho, tau);

        // independent reconstruction of V_m and V_p from the definition
        std::vector<int> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return post[static_cast<std::size_t>(a)] > post[static_cast<std::size_t>(b)];
        });
        std::vector<char> expect(static_cast<std::size_t>(n), 0);
        double acc = 0.0;
        for (int idx : order) {
            expect[static_cast<std::size_t>(idx)] = 1;
            acc += w[static_cast<std::size_t>(idx)];
            if (acc >= rho) break;
        }
        for (int v = 0; v < n; ++v)
            if (post[static_cast<std::size_t>(v)] > tau) expect[static_cast<std::size_t>(v)] = 1;

        std::vector<char> got(static_cast<std::size_t>(n), 0);
        double kept_mass = 0.0, out_sum = 0.0;
        for (int v : r.kept) {
            got[static_cast<std::size_t>(v)] = 1;
            kept_mass += w[static_cast<std::size_t>(v)];
        }
        for (int v = 0; v < n; ++v) {
            if (post[static_cast<std::size_t>(v)] > tau && !got[static_cast<std::size_t>(v)])
                survivors_ok = false;
            out_sum += r.dist[static_cast<std::size_t>(v)];
        }
        if (got != expect) union_ok = false;
        if (kept_mass < std::min(rho, 1.0) - 1e-12) mass_ok = false;
        if (std::abs(out_sum - 1.0) > 1e-12) sum_ok = false;
    }
    crit.check(survivors_ok, "every token with posterior above tau survives");
    crit.check(mass_ok, "kept pre-renormalization mass reaches min(rho, total)");
    crit.check(sum_ok, "renormalized output sums to 1 within 1e-12");
    crit.check(union_ok, "V_k equals V_p united with V_m exactly");
}

TEST_CASE("criterion 7: numerical stability at logit magnitude 1e4") {
    Criterion crit("criterion 7: numerical stability", 5.0);

    Rng rng(707);
    bool finite_ok = true, sum_ok = true;
    for (int it = 0; it < 100; ++it) {
        const int n_content = 2 + static_cast<int>(rng.uniform_below(4));
        std::vector<std::string> names;
        for (int i = 0; i < n_content; ++i) names.push_back("s" + std::to_string(i));
        const auto vocab = Vocab::make(names);
        auto guide = tabular_init(vocab, 0, ControlCodeSet::standard({"c0", "c1"}),
                                  InitScheme::Zeros, 0);
        for (auto& l : guide.logits) l = (rng.uniform01() * 2.0 - 1.0) * 1e4;
        guide.alpha = 0.5 + 2.0 * rng.uniform01();

        auto gstate = init_guide(guide, 0);
        const int steps = 1 + static_cast<int>(rng.uniform_below(3));
        for (int s = 0; s < steps; ++s)
            guide_consume(guide, gstate, static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(n_content))));

        const auto post = candidate_class_posteriors(guide, gstate);
        for (double p : post)
            if (!std::isfinite(p)) finite_ok = false;

        // weight toward whichever class the extreme logits did not crush to
        // numerical zero (an all-zero target is the designed degenerate error)
        const int cls = (post[0] >= post[1]) ? 0 : 1;
        std::vector<double> target(static_cast<std::size_t>(vocab.size()));
        for (int v = 0; v < vocab.size(); ++v) target[static_cast<std::size_t>(v)] = post[v * 2 + cls];
        std::vector<double> base_lp(static_cast<std::size_t>(vocab.size()), kNegInf);
        for (int v = 0; v < n_content; ++v)
            base_lp[static_cast<std::size_t>(v)] = (rng.uniform01() * 2.0 - 1.0) * 1e4;
        const double lse = log_sum_exp(base_lp);
        for (auto& x : base_lp)
            if (x != kNegInf) x -= lse;

        const auto w = weighted_posterior(base_lp, target, 30.0);
        double total = 0.0;
        for (double x : w) {
            if (!std::isfinite(x)) finite_ok = false;
            total += x;
        }
        if (std::abs(total - 1.0) > 1e-12) sum_ok = false;
    }
    crit.check(finite_ok, "posteriors and weighted posteriors stay finite");
    crit.check(sum_ok, "weighted posteriors renormalize exactly");
}

TEST_CASE("criterion 8: binarized classification tracks C-way classification") {
    Criterion crit("criterion 8: binarized-mode equivalence", 300.0);

    const auto spec = make_s2(2026);
    auto corpus = sample_corpus(spec, 4000, 2026);
    half_split(corpus, 2027);
    const auto split_a = split_sequences(corpus, {Split::A});
    const auto val = split_sequences(corpus, {Split::Validation});

    TrainConfig cfg;
    cfg.lambda = 0.5;
    cfg.lr = 0.1;
    cfg.epochs = 120;
    cfg.seed = 88;

    auto standard = tabular_init(corpus.vocab, 1, ControlCodeSet::standard(corpus.class_names),
                                 InitScheme::Zeros, 0);
    const auto hist_std = train(standard, split_a, val, cfg);

    std::vector<int> name_ids;
    for (const auto& cls : corpus.class_names)
        name_ids.push_back(corpus.vocab.id_of("<" + cls + ">"));
    auto binarized = tabular_init(corpus.vocab, 1,
                                  ControlCodeSet::binary_pair(corpus.class_names, name_ids),
                                  InitScheme::Zeros, 0);
    TrainConfig bcfg = cfg;
    bcfg.binarized = true;
    const auto hist_bin = train(binarized, split_a, val, bcfg);

    const double acc_std = hist_std.history.back().val_accuracy;
    const double acc_bin = hist_bin.history.back().val_accuracy;
    std::printf("    C-way accuracy=%.4f binarized accuracy=%.4f\n", acc_std, acc_bin);
    crit.check(std::abs(acc_std - acc_bin) <= 0.05,
               "binarized accuracy must stay within 5 points of C-way accuracy");
}

TEST_CASE("criterion 9: end-to-end determinism of the CLI pipeline") {
    Criterion crit("criterion 9: end-to-end determinism", 300.0);

    const std::string cli = GEDI_CLI_PATH;
    const auto root = fs::temp_directory_path() / ("gedi_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(root);

    auto run_pipeline = [&](const fs::path& dir) {
        fs::create_directories(dir);
        auto shell = [&](const std::string& args) {
            const std::string cmd = "cd " + dir.string() + " && " + cli + " " + args +
                                    " >> cli.log 2>&1";
            return WEXITSTATUS(std::system(cmd.c_str()));
        };
        // everything uses paths relative to dir so the bytes can be compared
        int rc = 0;
        rc |= shell("synth --source s2 --source-seed 6 --n 800 --seed 5 --out corpus.txt "
                    "--save-source source.params");
        rc |= shell("train --corpus corpus.txt --split A --lambda 0.6 --epochs 40 --lr 0.1 "
                    "--order 1 --seed 2 --out guide.ckpt --metrics metrics.tsv");
        rc |= shell("train --corpus corpus.txt --split AB --unlabeled --lambda 1.0 --epochs 40 "
                    "--lr 0.1 --order 1 --seed 3 --out base.ckpt");
        rc |= shell("train --corpus corpus.txt --split B --lambda 0.5 --epochs 40 --lr 0.1 "
                    "--order 1 --seed 4 --out classifier.ckpt");
        rc |= shell("generate --mode guided --preset paper-default --base base.ckpt "
                    "--guide guide.ckpt --prompts-from corpus.txt --prompt-split val "
                    "--prompt-len 4 --limit 25 --max-new 24 --seed 6 --out gens.jsonl");
        rc |= shell("evaluate --generations gens.jsonl --classifier classifier.ckpt "
                    "--report report.txt");
        return rc;
    };

    const auto dir1 = root / "run1";
    const auto dir2 = root / "run2";
    crit.check(run_pipeline(dir1) == 0, "first pipeline run must succeed");
    crit.check(run_pipeline(dir2) == 0, "second pipeline run must succeed");

    auto file_bytes = [](const fs::path& p) {
        std::ifstream is(p, std::ios::binary);
        return std::string{std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
    };
    for (const char* name : {"corpus.txt", "source.params", "guide.ckpt", "base.ckpt",
                             "classifier.ckpt", "metrics.tsv", "gens.jsonl", "report.txt"}) {
        const auto b1 = file_bytes(dir1 / name);
        const auto b2 = file_bytes(dir2 / name);
        const bool same = !b1.empty() && b1 == b2;
        crit.check(same, name);
    }
    fs::remove_all(root);
}
