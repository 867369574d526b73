// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gedi/decode.hpp"
#include "gedi/rng.hpp"
#include "helpers.hpp"

using namespace gedi;
using namespace gedi::testing;

namespace {

GenerationConfig plain_config(int max_new) {
    GenerationConfig c;
    c.omega = 1.0;
    c.rep_penalty = 1.0;
    c.filtering = false;
    c.max_new_tokens = max_new;
    return c;
}

} // namespace

TEST_CASE("candidate posteriors: hand-derived S1 values") {
    const auto guide = s1_model();
    const int A = guide.vocab.id_of("A");
    const int B = guide.vocab.id_of("B");
    const int nc = 2;

    SUBCASE("prefix [A], alpha=2") {
        auto g = init_guide(guide, 0);
        guide_consume(guide, g, A); // t becomes 1; candidate step sees t=2
        const auto post = candidate_class_posteriors(guide, g, {}, 2.0);
        CHECK(post[A * nc + 0] == doctest::Approx(0.9411764705882353).epsilon(1e-9));
        CHECK(post[B * nc + 0] == doctest::Approx(0.5).epsilon(1e-9));
        for (int v = 0; v < guide.vocab.size(); ++v)
            CHECK(post[v * nc] + post[v * nc + 1] == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("empty prefix, alpha=1") {
        auto g = init_guide(guide, 0);
        const auto post = candidate_class_posteriors(guide, g, {}, 1.0);
        CHECK(post[A * nc + 0] == doctest::Approx(0.8).epsilon(1e-9));
        CHECK(post[B * nc + 0] == doctest::Approx(0.2).epsilon(1e-9));
    }
    SUBCASE("identical class tables give 0.5 everywhere") {
        const auto vocab = Vocab::make({"A", "B"});
        const auto twin = multi_class_model(vocab, {"c0", "c1"},
                                            {0.7, 0.3, 0.0, 0.7, 0.3, 0.0});
        auto g = init_guide(twin, 0);
        guide_consume(twin, g, 0);
        const auto post = candidate_class_posteriors(twin, g);
        for (int v = 0; v < vocab.size(); ++v)
            CHECK(post[v * nc + 0] == doctest::Approx(0.5).epsilon(1e-12));
    }
}

TEST_CASE("candidate posteriors match the brute-force full-sequence oracle") {
    const auto vocab = Vocab::make({"x", "y", "z"});
    for (int n_classes : {2, 3}) {
        std::vector<std::string> names;
        for (int c = 0; c < n_classes; ++c) names.push_back("c" + std::to_string(c));
        auto guide = tabular_init(vocab, 1, ControlCodeSet::standard(names), InitScheme::Noise,
                                  17 + n_classes, 1.3);
        guide.alpha = 1.7;
        guide.codes.bias = std::vector<double>(static_cast<std::size_t>(n_classes), 0.0);
        guide.codes.bias[0] = 0.4;

        std::vector<int> contrast(static_cast<std::size_t>(n_classes));
        for (int c = 0; c < n_classes; ++c) contrast[static_cast<std::size_t>(c)] = c;

        for (const auto& prefix : all_sequences(3, 3)) {
            auto g = init_guide(guide, 0);
            for (int tok : prefix) guide_consume(guide, g, tok);
            const auto got = candidate_class_posteriors(guide, g);
            const auto want =
                brute_posterior_matrix(guide, prefix, contrast, guide.codes.bias, guide.alpha);
            for (std::size_t i = 0; i < want.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-9));
        }
    }
}

TEST_CASE("weighted posterior: hand values, omega=0 identity, degenerate error") {
    const std::vector<double> base_lp = {std::log(0.5), std::log(0.5)};
    const std::vector<double> post = {0.8, 0.2};
    auto w1 = weighted_posterior(base_lp, post, 1.0);
    CHECK(w1[0] == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(w1[1] == doctest::Approx(0.2).epsilon(1e-12));
    auto w2 = weighted_posterior(base_lp, post, 2.0);
    CHECK(w2[0] == doctest::Approx(0.9411764705882353).epsilon(1e-12));
    CHECK(w2[1] == doctest::Approx(0.058823529411764705).epsilon(1e-12));

    const std::vector<double> base2 = {std::log(0.3), std::log(0.7)};
    const std::vector<double> post0 = {0.0, 0.0};
    auto w0 = weighted_posterior(base2, post0, 0.0);
    CHECK(w0[0] == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(w0[1] == doctest::Approx(0.7).epsilon(1e-12));
    CHECK_THROWS_AS(weighted_posterior(base2, post0, 1.0), NumericError);
}

TEST_CASE("filtering: spec examples and the keep-set contract") {
    SUBCASE("posterior-dominant token collapses the distribution") {
        const auto r = filter_candidates(std::vector<double>{0.941176, 0.058824},
                                         std::vector<double>{0.8, 0.2}, 0.2, 0.7);
        CHECK(r.kept == std::vector<int>{0});
        CHECK(r.dist[0] == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(r.dist[1] == 0.0);
    }
    SUBCASE("tau=0 keeps the whole vocab unchanged") {
        const std::vector<double> w = {0.25, 0.5, 0.25};
        const auto r = filter_candidates(w, std::vector<double>{0.2, 0.5, 0.3}, 0.0, 0.0);
        CHECK(r.kept == std::vector<int>{0, 1, 2});
        for (int v = 0; v < 3; ++v) CHECK(r.dist[v] == doctest::Approx(w[v]).epsilon(1e-12));
    }
    SUBCASE("mass floor pulls in the runner-up") {
        const auto r = filter_candidates(std::vector<double>{0.5, 0.5},
                                         std::vector<double>{0.4, 0.6}, 0.6, 0.99);
        CHECK(r.kept == std::vector<int>{0, 1});
        CHECK(r.dist[0] == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(r.dist[1] == doctest::Approx(0.5).epsilon(1e-12));
    }
    SUBCASE("a kept set with zero probability mass is a loud error") {
        CHECK_THROWS_AS(filter_candidates(std::vector<double>{0.0, 1.0},
                                          std::vector<double>{1.0, 0.0}, 0.0, 1.0),
                        NumericError);
    }
    SUBCASE("randomized contract: V_p survives, kept mass floor, normalization") {
        Rng rng(123);
        for (int it = 0; it < 1000; ++it) {
            const int n = 2 + static_cast<int>(rng.uniform_below(16));
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

            double kept_mass = 0.0, out_sum = 0.0;
            std::vector<char> kept(static_cast<std::size_t>(n), 0);
            for (int v : r.kept) {
                kept[static_cast<std::size_t>(v)] = 1;
                kept_mass += w[static_cast<std::size_t>(v)];
            }
            for (int v = 0; v < n; ++v) {
                if (post[static_cast<std::size_t>(v)] > tau) CHECK(kept[static_cast<std::size_t>(v)] == 1);
                if (!kept[static_cast<std::size_t>(v)]) CHECK(r.dist[static_cast<std::size_t>(v)] == 0.0);
                out_sum += r.dist[static_cast<std::size_t>(v)];
            }
            CHECK(kept_mass >= std::min(rho, 1.0) - 1e-12);
            CHECK(out_sum == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("repetition penalty divides history scores once") {
    std::vector<double> s1 = {2.0, 1.0};
    apply_repetition_penalty(s1, std::vector<int>{0}, 1.2);
    CHECK(s1[0] == doctest::Approx(1.6666666666666667).epsilon(1e-12));
    CHECK(s1[1] == 1.0);

    std::vector<double> s2 = {0.4, 0.6};
    const auto before = s2;
    apply_repetition_penalty(s2, std::vector<int>{0, 1, 0}, 1.0);
    CHECK(s2 == before);

    std::vector<double> s3 = {1.1, 1.0};
    apply_repetition_penalty(s3, std::vector<int>{0}, 1.2);
    CHECK(s3[0] == doctest::Approx(0.9166666666666666).epsilon(1e-12));
    CHECK(s3[1] > s3[0]); // argmax flips

    std::vector<double> bad = {0.0, 1.0};
    CHECK_THROWS_AS(apply_repetition_penalty(bad, std::vector<int>{0}, 1.2), InvalidArgument);
}

TEST_CASE("guided generation steers toward the target class") {
    const auto guide = s1_model();
    // Uniform base over the guide's own vocab (so the vocabs match).
    const auto base_s1 = single_class_model(guide.vocab, {0.5, 0.5, 0.0});
    const int A = guide.vocab.id_of("A");
    const int B = guide.vocab.id_of("B");

    const auto cfg = plain_config(3);
    auto r0 = gedi_generate(base_s1, guide, 0, {}, cfg);
    CHECK(r0.tokens == std::vector<int>{A, A, A});
    auto r1 = gedi_generate(base_s1, guide, 1, {}, cfg);
    CHECK(r1.tokens == std::vector<int>{B, B, B});

    SUBCASE("per-step pass counts are 1 base + |contrast| guide") {
        for (const auto& tr : r0.trace) {
            CHECK(tr.base_passes == 1);
            CHECK(tr.guide_passes == 2);
        }
    }
    SUBCASE("identical guide tables reduce to the base greedy output") {
        const auto twin = multi_class_model(guide.vocab, {"c0", "c1"},
                                            {0.7, 0.3, 0.0, 0.7, 0.3, 0.0});
        const auto skewed_base = single_class_model(guide.vocab, {0.1, 0.9, 0.0});
        auto guided = gedi_generate(skewed_base, twin, 0, {}, cfg);
        auto direct = direct_generate(skewed_base, 0, {}, cfg);
        CHECK(guided.tokens == direct);
        CHECK(guided.tokens == std::vector<int>{B, B, B});
    }
    SUBCASE("vocab mismatch is rejected") {
        const auto other = uniform_model(3);
        CHECK_THROWS_AS(gedi_generate(other, guide, 0, {}, cfg), DataError);
    }
}

TEST_CASE("direct generation: greedy argmax and the extreme-penalty flip") {
    const auto m = s1_model();
    const int A = m.vocab.id_of("A");
    const int B = m.vocab.id_of("B");

    auto cfg = plain_config(3);
    CHECK(direct_generate(m, 0, {}, cfg) == std::vector<int>{A, A, A});
    CHECK(direct_generate(m, 1, {}, cfg) == std::vector<int>{B, B, B});

    cfg.rep_penalty = 10.0;
    cfg.max_new_tokens = 2;
    // After emitting A, its shifted score 0.8/10 drops below B's 0.2.
    CHECK(direct_generate(m, 0, {}, cfg) == std::vector<int>{A, B});

    CHECK_THROWS_AS(direct_generate(m, 7, {}, cfg), InvalidArgument);
}

TEST_CASE("generation stops at EOS when the model gives it real mass") {
    const auto vocab = Vocab::make({"go"});
    // Order-1: emit "go" from the start context, then EOS forever after.
    SourceSpec spec;
    spec.name = "stopper";
    spec.vocab = vocab;
    spec.class_names = {"only"};
    spec.order = 1;
    spec.length = {1, 4, 0.0};
    spec.probs.assign(static_cast<std::size_t>(vocab.size() * vocab.n_predicted()), 0.0);
    const int np = vocab.n_predicted();
    auto row = [&](int ctx) { return spec.probs.data() + ctx * np; };
    row(vocab.bos)[0] = 1.0;                  // BOS context -> "go"
    for (int ctx = 0; ctx < vocab.size(); ++ctx)
        if (ctx != vocab.bos) row(ctx)[vocab.eos] = 1.0;
    spec.validate();
    const auto m = model_from_source(spec);

    auto cfg = plain_config(8);
    const auto out = direct_generate(m, 0, {}, cfg);
    CHECK(out == std::vector<int>{0}); // one "go", then EOS terminates
}

TEST_CASE("Bayes consistency: analytic mixture base with omega=1") {
    const auto guide = s1_model();
    // Base = 0.5*P(.|c0) + 0.5*P(.|c1) = uniform over {A,B} for S1.
    const auto base = single_class_model(guide.vocab, {0.5, 0.5, 0.0});
    const int target = 0;

    SUBCASE("t=1: weighted posterior equals the class-conditional distribution") {
        auto g = init_guide(guide, target);
        const auto post_matrix = candidate_class_posteriors(guide, g, {}, 1.0); // alpha=t=1
        std::vector<double> target_post(static_cast<std::size_t>(guide.vocab.size()));
        for (int v = 0; v < guide.vocab.size(); ++v) target_post[static_cast<std::size_t>(v)] = post_matrix[v * 2];
        const auto base_lp = next_token_logprobs(base, init_state(base, 0));
        const auto w = weighted_posterior(base_lp, target_post, 1.0);
        const auto cls_lp = next_token_logprobs(guide, init_state(guide, target));
        for (int v = 0; v < guide.vocab.n_content; ++v)
            CHECK(w[static_cast<std::size_t>(v)] ==
                  doctest::Approx(std::exp(cls_lp[static_cast<std::size_t>(v)])).epsilon(1e-9));
    }
    SUBCASE("t>1: equals the brute-force weighted mixture") {
        for (const auto& prefix : all_sequences(2, 3)) {
            auto g = init_guide(guide, target);
            for (int tok : prefix) guide_consume(guide, g, tok);
            const double t = static_cast<double>(prefix.size() + 1);
            const auto post_matrix = candidate_class_posteriors(guide, g, {}, t); // exponent 1
            std::vector<double> target_post(static_cast<std::size_t>(guide.vocab.size()));
            for (int v = 0; v < guide.vocab.size(); ++v)
                target_post[static_cast<std::size_t>(v)] = post_matrix[v * 2];

            LMState bs = init_state(base, 0);
            for (int tok : prefix) advance_inplace(base, bs, tok);
            const auto base_lp = next_token_logprobs(base, bs);
            const auto got = weighted_posterior(base_lp, target_post, 1.0);

            // Brute force: base is the fixed-prior analytic mixture of the
            // class-conditional next-token distributions; the posterior comes
            // from full sequence likelihoods at exponent 1.
            LMState g0 = init_state(guide, 0);
            LMState g1 = init_state(guide, 1);
            for (int tok : prefix) {
                advance_inplace(guide, g0, tok);
                advance_inplace(guide, g1, tok);
            }
            const auto row0 = next_token_logprobs(guide, g0);
            const auto row1 = next_token_logprobs(guide, g1);
            std::vector<double> want(static_cast<std::size_t>(guide.vocab.size()), 0.0);
            double total = 0.0;
            for (int v = 0; v < guide.vocab.n_content; ++v) {
                std::vector<int> seq(prefix.begin(), prefix.end());
                seq.push_back(v);
                const double l0 = std::exp(sequence_logprob(guide, 0, seq));
                const double l1 = std::exp(sequence_logprob(guide, 1, seq));
                const double mixture_base = 0.5 * std::exp(row0[static_cast<std::size_t>(v)]) +
                                            0.5 * std::exp(row1[static_cast<std::size_t>(v)]);
                const double posterior = l0 / (l0 + l1);
                want[static_cast<std::size_t>(v)] = mixture_base * posterior;
                total += want[static_cast<std::size_t>(v)];
            }
            for (auto& x : want) x /= total;
            for (int v = 0; v < guide.vocab.n_content; ++v)
                CHECK(got[static_cast<std::size_t>(v)] ==
                      doctest::Approx(want[static_cast<std::size_t>(v)]).epsilon(1e-9));
        }
    }
}

TEST_CASE("posterior-exponent monotonicity of the weighted posterior") {
    Rng rng(7);
    for (int it = 0; it < 200; ++it) {
        const int n = 3 + static_cast<int>(rng.uniform_below(8));
        std::vector<double> base_lp(static_cast<std::size_t>(n)), post(static_cast<std::size_t>(n));
        for (auto& x : base_lp) x = std::log(rng.uniform01() + 1e-3);
        for (auto& p : post) p = rng.uniform01() + 1e-6;
        const double w1 = rng.uniform01() * 10.0;
        const double w2 = w1 + rng.uniform01() * 10.0;
        const auto p1 = weighted_posterior(base_lp, post, w1);
        const auto p2 = weighted_posterior(base_lp, post, w2);
        // pick the max- and min-posterior indices
        std::size_t hi = 0, lo = 0;
        for (std::size_t i = 0; i < post.size(); ++i) {
            if (post[i] > post[hi]) hi = i;
            if (post[i] < post[lo]) lo = i;
        }
        if (hi == lo) continue;
        const double r1 = p1[hi] / p1[lo];
        const double r2 = p2[hi] / p2[lo];
        CHECK(r2 >= r1 * (1.0 - 1e-9));
    }
}

TEST_CASE("stability: huge logit magnitudes stay finite through the softmaxes") {
    Rng rng(31);
    for (int it = 0; it < 100; ++it) {
        const auto vocab = Vocab::make({"a", "b", "c"});
        auto guide = tabular_init(vocab, 0, ControlCodeSet::standard({"c0", "c1"}),
                                  InitScheme::Zeros, 0);
        for (auto& l : guide.logits) l = (rng.uniform01() * 2.0 - 1.0) * 1e4;
        guide.alpha = 0.5 + rng.uniform01() * 2.0;
        auto g = init_guide(guide, 0);
        guide_consume(guide, g, static_cast<int>(rng.uniform_below(3)));
        const auto post = candidate_class_posteriors(guide, g);
        for (double p : post) CHECK(std::isfinite(p));
        // weight toward whichever class the extreme logits did not crush to
        // numerical zero (an all-zero target is the designed degenerate error)
        const int cls = (post[0] >= post[1]) ? 0 : 1;
        std::vector<double> target(static_cast<std::size_t>(vocab.size()));
        for (int v = 0; v < vocab.size(); ++v) target[static_cast<std::size_t>(v)] = post[v * 2 + cls];
        std::vector<double> base_lp(static_cast<std::size_t>(vocab.size()), std::log(1.0 / 3.0));
        base_lp[static_cast<std::size_t>(vocab.eos)] = kNegInf;
        base_lp[static_cast<std::size_t>(vocab.bos)] = kNegInf;
        base_lp[static_cast<std::size_t>(vocab.pad)] = kNegInf;
        const auto w = weighted_posterior(base_lp, target, 30.0);
        double total = 0.0;
        for (double x : w) {
            CHECK(std::isfinite(x));
            total += x;
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
}
