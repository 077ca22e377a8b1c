#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "cinecontrast/evalstats.hpp"
#include "cinecontrast/rng.hpp"

using namespace cinecontrast;
using namespace cinecontrast::stats;

namespace {

// Independent pair-counting AUROC oracle (quadratic, used only in tests).
double auc_pair_oracle(const std::vector<ScoredSample>& samples) {
    double wins = 0.0;
    std::size_t np = 0, nn = 0;
    for (const auto& p : samples) {
        if (p.label != 1) continue;
        ++np;
        for (const auto& q : samples) {
            if (q.label != 0) continue;
            if (p.score > q.score) {
                wins += 1.0;
            } else if (p.score == q.score) {
                wins += 0.5;
            }
        }
    }
    for (const auto& q : samples) {
        if (q.label == 0) ++nn;
    }
    return wins / (static_cast<double>(np) * static_cast<double>(nn));
}

std::vector<ScoredSample> gaussian_scores(int n_pos, int n_neg, double sep, Rng& rng) {
    std::vector<ScoredSample> out;
    for (int i = 0; i < n_pos; ++i) out.push_back({rng.normal(sep, 1.0), 1});
    for (int i = 0; i < n_neg; ++i) out.push_back({rng.normal(0.0, 1.0), 0});
    return out;
}

// Stratified percentile bootstrap for the AUROC (test oracle).
std::pair<double, double> bootstrap_auc_ci(const std::vector<ScoredSample>& samples, int reps,
                                           Rng& rng) {
    std::vector<ScoredSample> pos, neg;
    for (const auto& s : samples) (s.label == 1 ? pos : neg).push_back(s);
    std::vector<double> aucs;
    aucs.reserve(static_cast<std::size_t>(reps));
    for (int r = 0; r < reps; ++r) {
        std::vector<ScoredSample> boot;
        boot.reserve(samples.size());
        for (std::size_t i = 0; i < pos.size(); ++i) boot.push_back(pos[rng.below(pos.size())]);
        for (std::size_t i = 0; i < neg.size(); ++i) boot.push_back(neg[rng.below(neg.size())]);
        aucs.push_back(auroc(boot).auc);
    }
    std::sort(aucs.begin(), aucs.end());
    auto pick = [&](double q) {
        const double idx = q * static_cast<double>(aucs.size() - 1);
        return aucs[static_cast<std::size_t>(std::llround(idx))];
    };
    return {pick(0.025), pick(0.975)};
}

// Paired sign-flip permutation test for AUC difference (test oracle).
double permutation_p(const std::vector<ScoredSample>& a, const std::vector<ScoredSample>& b,
                     int reps, Rng& rng) {
    const double observed = std::abs(auroc(a).auc - auroc(b).auc);
    int hits = 0;
    std::vector<ScoredSample> pa = a, pb = b;
    for (int r = 0; r < reps; ++r) {
        for (std::size_t i = 0; i < pa.size(); ++i) {
            if (rng.bernoulli(0.5)) {
                pa[i].score = b[i].score;
                pb[i].score = a[i].score;
            } else {
                pa[i].score = a[i].score;
                pb[i].score = b[i].score;
            }
        }
        if (std::abs(auroc(pa).auc - auroc(pb).auc) >= observed - 1e-12) ++hits;
    }
    return static_cast<double>(hits + 1) / static_cast<double>(reps + 1);
}

}  // namespace

TEST_CASE("auroc: hand cases") {
    SECTION("perfect separation") {
        std::vector<ScoredSample> s{{0.9, 1}, {0.8, 1}, {0.1, 0}, {0.2, 0}};
        CHECK(auroc(s).auc == Catch::Approx(1.0));
    }
    SECTION("interleaved 4-sample case gives 3/4") {
        std::vector<ScoredSample> s{{0.8, 1}, {0.4, 1}, {0.6, 0}, {0.2, 0}};
        CHECK(auroc(s).auc == Catch::Approx(0.75));
    }
    SECTION("all scores tied gives 1/2") {
        std::vector<ScoredSample> s{{0.5, 1}, {0.5, 1}, {0.5, 0}, {0.5, 0}, {0.5, 0}};
        CHECK(auroc(s).auc == Catch::Approx(0.5));
    }
    SECTION("single-class input names the missing class") {
        std::vector<ScoredSample> s{{0.5, 1}, {0.6, 1}};
        try {
            auroc(s);
            FAIL("expected ContractViolation");
        } catch (const ContractViolation& e) {
            CHECK(std::string(e.what()).find("negative") != std::string::npos);
        }
    }
}

TEST_CASE("auroc: curve shape and monotonicity") {
    Rng rng(3);
    auto s = gaussian_scores(20, 30, 1.0, rng);
    auto r = auroc(s);
    REQUIRE(r.curve.front() == std::make_pair(0.0, 0.0));
    REQUIRE(r.curve.back() == std::make_pair(1.0, 1.0));
    for (std::size_t i = 1; i < r.curve.size(); ++i) {
        CHECK(r.curve[i].first >= r.curve[i - 1].first);
        CHECK(r.curve[i].second >= r.curve[i - 1].second);
    }
}

TEST_CASE("auroc: agrees with pair-counting oracle and is monotone-invariant") {
    Rng rng(17);
    for (int rep = 0; rep < 50; ++rep) {
        auto s = gaussian_scores(8 + rng.below_int(20), 8 + rng.below_int(20), rng.uniform(0.0, 2.0),
                                 rng);
        const double base = auroc(s).auc;
        CHECK(base == Catch::Approx(auc_pair_oracle(s)).margin(1e-12));

        auto transformed = s;
        for (auto& x : transformed) x.score = std::exp(x.score);
        CHECK(auroc(transformed).auc == Catch::Approx(base).margin(1e-12));
        for (auto& x : transformed) x.score = 3.0 * x.score - 7.0;
        CHECK(auroc(transformed).auc == Catch::Approx(base).margin(1e-12));
        transformed = s;
        for (auto& x : transformed) x.score = x.score * x.score * x.score;
        CHECK(auroc(transformed).auc == Catch::Approx(base).margin(1e-12));

        auto flipped = s;
        for (auto& x : flipped) x.label = 1 - x.label;
        CHECK(auroc(flipped).auc == Catch::Approx(1.0 - base).margin(1e-12));
    }
}

TEST_CASE("delong_ci: hand-computed structural components") {
    // pos {0.8, 0.4}, neg {0.6, 0.2}: V+ = {1, 0.5}, V- = {0.5, 1}
    // var = 0.125/2 + 0.125/2 = 0.125 (pair-counting oracle agrees)
    std::vector<ScoredSample> s{{0.8, 1}, {0.4, 1}, {0.6, 0}, {0.2, 0}};
    auto r = delong_ci(s);
    CHECK(r.auc == Catch::Approx(0.75));
    CHECK(r.variance == Catch::Approx(0.125));
    CHECK_FALSE(r.degenerate);
}

TEST_CASE("delong_ci: perfect separation collapses to a flagged point interval") {
    std::vector<ScoredSample> s{{0.9, 1}, {0.8, 1}, {0.2, 0}, {0.1, 0}};
    auto r = delong_ci(s);
    CHECK(r.auc == 1.0);
    CHECK(r.variance == 0.0);
    CHECK(r.degenerate);
    CHECK(r.ci_low == 1.0);
    CHECK(r.ci_high == 1.0);
}

TEST_CASE("delong_ci: overlaps seeded bootstrap on a 200-sample set, widths within 20%") {
    Rng rng(2024);
    auto s = gaussian_scores(100, 100, 1.2, rng);
    auto dl = delong_ci(s);
    Rng boot_rng(99);
    auto [blo, bhi] = bootstrap_auc_ci(s, 10000, boot_rng);

    // intervals overlap
    CHECK(dl.ci_low <= bhi);
    CHECK(blo <= dl.ci_high);
    // widths agree within 20%
    const double wd = dl.ci_high - dl.ci_low;
    const double wb = bhi - blo;
    CHECK(std::abs(wd - wb) / wb < 0.20);
}

TEST_CASE("delong_ci width shrinks like 1/sqrt(n)") {
    Rng rng(5);
    auto small = gaussian_scores(60, 60, 1.0, rng);
    Rng rng2(5);
    auto big = gaussian_scores(240, 240, 1.0, rng2);
    const double ws = delong_ci(small).ci_high - delong_ci(small).ci_low;
    const double wb = delong_ci(big).ci_high - delong_ci(big).ci_low;
    // ratio should be close to 2 (scaled family, n vs 4n), within 25%
    CHECK(std::abs(ws / wb - 2.0) < 0.5);
}

TEST_CASE("delong_compare: identical predictors give p = 1") {
    Rng rng(7);
    auto s = gaussian_scores(30, 30, 1.0, rng);
    CHECK(delong_compare(s, s) == 1.0);
}

TEST_CASE("delong_compare: perfect vs anti-perfect rejects hard") {
    std::vector<ScoredSample> a, b;
    Rng rng(8);
    for (int i = 0; i < 40; ++i) {
        const int label = i % 2;
        const double sep = label == 1 ? 5.0 : -5.0;
        a.push_back({sep + rng.normal(0.0, 0.1), label});
        b.push_back({-sep + rng.normal(0.0, 0.1), label});
    }
    CHECK(delong_compare(a, b) < 0.01);
}

TEST_CASE("delong_compare: mismatched labels rejected") {
    std::vector<ScoredSample> a{{0.1, 1}, {0.2, 0}, {0.6, 1}, {0.9, 0}};
    std::vector<ScoredSample> b{{0.1, 1}, {0.2, 1}, {0.6, 1}, {0.9, 0}};
    CHECK_THROWS_AS(delong_compare(a, b), ContractViolation);
}

TEST_CASE("delong vs permutation oracle: decisions agree on >= 95/100 datasets") {
    Rng rng(31337);
    int agree = 0;
    const int kDatasets = 100;
    for (int ds = 0; ds < kDatasets; ++ds) {
        // two correlated predictors over the same labels; half the datasets
        // are true nulls (exchangeable predictors), half carry a real gap
        std::vector<ScoredSample> a, b;
        const bool null_case = ds % 2 == 0;
        const double effect = null_case ? 0.0 : rng.uniform(0.6, 1.0);
        for (int i = 0; i < 100; ++i) {
            const int label = i < 40 ? 1 : 0;
            const double base = label == 1 ? rng.normal(1.0, 1.0) : rng.normal(0.0, 1.0);
            a.push_back({base + rng.normal(0.0, 0.3), label});
            b.push_back({base * (1.0 - effect) + rng.normal(0.0, 0.3), label});
        }
        const double p_dl = delong_compare(a, b);
        Rng perm_rng(static_cast<std::uint64_t>(1000 + ds));
        const double p_perm = permutation_p(a, b, 2000, perm_rng);
        if ((p_dl < 0.05) == (p_perm < 0.05)) ++agree;
    }
    INFO("agreement " << agree << "/" << kDatasets);
    CHECK(agree >= 95);
}

TEST_CASE("bland_altman: hand case and invariances") {
    SECTION("three-pair hand case: bias 0, sd 2, LoA +-3.92") {
        std::vector<double> preds{10, 20, 30}, truths{12, 18, 30};
        auto r = bland_altman(preds, truths);
        CHECK(r.bias == Catch::Approx(0.0).margin(1e-12));
        CHECK(r.sd_diff == Catch::Approx(2.0));
        CHECK(r.loa_low == Catch::Approx(-3.92).margin(1e-6));
        CHECK(r.loa_high == Catch::Approx(3.92).margin(1e-6));
    }
    SECTION("identical inputs give a degenerate zero interval") {
        std::vector<double> v{1, 2, 3, 4};
        auto r = bland_altman(v, v);
        CHECK(r.bias == 0.0);
        CHECK(r.sd_diff == 0.0);
        CHECK(r.loa_low == 0.0);
        CHECK(r.loa_high == 0.0);
    }
    SECTION("constant offset moves bias only") {
        std::vector<double> t{1, 2, 3, 4}, p{6, 7, 8, 9};
        auto r = bland_altman(p, t);
        CHECK(r.bias == Catch::Approx(5.0));
        CHECK(r.sd_diff == 0.0);
    }
    SECTION("shift equivariance of bias, sd unchanged") {
        Rng rng(12);
        std::vector<double> t, p;
        for (int i = 0; i < 50; ++i) {
            t.push_back(rng.normal(10, 3));
            p.push_back(t.back() + rng.normal(0.5, 1.0));
        }
        auto r0 = bland_altman(p, t);
        std::vector<double> shifted = p;
        for (auto& v : shifted) v += 2.5;
        auto r1 = bland_altman(shifted, t);
        CHECK(r1.bias == Catch::Approx(r0.bias + 2.5));
        CHECK(r1.sd_diff == Catch::Approx(r0.sd_diff));
    }
    SECTION("n < 2 rejected") {
        std::vector<double> one{1.0};
        CHECK_THROWS_AS(bland_altman(one, one), ContractViolation);
    }
}

TEST_CASE("regression_metrics: hand cases") {
    SECTION("exact predictions") {
        std::vector<double> v{1, 2, 3};
        auto m = regression_metrics(v, v);
        CHECK(m.mae == 0.0);
        CHECK(m.mse == 0.0);
    }
    SECTION("errors (1, -1)") {
        std::vector<double> p{2, 1}, t{1, 2};
        auto m = regression_metrics(p, t);
        CHECK(m.mae == Catch::Approx(1.0));
        CHECK(m.mse == Catch::Approx(1.0));
    }
    SECTION("errors (3, 0)") {
        std::vector<double> p{4, 5}, t{1, 5};
        auto m = regression_metrics(p, t);
        CHECK(m.mae == Catch::Approx(1.5));
        CHECK(m.mse == Catch::Approx(4.5));
    }
}
