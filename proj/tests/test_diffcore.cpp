#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "cinecontrast/autograd.hpp"
#include "cinecontrast/optim.hpp"
#include "cinecontrast/rng.hpp"
#include "cinecontrast/tensor.hpp"

using namespace cinecontrast;
namespace ag = cinecontrast::ag;

using T64 = Tensor<double>;
using Var64 = ag::Var<double>;
using Tape64 = ag::Tape<double>;

namespace {

// Project an op output to a scalar with a fixed random weighting so FD has
// a single loss to probe.
Var64 project_scalar(Tape64& tape, Var64 out, Rng& rng) {
    Tensor<double> w(out.value().shape);
    for (auto& v : w.data) v = rng.normal();
    return ag::mean_all(ag::mul(out, tape.constant(w)));
}

using OpBuilder = std::function<Var64(Tape64&, const PlacedParams<double>&, Rng&)>;

// FD-check one op across `seeds` random draws of its inputs.
void fd_sweep(const std::string& op_name, int seeds,
              const std::function<void(ParamSet<double>&, Rng&)>& make_inputs,
              const OpBuilder& build) {
    for (int s = 0; s < seeds; ++s) {
        Rng rng(1000 + static_cast<std::uint64_t>(s));
        ParamSet<double> params;
        make_inputs(params, rng);
        Rng proj_rng(77 + static_cast<std::uint64_t>(s));
        auto fn = [&](Tape64& tape, const PlacedParams<double>& p) {
            Rng local = proj_rng;  // same projection for every probe evaluation
            return project_scalar(tape, build(tape, p, local), local);
        };
        // abs floor 1e-7 excuses elements whose true gradient sits below
        // what central differences can resolve at h = 1e-5
        auto report = grad_check<double>(fn, params, 1e-5, 1e-4, 1e-7);
        INFO(op_name << " seed " << s << " max rel err " << report.max_rel_err());
        REQUIRE(report.pass);
    }
}

Tensor<double> randt(Shape s, Rng& rng, double sd = 1.0) {
    return Tensor<double>::randn(std::move(s), rng, sd);
}

}  // namespace

TEST_CASE("reverse pass: sum of squares and unreachable params") {
    ParamSet<double> params;
    params.add("x", Tensor<double>(Shape{1}, std::vector<double>{3.0}));
    params.add("unused", Tensor<double>(Shape{2}, std::vector<double>{1.0, 2.0}));

    Tape64 tape;
    auto placed = place_params(tape, params);
    auto loss = ag::sum_all(ag::mul(placed.at("x"), placed.at("x")));
    auto grads = forward_backward(tape, loss, params, placed);

    CHECK(grads["x"].data[0] == Catch::Approx(6.0));
    CHECK(grads["unused"].data[0] == 0.0);
    CHECK(grads["unused"].data[1] == 0.0);
}

TEST_CASE("reverse pass: non-scalar loss is a contract violation") {
    Tape64 tape;
    auto v = tape.leaf(Tensor<double>(Shape{3}, 1.0), true);
    CHECK_THROWS_AS(tape.backward(v), ContractViolation);
}

TEST_CASE("forward op producing non-finite values names itself") {
    Tape64 tape;
    auto v = tape.leaf(Tensor<double>(Shape{2}, std::vector<double>{1e308, 1e308}), true);
    try {
        auto out = ag::mul(v, v);
        (void)out;
        FAIL("expected NumericFailure");
    } catch (const NumericFailure& e) {
        CHECK(std::string(e.what()).find("mul") != std::string::npos);
    }
}

TEST_CASE("finite differences: every primitive op") {
    const int kSeeds = 100;

    fd_sweep("add", kSeeds,
             [](ParamSet<double>& p, Rng& r) {
                 p.add("a", randt({3, 4}, r));
                 p.add("b", randt({3, 4}, r));
             },
             [](Tape64&, const PlacedParams<double>& p, Rng&) {
                 return ag::add(p.at("a"), p.at("b"));
             });

    fd_sweep("sub", kSeeds,
             [](ParamSet<double>& p, Rng& r) {
                 p.add("a", randt({2, 5}, r));
                 p.add("b", randt({2, 5}, r));
             },
             [](Tape64&, const PlacedParams<double>& p, Rng&) {
                 return ag::sub(p.at("a"), p.at("b"));
             });

    fd_sweep("mul", kSeeds,
             [](ParamSet<double>& p, Rng& r) {
                 p.add("a", randt({4, 3}, r));
                 p.add("b", randt({4, 3}, r));
             },
             [](Tape64&, const PlacedParams<double>& p, Rng&) {
                 return ag::mul(p.at("a"), p.at("b"));
             });

    fd_sweep("matmul", kSeeds,
             [](ParamSet<double>& p, Rng& r) {
                 p.add("a", randt({3, 4}, r));
                 p.add("b", randt({4, 5}, r));
             },
             [](Tape64&, const PlacedParams<double>& p, Rng&) {
                 return ag::matmul(p.at("a"), p.at("b"));
             });

    fd_sweep("matmul transposed", kSeeds,
             [](ParamSet<double>& p, Rng& r) {
                 p.add("a", randt({4, 3}, r));
                 p.add("b", randt({5, 4}, r));
             },
             [](Tape64&, const PlacedParams<double>& p, Rng&) {
                 return ag::matmul(p.at("a"), p.at("b"), true, true);
             });

    fd_sweep("matmul batched", kSeeds,
             [](ParamSet<double>& p, Rng& r) {
                 p.add("a", randt({2, 3, 4}, r));
                 p.add("b", randt({2, 5, 4}, r));
             },
             [](Tape64&, const PlacedParams<double>& p, Rng&) {
                 return ag::matmul(p.at("a"), p.at("b"), false, true);
             });

    fd_sweep("conv3d (unfold + matmul)", kSeeds,
             [](ParamSet<double>& p, Rng& r) {
                 p.add("x", randt({1, 4, 6, 6}, r));
                 p.add("w", randt({8, 3}, r));  // 1*2*2*2 = 8 patch dims
                 p.add("b", randt({3}, r));
             },
             [](Tape64&, const PlacedParams<double>& p, Rng&) {
                 auto patches = ag::unfold3d(p.at("x"), {2, 2, 2}, {2, 2, 2});
                 return ag::linear(patches, p.at("w"), p.at("b"));
             });

    fd_sweep("unfold3d overlapping", kSeeds,
             [](ParamSet<double>& p, Rng& r) { p.add("x", randt({2, 4, 5, 5}, r)); },
             [](Tape64&, const PlacedParams<double>& p, Rng&) {
                 return ag::unfold3d(p.at("x"), {2, 3, 3}, {1, 2, 2});
             });

    fd_sweep("layernorm", kSeeds,
             [](ParamSet<double>& p, Rng& r) { p.add("x", randt({3, 6}, r)); },
             [](Tape64&, const PlacedParams<double>& p, Rng&) {
                 return ag::layernorm(p.at("x"));
             });

    fd_sweep("softmax", kSeeds,
             [](ParamSet<double>& p, Rng& r) { p.add("x", randt({3, 5}, r)); },
             [](Tape64&, const PlacedParams<double>& p, Rng&) {
                 return ag::softmax(p.at("x"));
             });

    fd_sweep("logsumexp", kSeeds,
             [](ParamSet<double>& p, Rng& r) { p.add("x", randt({4, 6}, r)); },
             [](Tape64&, const PlacedParams<double>& p, Rng&) {
                 return ag::logsumexp_rows(p.at("x"));
             });

    fd_sweep("tanh", kSeeds,
             [](ParamSet<double>& p, Rng& r) { p.add("x", randt({3, 3}, r)); },
             [](Tape64&, const PlacedParams<double>& p, Rng&) { return ag::tanh_(p.at("x")); });

    fd_sweep("sigmoid", kSeeds,
             [](ParamSet<double>& p, Rng& r) { p.add("x", randt({3, 3}, r)); },
             [](Tape64&, const PlacedParams<double>& p, Rng&) { return ag::sigmoid(p.at("x")); });

    fd_sweep("gelu", kSeeds,
             [](ParamSet<double>& p, Rng& r) { p.add("x", randt({3, 3}, r)); },
             [](Tape64&, const PlacedParams<double>& p, Rng&) { return ag::gelu(p.at("x")); });

    fd_sweep("mean/sum reductions", kSeeds,
             [](ParamSet<double>& p, Rng& r) {
                 p.add("x", randt({4, 4}, r));
                 p.add("y", randt({4, 4}, r));
             },
             [](Tape64&, const PlacedParams<double>& p, Rng&) {
                 auto m = ag::mean_all(p.at("x"));
                 auto s = ag::sum_all(p.at("y"));
                 std::vector<Var64> parts{m, s};
                 return ag::concat(parts, 0);
             });

    fd_sweep("concat", kSeeds,
             [](ParamSet<double>& p, Rng& r) {
                 p.add("a", randt({2, 3}, r));
                 p.add("b", randt({4, 3}, r));
             },
             [](Tape64&, const PlacedParams<double>& p, Rng&) {
                 std::vector<Var64> parts{p.at("a"), p.at("b")};
                 return ag::concat(parts, 0);
             });

    fd_sweep("slice", kSeeds,
             [](ParamSet<double>& p, Rng& r) { p.add("x", randt({5, 4}, r)); },
             [](Tape64&, const PlacedParams<double>& p, Rng&) {
                 return ag::slice(p.at("x"), 0, 1, 3);
             });

    fd_sweep("transpose", kSeeds,
             [](ParamSet<double>& p, Rng& r) { p.add("x", randt({2, 3, 4}, r)); },
             [](Tape64&, const PlacedParams<double>& p, Rng&) {
                 return ag::transpose(p.at("x"), 0, 2);
             });

    fd_sweep("grid_pool", kSeeds,
             [](ParamSet<double>& p, Rng& r) { p.add("x", randt({2 * 4 * 4 + 1, 3}, r)); },
             [](Tape64&, const PlacedParams<double>& p, Rng&) {
                 return ag::grid_pool(p.at("x"), {2, 4, 4}, {1, 2, 2}, true);
             });

    fd_sweep("gather_rows", kSeeds,
             [](ParamSet<double>& p, Rng& r) { p.add("e", randt({6, 4}, r)); },
             [](Tape64&, const PlacedParams<double>& p, Rng&) {
                 return ag::gather_rows(p.at("e"), {0, 3, 3, 5});
             });

    fd_sweep("l2_normalize", kSeeds,
             [](ParamSet<double>& p, Rng& r) {
                 auto t = randt({3, 5}, r);
                 for (auto& v : t.data) v += (v >= 0 ? 0.5 : -0.5);  // keep away from zero norm
                 p.add("x", t);
             },
             [](Tape64&, const PlacedParams<double>& p, Rng&) {
                 return ag::l2_normalize(p.at("x"));
             });

    fd_sweep("add_rowwise/mul_rowwise", kSeeds,
             [](ParamSet<double>& p, Rng& r) {
                 p.add("x", randt({3, 4}, r));
                 p.add("b", randt({4}, r));
                 p.add("g", randt({4}, r));
             },
             [](Tape64&, const PlacedParams<double>& p, Rng&) {
                 return ag::add_rowwise(ag::mul_rowwise(p.at("x"), p.at("g")), p.at("b"));
             });

    fd_sweep("huber", kSeeds,
             [](ParamSet<double>& p, Rng& r) {
                 auto t = randt({6}, r, 2.0);
                 // keep residuals away from the |e| == delta kink
                 for (auto& v : t.data) {
                     if (std::abs(std::abs(v) - 1.0) < 0.05) v += 0.1;
                 }
                 p.add("e", t);
             },
             [](Tape64&, const PlacedParams<double>& p, Rng&) {
                 return ag::huber_elem(p.at("e"), 1.0);
             });

    fd_sweep("weighted_bce_logits", kSeeds,
             [](ParamSet<double>& p, Rng& r) { p.add("z", randt({6}, r, 2.0)); },
             [](Tape64&, const PlacedParams<double>& p, Rng&) {
                 std::vector<double> labels{1, 0, 1, 1, 0, 0};
                 return ag::weighted_bce_logits(p.at("z"), labels, 2.5);
             });

    fd_sweep("flood", kSeeds,
             [](ParamSet<double>& p, Rng& r) {
                 auto t = randt({1}, r);
                 if (std::abs(t.data[0] - 0.5) < 0.05) t.data[0] += 0.2;  // stay off the kink
                 p.add("x", t);
             },
             [](Tape64&, const PlacedParams<double>& p, Rng&) {
                 return ag::flood(p.at("x"), 0.5);
             });
}

TEST_CASE("softmax rows sum to one") {
    Rng rng(4);
    for (int s = 0; s < 50; ++s) {
        Tape64 tape;
        auto x = tape.leaf(Tensor<double>::randn({4, 7}, rng, 3.0), false);
        auto y = ag::softmax(x);
        for (int r = 0; r < 4; ++r) {
            double sum = 0;
            for (int c = 0; c < 7; ++c) sum += y.value().data[static_cast<std::size_t>(r) * 7 + c];
            CHECK(sum == Catch::Approx(1.0).margin(1e-6));
        }
    }
}

TEST_CASE("layernorm output is standardized before affine") {
    Rng rng(5);
    Tape64 tape;
    const int d = 16;
    auto x = tape.leaf(Tensor<double>::randn({8, d}, rng, 2.0), false);
    auto y = ag::layernorm(x);
    for (int r = 0; r < 8; ++r) {
        double mean = 0, var = 0;
        for (int c = 0; c < d; ++c) mean += y.value().data[static_cast<std::size_t>(r) * d + c];
        mean /= d;
        for (int c = 0; c < d; ++c) {
            const double diff = y.value().data[static_cast<std::size_t>(r) * d + c] - mean;
            var += diff * diff;
        }
        var /= d;
        CHECK(std::abs(mean) < 1e-6);
        CHECK(std::abs(var - 1.0) < 1e-5);
    }
}

TEST_CASE("adamw: closed-form first steps") {
    SECTION("plain first step, no decay") {
        ParamSet<double> p;
        p.add("w", Tensor<double>(Shape{1}, std::vector<double>{1.0}));
        GradMap<double> g;
        g["w"] = Tensor<double>(Shape{1}, std::vector<double>{1.0});
        OptimState<double> st;
        st.lr = 0.1;
        st.weight_decay = 0.0;
        adamw_step(p, g, st);
        CHECK(p.at("w").data[0] == Catch::Approx(1.0 - 0.1 * 1.0 / (1.0 + 1e-8)).epsilon(1e-12));
        CHECK(st.t == 1);
    }
    SECTION("zero gradient leaves parameters unchanged without decay") {
        ParamSet<double> p;
        p.add("w", Tensor<double>(Shape{3}, std::vector<double>{0.5, -2.0, 7.0}));
        GradMap<double> g;
        g["w"] = Tensor<double>::zeros(Shape{3});
        OptimState<double> st;
        st.lr = 0.1;
        st.weight_decay = 0.0;
        adamw_step(p, g, st);
        CHECK(p.at("w").data[0] == 0.5);
        CHECK(p.at("w").data[1] == -2.0);
        CHECK(p.at("w").data[2] == 7.0);
    }
    SECTION("decoupled decay with zero gradient") {
        ParamSet<double> p;
        p.add("w", Tensor<double>(Shape{1}, std::vector<double>{4.0}));
        GradMap<double> g;
        g["w"] = Tensor<double>::zeros(Shape{1});
        OptimState<double> st;
        st.lr = 0.1;
        st.weight_decay = 0.01;
        adamw_step(p, g, st);
        CHECK(p.at("w").data[0] == Catch::Approx(4.0 * (1.0 - 0.1 * 0.01)).epsilon(1e-14));
    }
    SECTION("frozen entries are not touched") {
        ParamSet<double> p;
        p.add("w", Tensor<double>(Shape{1}, std::vector<double>{1.0}), /*trainable=*/false);
        GradMap<double> g;
        g["w"] = Tensor<double>(Shape{1}, std::vector<double>{1.0});
        OptimState<double> st;
        adamw_step(p, g, st);
        CHECK(p.at("w").data[0] == 1.0);
    }
    SECTION("gradient shape mismatch is a contract violation") {
        ParamSet<double> p;
        p.add("w", Tensor<double>(Shape{2}, 1.0));
        GradMap<double> g;
        g["w"] = Tensor<double>(Shape{3}, 1.0);
        OptimState<double> st;
        CHECK_THROWS_AS(adamw_step(p, g, st), ContractViolation);
    }
}

TEST_CASE("adamw with zero weight decay matches a textbook adam oracle bitwise") {
    Rng rng(11);
    ParamSet<double> p;
    p.add("w", Tensor<double>::randn({4, 3}, rng));
    std::vector<double> theta(p.at("w").data.begin(), p.at("w").data.end());

    OptimState<double> st;
    st.lr = 0.05;
    st.weight_decay = 0.0;

    // independent textbook Adam, same update ordering
    std::vector<double> m(theta.size(), 0.0), v(theta.size(), 0.0);
    for (int step = 1; step <= 25; ++step) {
        GradMap<double> g;
        g["w"] = Tensor<double>::randn({4, 3}, rng);
        const auto& gd = g["w"].data;
        for (std::size_t j = 0; j < theta.size(); ++j) {
            m[j] = st.beta1 * m[j] + (1 - st.beta1) * gd[j];
            v[j] = st.beta2 * v[j] + (1 - st.beta2) * gd[j] * gd[j];
            const double mhat = m[j] / (1.0 - std::pow(st.beta1, step));
            const double vhat = v[j] / (1.0 - std::pow(st.beta2, step));
            theta[j] -= st.lr * (mhat / (std::sqrt(vhat) + st.eps));
        }
        adamw_step(p, g, st);
        for (std::size_t j = 0; j < theta.size(); ++j) {
            REQUIRE(p.at("w").data[j] == theta[j]);  // bitwise
        }
    }
}

TEST_CASE("identical seeds give bitwise-identical training trajectories") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        ParamSet<double> p;
        p.add("w", Tensor<double>::randn({3, 3}, rng));
        p.add("b", Tensor<double>::randn({3}, rng));
        OptimState<double> st;
        st.lr = 0.01;
        for (int step = 0; step < 20; ++step) {
            Tape64 tape;
            auto placed = place_params(tape, p);
            auto x = tape.constant(Tensor<double>::randn({5, 3}, rng));
            auto y = ag::linear(x, placed.at("w"), placed.at("b"));
            auto loss = ag::mean_all(ag::mul(y, y));
            auto grads = forward_backward(tape, loss, p, placed);
            adamw_step(p, grads, st);
        }
        std::vector<double> out = p.at("w").data;
        out.insert(out.end(), p.at("b").data.begin(), p.at("b").data.end());
        return out;
    };
    auto a = run(123), b = run(123);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a[i] == b[i]);
}

TEST_CASE("lr_at step schedule") {
    LrSchedule s;  // base 4.8e-5, decay at 300 by 0.1
    CHECK(lr_at(0, s) == Catch::Approx(4.8e-5));
    CHECK(lr_at(299, s) == Catch::Approx(4.8e-5));
    CHECK(lr_at(300, s) == Catch::Approx(4.8e-6));
    CHECK(lr_at(1000, s) == Catch::Approx(4.8e-6));
    CHECK_THROWS_AS(lr_at(-1, s), ContractViolation);
}

TEST_CASE("grad_check: quadratic passes, kink is flagged without crashing") {
    SECTION("f(x) = x^2 at x = 3") {
        ParamSet<double> p;
        p.add("x", Tensor<double>(Shape{1}, std::vector<double>{3.0}));
        auto fn = [](Tape64&, const PlacedParams<double>& pp) {
            return ag::sum_all(ag::mul(pp.at("x"), pp.at("x")));
        };
        auto report = grad_check<double>(fn, p, 1e-5, 1e-4);
        CHECK(report.pass);
        CHECK(report.params[0].analytic == Catch::Approx(6.0));
        CHECK(report.params[0].fd == Catch::Approx(6.0).margin(1e-6));
    }
    SECTION("f(x) = |x| at x = 0 reports a large error, no crash") {
        ParamSet<double> p;
        p.add("x", Tensor<double>(Shape{1}, std::vector<double>{0.0}));
        auto fn = [](Tape64&, const PlacedParams<double>& pp) {
            return ag::sum_all(ag::abs_(pp.at("x")));
        };
        auto report = grad_check<double>(fn, p, 1e-5, 1e-4);
        CHECK_FALSE(report.pass);
        CHECK(report.params[0].max_rel_err > 0.5);
    }
}

TEST_CASE("rng state round-trips through its string form") {
    Rng a(42);
    for (int i = 0; i < 7; ++i) a.next_u64();
    Rng b;
    b.restore(a.state());
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
}
