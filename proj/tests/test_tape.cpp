#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <vector>

#include "memchain/grad_check.hpp"
#include "memchain/params.hpp"
#include "memchain/rng.hpp"
#include "memchain/tape.hpp"

using namespace memchain;

namespace {

Tensor random_vec(std::size_t n, Rng& rng, double scale = 1.0) {
    Tensor t = Tensor::zeros({n});
    for (double& v : t.data) v = scale * rng.normal(0.0, 1.0);
    return t;
}

Tensor random_mat(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
    Tensor t = Tensor::zeros({r, c});
    for (double& v : t.data) v = scale * rng.normal(0.0, 1.0);
    return t;
}

/// Keeps values away from zero so kinked ops stay differentiable under
/// finite-difference probing.
Tensor random_vec_away_from_zero(std::size_t n, Rng& rng, double min_abs = 0.05) {
    Tensor t = random_vec(n, rng);
    for (double& v : t.data)
        if (std::fabs(v) < min_abs) v = v < 0.0 ? -min_abs : min_abs;
    return t;
}

}  // namespace

TEST_CASE("elementwise forward values") {
    Tape t;
    NodeId a = t.constant(Tensor::vec({1.0, -2.0, 3.0}));
    NodeId b = t.constant(Tensor::vec({0.5, 4.0, -1.0}));
    CHECK(t.value(t.add(a, b)).data == std::vector<double>{1.5, 2.0, 2.0});
    CHECK(t.value(t.sub(a, b)).data == std::vector<double>{0.5, -6.0, 4.0});
    CHECK(t.value(t.hadamard(a, b)).data == std::vector<double>{0.5, -8.0, -3.0});
    CHECK(t.value(t.dot(a, b))[0] == Catch::Approx(1.0 * 0.5 - 2.0 * 4.0 - 3.0));
}

TEST_CASE("matvec forward matches hand computation") {
    Tape t;
    Tensor m = Tensor::zeros({2, 3});
    m.data = {1, 2, 3, 4, 5, 6};
    NodeId mv = t.matvec(t.constant(m), t.constant(Tensor::vec({1.0, 0.5, -1.0})));
    CHECK(t.value(mv)[0] == Catch::Approx(1 + 1 - 3));
    CHECK(t.value(mv)[1] == Catch::Approx(4 + 2.5 - 6));
}

TEST_CASE("matvec rejects mismatched shapes") {
    Tape t;
    NodeId m = t.constant(Tensor::zeros({2, 3}));
    NodeId v = t.constant(Tensor::zeros({2}));
    CHECK_THROWS_AS(t.matvec(m, v), DimError);
}

TEST_CASE("sigmoid is stable at extreme inputs") {
    Tape t;
    NodeId y = t.sigmoid(t.constant(Tensor::vec({1e6, -1e6, 0.0})));
    CHECK(t.value(y)[0] == Catch::Approx(1.0));
    // The clamp keeps the negative tail a tiny positive number, not a NaN.
    CHECK(t.value(y)[1] > 0.0);
    CHECK(t.value(y)[1] < 1e-300);
    CHECK(t.value(y)[2] == 0.5);
    CHECK(t.value(y).all_finite());
}

TEST_CASE("softmax sums to one and is shift invariant") {
    Tape t;
    NodeId x = t.constant(Tensor::vec({1.0, 2.0, 3.0}));
    NodeId xs = t.constant(Tensor::vec({1001.0, 1002.0, 1003.0}));
    Tensor a = t.value(t.softmax(x));
    Tensor b = t.value(t.softmax(xs));
    double sum = a[0] + a[1] + a[2];
    CHECK(sum == Catch::Approx(1.0).epsilon(1e-12));
    for (std::size_t i = 0; i < 3; ++i) CHECK(a[i] == Catch::Approx(b[i]).epsilon(1e-12));
}

TEST_CASE("l2_normalize produces unit vectors and survives the zero vector") {
    Tape t;
    Tensor y = t.value(t.l2_normalize(t.constant(Tensor::vec({3.0, 4.0}))));
    CHECK(y[0] == Catch::Approx(0.6));
    CHECK(y[1] == Catch::Approx(0.8));
    Tensor z = t.value(t.l2_normalize(t.constant(Tensor::vec({0.0, 0.0}))));
    CHECK(z[0] == 0.0);
    CHECK(z[1] == 0.0);
}

TEST_CASE("prelu convention: zero input sits on the positive side") {
    Tape t;
    ParamStore store;
    ParamId px = store.add("x", Tensor::vec({0.0, -2.0, 2.0}));
    ParamId ps = store.add("s", Tensor::vec({0.25, 0.25, 0.25}));
    NodeId x = t.leaf(store.value(px), px);
    NodeId s = t.leaf(store.value(ps), ps);
    NodeId y = t.prelu(x, s);
    CHECK(t.value(y).data == std::vector<double>{0.0, -0.5, 2.0});
    t.backward(t.sum(y));
    std::vector<Tensor> grads = t.param_grads(store.values());
    // x = 0 takes the identity branch: slope gets no gradient there.
    CHECK(grads[px].data == std::vector<double>{1.0, 0.25, 1.0});
    CHECK(grads[ps].data == std::vector<double>{0.0, -2.0, 0.0});
}

TEST_CASE("bce matches hand values and clamps") {
    Tape t;
    NodeId p = t.constant(Tensor::vec({0.8}));
    NodeId loss = t.bce(p, 1.0);
    CHECK(t.value(loss)[0] == Catch::Approx(-std::log(0.8)).epsilon(1e-12));
    // Fully confident wrong prediction stays finite thanks to the clamp.
    NodeId bad = t.bce(t.constant(Tensor::vec({0.0})), 1.0);
    CHECK(std::isfinite(t.value(bad)[0]));
}

TEST_CASE("gradients accumulate across shared subexpressions") {
    Tape t;
    ParamStore store;
    ParamId px = store.add("x", Tensor::vec({1.5}));
    NodeId x = t.leaf(store.value(px), px);
    t.backward(t.sum(t.add(x, x)));
    CHECK(t.param_grads(store.values())[px][0] == 2.0);
}

TEST_CASE("backward requires a scalar loss") {
    Tape t;
    NodeId v = t.constant(Tensor::vec({1.0, 2.0}));
    CHECK_THROWS_AS(t.backward(v), ContractError);
}

TEST_CASE("duplicate leaves of one parameter accumulate into one gradient") {
    Tape t;
    ParamStore store;
    ParamId px = store.add("x", Tensor::vec({2.0}));
    NodeId a = t.leaf(store.value(px), px);
    NodeId b = t.leaf(store.value(px), px);  // same parameter, second leaf
    t.backward(t.sum(t.hadamard(a, b)));
    CHECK(t.param_grads(store.values())[px][0] == Catch::Approx(4.0));
}

// --- finite-difference property checks, one op at a time -------------------

namespace {

/// Checks every registered parameter of `build` against central differences.
void check_op(ParamStore& store, const std::function<NodeId(Tape&)>& build,
              double tol = 1e-6) {
    GradCheckReport rep = grad_check(store, build);
    INFO("worst " << rep.worst);
    for (const GradCheckEntry& e : rep.entries) {
        INFO(e.name << " rel " << e.max_rel_err << " analytic " << e.analytic
                    << " numeric " << e.numeric);
        CHECK(e.max_rel_err < tol);
    }
}

}  // namespace

TEST_CASE("per-op gradients match finite differences") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        DYNAMIC_SECTION("seed " << seed) {
            Rng rng(seed);
            std::size_t n = 3 + rng.below(6);

            SECTION("add/sub/hadamard") {
                ParamStore store;
                ParamId pa = store.add("a", random_vec(n, rng));
                ParamId pb = store.add("b", random_vec(n, rng));
                Tensor w = random_vec(n, rng);
                check_op(store, [&](Tape& t) {
                    NodeId a = t.leaf(store.value(pa), pa);
                    NodeId b = t.leaf(store.value(pb), pb);
                    NodeId mix = t.add(t.hadamard(a, b), t.sub(a, b));
                    return t.dot(mix, t.constant(w));
                });
            }

            SECTION("matvec") {
                ParamStore store;
                std::size_t m = 2 + rng.below(5);
                ParamId pm = store.add("m", random_mat(m, n, rng));
                ParamId pv = store.add("v", random_vec(n, rng));
                Tensor w = random_vec(m, rng);
                check_op(store, [&](Tape& t) {
                    return t.dot(t.matvec(t.leaf(store.value(pm), pm),
                                          t.leaf(store.value(pv), pv)),
                                 t.constant(w));
                });
            }

            SECTION("dot") {
                ParamStore store;
                ParamId pa = store.add("a", random_vec(n, rng));
                ParamId pb = store.add("b", random_vec(n, rng));
                check_op(store, [&](Tape& t) {
                    return t.dot(t.leaf(store.value(pa), pa), t.leaf(store.value(pb), pb));
                });
            }

            SECTION("sigmoid/tanh") {
                ParamStore store;
                ParamId px = store.add("x", random_vec(n, rng, 2.0));
                Tensor w = random_vec(n, rng);
                check_op(store, [&](Tape& t) {
                    NodeId x = t.leaf(store.value(px), px);
                    return t.dot(t.add(t.sigmoid(x), t.tanh(x)), t.constant(w));
                });
            }

            SECTION("prelu") {
                ParamStore store;
                ParamId px = store.add("x", random_vec_away_from_zero(n, rng));
                ParamId ps = store.add("s", random_vec(n, rng, 0.5));
                Tensor w = random_vec(n, rng);
                check_op(store, [&](Tape& t) {
                    return t.dot(t.prelu(t.leaf(store.value(px), px),
                                         t.leaf(store.value(ps), ps)),
                                 t.constant(w));
                });
            }

            SECTION("softmax full Jacobian") {
                ParamStore store;
                ParamId px = store.add("x", random_vec(n, rng, 2.0));
                Tensor w = random_vec(n, rng);
                check_op(store, [&](Tape& t) {
                    return t.dot(t.softmax(t.leaf(store.value(px), px)), t.constant(w));
                });
            }

            SECTION("l2_normalize") {
                ParamStore store;
                ParamId px = store.add("x", random_vec_away_from_zero(n, rng));
                Tensor w = random_vec(n, rng);
                check_op(store, [&](Tape& t) {
                    return t.dot(t.l2_normalize(t.leaf(store.value(px), px)), t.constant(w));
                });
            }

            SECTION("affine/scale/scale_by/pick/concat/row/sum") {
                ParamStore store;
                ParamId px = store.add("x", random_vec(n, rng));
                ParamId pg = store.add("g", random_vec(1, rng));
                ParamId pm = store.add("m", random_mat(3, n, rng));
                Tensor w = random_vec(n, rng);
                check_op(store, [&](Tape& t) {
                    NodeId x = t.leaf(store.value(px), px);
                    NodeId g = t.leaf(store.value(pg), pg);
                    NodeId m = t.leaf(store.value(pm), pm);
                    NodeId r = t.row(m, 1);
                    NodeId mixed = t.add(t.affine(x, -1.0, 1.0), t.scale_by(g, r));
                    NodeId c = t.concat({t.pick(mixed, 0), t.sum(t.scale(mixed, 0.5))});
                    return t.dot(c, t.constant(Tensor::vec({1.25, -0.75})));
                });
            }

            SECTION("bce") {
                ParamStore store;
                Tensor p = Tensor::zeros({1});
                p[0] = 0.05 + 0.9 * rng.uniform01();  // inside the clamp band
                ParamId pp = store.add("p", p);
                double y = rng.bernoulli(0.5) ? 1.0 : 0.0;
                check_op(store, [&](Tape& t) {
                    return t.bce(t.leaf(store.value(pp), pp), y);
                });
            }

            SECTION("dropout as constant-mask hadamard") {
                ParamStore store;
                ParamId px = store.add("x", random_vec(n, rng));
                Tensor mask = Tensor::zeros({n});
                for (double& v : mask.data) v = rng.bernoulli(0.3) ? 0.0 : 2.0;
                Tensor w = random_vec(n, rng);
                check_op(store, [&](Tape& t) {
                    return t.dot(t.dropout(t.leaf(store.value(px), px), mask), t.constant(w));
                });
            }
        }
    }
}

TEST_CASE("composite expression gradient survives reuse and depth") {
    // y = normalize(W x) . softmax(x) built twice from the same leaves.
    Rng rng(42);
    ParamStore store;
    ParamId px = store.add("x", random_vec_away_from_zero(4, rng));
    ParamId pw = store.add("w", random_mat(4, 4, rng));
    check_op(store, [&](Tape& t) {
        NodeId x = t.leaf(store.value(px), px);
        NodeId w = t.leaf(store.value(pw), pw);
        NodeId a = t.dot(t.l2_normalize(t.matvec(w, x)), t.softmax(x));
        NodeId b = t.dot(t.l2_normalize(t.matvec(w, x)), t.softmax(x));
        return t.add(a, b);
    });
}
