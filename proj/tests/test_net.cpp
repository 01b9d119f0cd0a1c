#include "doctest.h"

#include <cmath>
#include <limits>
#include <numbers>

#include "apex/errors.hpp"
#include "apex/losses.hpp"
#include "apex/net.hpp"
#include "support.hpp"

using namespace apex;
using apex::test::max_abs_diff;
using apex::test::vec;

namespace {

Architecture small_arch(Activation act = Activation::Tanh) {
    Architecture a;
    a.data_dim = 2;
    a.embed_dim = 2;
    a.conditions = 2;
    a.time_freqs = 2;
    a.hidden = {4, 3};
    a.activation = act;
    return a;
}

Batch fixed_batch(std::uint64_t seed, Eigen::Index n) {
    Rng rng(seed);
    return sample_batch(OracleDist::two_gaussians_toy(), n, 0.05, 0.95, rng);
}

}  // namespace

TEST_SUITE("net") {

TEST_CASE("shift_condition examples") {
    CHECK(shift_condition(vec({1, -1}), {-0.5, 1.0}) == vec({0.5, 1.5}));
    CHECK(shift_condition(vec({0, 0}), {2.0, 0.0}) == vec({0, 0}));
    CHECK(shift_condition(vec({3}), {1.0, 0.0}) == vec({3}));
    CHECK_THROWS_AS(shift_condition(vec({1}), {std::nan(""), 0.0}), InvalidArgument);
}

TEST_CASE("shift_condition is affine") {
    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
        const Vector c1 = standard_normal(4, rng);
        const Vector c2 = standard_normal(4, rng);
        const ShiftSpec s{uniform(-2, 2, rng), uniform(-2, 2, rng)};
        const double alpha = uniform(-1, 1, rng);
        const Vector lhs = shift_condition(alpha * c1 + (1 - alpha) * c2, s);
        const Vector rhs = alpha * shift_condition(c1, s) + (1 - alpha) * shift_condition(c2, s);
        CHECK(max_abs_diff(lhs, rhs) < 1e-13);
    }
}

TEST_CASE("parameter layout and counts") {
    const Architecture a = small_arch();
    CHECK(a.input_dim() == 2 + 4 + 2);
    CHECK(a.network_param_count() == 4 * 9 + 3 * 5 + 2 * 4);
    CHECK(a.param_count() == a.network_param_count() + 4);
    CHECK_THROWS_AS(VelocityModel(a, Vector::Zero(3)), InvalidArgument);
    Architecture bad = a;
    bad.hidden = {0};
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    CHECK(Architecture{}.param_count() == 128 * 27 + 128 * 129 + 2 * 129 + 16);
}

TEST_CASE("zero parameters give zero output") {
    const Architecture a = small_arch();
    const VelocityModel m(a, Vector::Zero(static_cast<Eigen::Index>(a.param_count())));
    CHECK(forward(m, vec({1.0, -2.0}), 0.3, vec({0.5, 0.5})).norm() == 0.0);
}

TEST_CASE("initialization is deterministic per seed") {
    const Architecture a = small_arch();
    const VelocityModel m1 = VelocityModel::initialize(a, 9);
    const VelocityModel m2 = VelocityModel::initialize(a, 9);
    const VelocityModel m3 = VelocityModel::initialize(a, 10);
    CHECK(m1.params() == m2.params());
    CHECK(m1.params() != m3.params());
    CHECK(forward(m1, vec({1, 1}), 0.4, m1.embedding(0)) == forward(m2, vec({1, 1}), 0.4, m2.embedding(0)));
}

TEST_CASE("single linear layer matches a hand computation") {
    Architecture a;
    a.data_dim = 2;
    a.embed_dim = 2;
    a.conditions = 1;
    a.time_freqs = 2;
    a.hidden = {};
    Rng rng(21);
    VelocityModel m(a, standard_normal(static_cast<Eigen::Index>(a.param_count()), rng));
    const Vector x = vec({0.3, -1.1});
    const Vector c = vec({0.7, 0.2});
    const double t = 0.37;
    Vector feat(8);
    feat << x[0], x[1], std::sin(0.5 * std::numbers::pi * t), std::sin(std::numbers::pi * t),
        std::cos(0.5 * std::numbers::pi * t), std::cos(std::numbers::pi * t), c[0], c[1];
    Vector expected(2);
    for (int i = 0; i < 2; ++i) {
        expected[i] = m.params()[16 + i];
        for (int j = 0; j < 8; ++j) expected[i] += m.params()[j * 2 + i] * feat[j];
    }
    CHECK(max_abs_diff(forward(m, x, t, c), expected) < 1e-14);
    CHECK(max_abs_diff(time_features(t, 2), feat.segment(2, 4)) == 0.0);
}

TEST_CASE("batched forward equals per-sample forward") {
    const VelocityModel m = VelocityModel::initialize(small_arch(), 4);
    Rng rng(8);
    Matrix x(2, 5), c(2, 5);
    Vector t(5);
    for (int b = 0; b < 5; ++b) {
        x.col(b) = standard_normal(2, rng);
        c.col(b) = standard_normal(2, rng);
        t[b] = uniform(0, 1, rng);
    }
    const Matrix out = forward_batch(m, x, t, c);
    for (int b = 0; b < 5; ++b) CHECK(max_abs_diff(out.col(b), forward(m, x.col(b), t[b], c.col(b))) < 1e-14);
    CHECK_THROWS_AS(forward_batch(m, x, t.head(4), c), InvalidArgument);
}

TEST_CASE("grad of a quadratic in the parameters is the parameters") {
    const VelocityModel m = VelocityModel::initialize(small_arch(), 2);
    const Objective quad = [](const VelocityModel& model, Vector* g) {
        if (g) *g = model.params();
        return 0.5 * model.params().squaredNorm();
    };
    CHECK(grad(m, quad) == m.params());
    const Objective constant = [](const VelocityModel& model, Vector* g) {
        if (g) *g = Vector::Zero(model.params().size());
        return 3.0;
    };
    CHECK(grad(m, constant).norm() == 0.0);
}

TEST_CASE("grad raises NumericFailure on non-finite values") {
    const VelocityModel m = VelocityModel::initialize(small_arch(), 2);
    const Objective nan_loss = [](const VelocityModel& model, Vector* g) {
        if (g) *g = Vector::Zero(model.params().size());
        return std::numeric_limits<double>::quiet_NaN();
    };
    CHECK_THROWS_AS(grad(m, nan_loss), NumericFailure);
    const Objective inf_grad = [](const VelocityModel& model, Vector* g) {
        if (g) {
            *g = Vector::Zero(model.params().size());
            (*g)[7] = std::numeric_limits<double>::infinity();
        }
        return 1.0;
    };
    try {
        grad(m, inf_grad);
        FAIL("expected NumericFailure");
    } catch (const NumericFailure& e) {
        CHECK(e.index() == 7);
    }
}

TEST_CASE("flow-matching gradient agrees with central differences") {
    for (Activation act : {Activation::Tanh, Activation::Silu}) {
        const VelocityModel m = VelocityModel::initialize(small_arch(act), 12);
        const Batch batch = fixed_batch(5, 8);
        const Objective obj = [&](const VelocityModel& model, Vector* g) { return l_fm(model, batch, g); };
        const FiniteDiffReport r = check_finite_diff(m, obj, 1e-5, 1e-4);
        CHECK(r.pass);
        CHECK(r.failures.empty());
        CHECK(r.checked == m.arch().param_count());
    }
}

TEST_CASE("a corrupted gradient is caught") {
    const VelocityModel m = VelocityModel::initialize(small_arch(), 12);
    const Batch batch = fixed_batch(5, 8);
    const Objective obj = [&](const VelocityModel& model, Vector* g) { return l_fm(model, batch, g); };
    Vector g = grad(m, obj);
    g[3] += 0.1 * (std::abs(g[3]) + 1.0);
    const FiniteDiffReport r = compare_with_finite_diff(m, obj, g, 1e-5, 1e-4);
    CHECK_FALSE(r.pass);
    REQUIRE(r.failures.size() == 1);
    CHECK(r.failures[0] == 3);
}

TEST_CASE("gradients are linear in the objective") {
    const VelocityModel m = VelocityModel::initialize(small_arch(), 1);
    const Batch b1 = fixed_batch(1, 6);
    const Batch b2 = fixed_batch(2, 6);
    Vector g1, g2, g3;
    l_fm(m, b1, &g1);
    l_sup(m, b2, &g2);
    const Objective sum = [&](const VelocityModel& model, Vector* g) {
        Vector ga, gb;
        const double v = 2.0 * l_fm(model, b1, g ? &ga : nullptr) - 3.0 * l_sup(model, b2, g ? &gb : nullptr);
        if (g) *g = 2.0 * ga - 3.0 * gb;
        return v;
    };
    g3 = grad(m, sum);
    CHECK(max_abs_diff(g3, 2.0 * g1 - 3.0 * g2) < 1e-13);
}

TEST_CASE("input Jacobian product agrees with central differences") {
    const VelocityModel m = VelocityModel::initialize(small_arch(), 3);
    const Vector x = vec({0.4, -0.9});
    const Vector c = m.embedding(1);
    const double t = 0.6;
    const Vector w = vec({1.3, -0.7});
    ForwardCache cache;
    Vector tt(1);
    tt[0] = t;
    forward_batch(m, x, tt, c, &cache);
    Vector gp = Vector::Zero(static_cast<Eigen::Index>(m.arch().param_count()));
    Matrix dx, dc;
    backward_batch(m, cache, w, gp, &dx, &dc);
    const double h = 1e-6;
    for (int i = 0; i < 2; ++i) {
        Vector up = x, down = x;
        up[i] += h;
        down[i] -= h;
        const double fd = (w.dot(forward(m, up, t, c)) - w.dot(forward(m, down, t, c))) / (2 * h);
        CHECK(dx(i, 0) == doctest::Approx(fd).epsilon(1e-7));
        Vector cu = c, cd = c;
        cu[i] += h;
        cd[i] -= h;
        const double fdc = (w.dot(forward(m, x, t, cu)) - w.dot(forward(m, x, t, cd))) / (2 * h);
        CHECK(dc(i, 0) == doctest::Approx(fdc).epsilon(1e-7));
    }
}

TEST_CASE("stop-gradient input behaves like a constant") {
    // l_cons with v_fake frozen equals l_cons against an externally supplied
    // constant target with the same values, in value and gradient.
    const VelocityModel m = VelocityModel::initialize(small_arch(), 6);
    const Batch batch = fixed_batch(3, 7);
    const ShiftSpec shift;
    const Detached v = fake_velocity(m, batch, shift);
    const Detached copy{Matrix(v.value)};
    Vector g1, g2;
    CHECK(l_cons(m, batch, shift, &g1) == l_cons(m, batch, copy, &g2));
    CHECK(g1 == g2);
}

TEST_CASE("activation names") {
    CHECK(activation_from_string("tanh") == Activation::Tanh);
    CHECK(activation_from_string("silu") == Activation::Silu);
    CHECK(to_string(Activation::Silu) == "silu");
    CHECK_THROWS_AS(activation_from_string("relu"), InvalidArgument);
}

}  // TEST_SUITE
