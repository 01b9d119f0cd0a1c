#include "doctest.h"

#include <array>
#include <cmath>
#include <vector>

#include "apex/errors.hpp"
#include "apex/losses.hpp"
#include "support.hpp"

using namespace apex;
using apex::test::constant_model;
using apex::test::linear_model;
using apex::test::max_abs_diff;
using apex::test::vec;

namespace {

// A batch of 1D pairs (x, z, t), all under condition 0.
Batch batch_1d(std::initializer_list<std::array<double, 3>> rows) {
    std::vector<PathPoint> pts;
    std::vector<std::size_t> conds;
    for (const auto& r : rows) {
        pts.push_back(interpolate(vec({r[0]}), vec({r[1]}), r[2]));
        conds.push_back(0);
    }
    return make_batch(pts, conds);
}

Detached detached_1d(std::initializer_list<double> values) {
    Matrix m(1, static_cast<Eigen::Index>(values.size()));
    Eigen::Index i = 0;
    for (double v : values) m(0, i++) = v;
    return {m};
}

Architecture small_arch() {
    Architecture a;
    a.data_dim = 2;
    a.embed_dim = 2;
    a.conditions = 2;
    a.time_freqs = 2;
    a.hidden = {4};
    return a;
}

Batch toy_batch(std::uint64_t seed, Eigen::Index n) {
    Rng rng(seed);
    return sample_batch(OracleDist::two_gaussians_toy(), n, 0.05, 0.95, rng);
}

}  // namespace

TEST_SUITE("losses") {

TEST_CASE("1D examples with a constant model") {
    // x = 1, z = 2, t = 0.5: x_t = 1.5, v_data = 1.
    const Batch b = batch_1d({{1, 2, 0.5}});
    const VelocityModel zero = constant_model(0.0);
    const VelocityModel one = constant_model(1.0);

    CHECK(l_fm(zero, batch_1d({{0, 2, 0.3}})) == 4.0);
    CHECK(l_sup(one, b) == 0.0);
    CHECK(l_sup(constant_model(3.0), b) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(l_cons(zero, b, detached_1d({2.0})) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(l_cons(one, b, ShiftSpec{}) == 0.0);

    // T_mix = 0.5 * 1 + 0.5 * (1.5 - 0.5 * 0) = 1.25, endpoint 1.5, omega = 1.
    CHECK(t_mix(vec({1}), vec({0}), vec({1.5}), 0.5, 0.5)[0] == 1.25);
    CHECK(l_mix(zero, b, detached_1d({0.0}), 0.5) == doctest::Approx(0.0625).epsilon(1e-15));
    CHECK(g_apex(zero, b, detached_1d({0.0}), 0.5) == doctest::Approx(0.125).epsilon(1e-15));
}

TEST_CASE("fake branch examples") {
    const PathPoint p = interpolate(vec({1}), vec({2}), 0.5);
    const VelocityModel zero = constant_model(0.0);
    const FakeBranch fb = make_fake(zero, p, vec({0}), vec({1}), vec({0}), 0.5);
    CHECK(fb.x_fake[0] == 1.5);
    CHECK(fb.x_t_fake[0] == 0.75);
    CHECK(fb.v_fake[0] == 0.0);

    const Batch b = batch_1d({{1, 2, 0.5}});
    const FakeNoise noise{Matrix::Zero(1, 1), vec({0.5})};
    CHECK(l_fake(zero, b, ShiftSpec{}, noise) == 2.25);
    CHECK_THROWS_AS(make_fake(zero, interpolate(vec({1}), vec({2}), 0.0), vec({0}), vec({1}), vec({0}), 0.5),
                    InvalidArgument);
    CHECK_THROWS_AS(make_fake(zero, p, vec({0}), vec({1}), vec({0}), 1.5), InvalidArgument);
}

TEST_CASE("hand gradients of the constant model") {
    const Batch b = batch_1d({{1, 2, 0.5}});
    const VelocityModel zero = constant_model(0.0);
    const auto k = apex::test::constant_model_bias_index(zero);
    Vector g;
    // d/dtheta of t(1 - t)(theta - 0.5)^2 at 0 = 2 * 0.25 * (-0.5).
    l_mix(zero, b, detached_1d({0.0}), 0.5, &g);
    CHECK(g[k] == doctest::Approx(-0.25).epsilon(1e-15));
    g_apex(zero, b, detached_1d({0.0}), 0.5, &g);
    CHECK(g[k] == doctest::Approx(-0.25).epsilon(1e-15));
    l_fm(zero, b, &g);
    CHECK(g[k] == doctest::Approx(-2.0).epsilon(1e-15));
    // (theta - (z' - x_t + t theta))^2 with z' = 0, t = t' = 0.5: d/dtheta = 2 (0.5 theta + 1.5) * 0.5 = 1.5.
    l_fake(zero, b, ShiftSpec{}, FakeNoise{Matrix::Zero(1, 1), vec({0.5})}, &g);
    CHECK(g[k] == doctest::Approx(1.5).epsilon(1e-15));
}

TEST_CASE("hand oracle: x = 2, z = 0, t = 0.5, v_fake = 0, lambda = 0.5") {
    // x_t = 1, v_data = -2. Endpoint 1 vs T_mix = 0.5 * 2 + 0.5 * 1 = 1.5 gives 0.25;
    // 0.5 * 0.25 * 4 = 0.5; both derivatives 2 * 0.25 * (0 - (-1)) = 0.5.
    const Batch b = batch_1d({{2, 0, 0.5}});
    const VelocityModel zero = constant_model(0.0);
    const auto k = apex::test::constant_model_bias_index(zero);
    Vector gm, ga;
    CHECK(l_mix(zero, b, detached_1d({0.0}), 0.5, &gm) == 0.25);
    CHECK(g_apex(zero, b, detached_1d({0.0}), 0.5, &ga) == 0.5);
    CHECK(gm[k] == 0.5);
    CHECK(ga[k] == 0.5);
}

TEST_CASE("a perfect point-mass model maps the fake endpoint to the data") {
    // Point mass at mu: exact velocity (x_t - mu) / t; at t = 0.5 that is 2 x_t - 2 mu.
    const Vector mu = vec({0.7, -1.2});
    const VelocityModel m = linear_model(2, 2.0, -2.0 * mu);
    Rng rng(1);
    for (int i = 0; i < 20; ++i) {
        const PathPoint p = interpolate(mu, standard_normal(2, rng), 0.5);
        const FakeBranch fb = make_fake(m, p, vec({0}), vec({1}), standard_normal(2, rng), 0.3);
        CHECK(max_abs_diff(fb.x_fake, mu) < 1e-14);
    }
}

TEST_CASE("x_fake derivative agrees with finite differences") {
    const VelocityModel m = VelocityModel::initialize(small_arch(), 31);
    const PathPoint p = interpolate(vec({2.1, 0.2}), vec({-0.3, 0.8}), 0.4);
    const Vector c = m.embedding(0);
    const Vector w = vec({0.6, -1.4});
    // d(w . x_fake)/dtheta = -t w . dF/dtheta.
    ForwardCache cache;
    forward_batch(m, p.x_t, vec({0.4}), c, &cache);
    Vector g = Vector::Zero(static_cast<Eigen::Index>(m.arch().param_count()));
    backward_batch(m, cache, -0.4 * w, g);
    const Objective obj = [&](const VelocityModel& model, Vector*) {
        return w.dot(make_fake(model, p, c, c, vec({0, 0}), 0.5).x_fake);
    };
    const Vector net = g.head(static_cast<Eigen::Index>(m.arch().network_param_count()));
    const FiniteDiffReport r = compare_with_finite_diff(m, obj, g, 1e-6, 1e-5);
    CHECK(r.pass);
    CHECK(net.norm() > 0.0);
}

TEST_CASE("scalar losses are means of per-sample terms") {
    const VelocityModel m = VelocityModel::initialize(small_arch(), 2);
    const Batch b = toy_batch(4, 9);
    const Detached v = fake_velocity(m, b, ShiftSpec{});
    const Matrix f = forward_batch(m, b.x_t, b.t, [&] {
        Matrix c(2, 9);
        for (int i = 0; i < 9; ++i) c.col(i) = m.embedding(b.cond[static_cast<std::size_t>(i)]);
        return c;
    }());
    double sup = 0, cons = 0, fm = 0;
    for (int i = 0; i < 9; ++i) {
        const double w = b.t[i] * (1 - b.t[i]);
        fm += (f.col(i) - b.v_data.col(i)).squaredNorm() / 9;
        sup += w * (f.col(i) - b.v_data.col(i)).squaredNorm() / 9;
        cons += w * (f.col(i) - v.value.col(i)).squaredNorm() / 9;
    }
    CHECK(l_fm(m, b) == doctest::Approx(fm).epsilon(1e-13));
    CHECK(l_sup(m, b) == doctest::Approx(sup).epsilon(1e-13));
    CHECK(l_cons(m, b, v) == doctest::Approx(cons).epsilon(1e-13));
    CHECK(l_mix(m, b, v, 0.3) == doctest::Approx(l_mix_terms(m, b, v, 0.3).mean()).epsilon(1e-13));
    CHECK(g_apex(m, b, v, 0.3) == doctest::Approx(g_apex_terms(m, b, v, 0.3).mean()).epsilon(1e-13));
    CHECK(g_apex(m, b, v, 0.3) == doctest::Approx(0.7 * sup + 0.3 * cons).epsilon(1e-13));
}

TEST_CASE("endpoint and velocity forms agree") {
    const VelocityModel m = VelocityModel::initialize(small_arch(), 8);
    const Batch b = toy_batch(6, 32);
    const Detached v = fake_velocity(m, b, ShiftSpec{0.5, 0.1});
    CHECK(std::abs(l_sup(m, b) - l_sup_endpoint(m, b)) < 1e-12 * (1 + l_sup(m, b)));
    CHECK(std::abs(l_cons(m, b, v) - l_cons_endpoint(m, b, v)) < 1e-12 * (1 + l_cons(m, b, v)));
}

TEST_CASE("g_apex exceeds l_mix by the lambda(1 - lambda) gap, sample by sample") {
    const VelocityModel m = VelocityModel::initialize(small_arch(), 8);
    const Batch b = toy_batch(7, 16);
    const Detached v = fake_velocity(m, b, ShiftSpec{});
    for (double lambda : {0.0, 0.25, 0.5, 1.0}) {
        const Vector mix = l_mix_terms(m, b, v, lambda);
        const Vector gap = g_apex_terms(m, b, v, lambda) - mix;
        for (int i = 0; i < 16; ++i) {
            const double expected = lambda * (1 - lambda) * b.t[i] * (1 - b.t[i]) *
                                    (b.v_data.col(i) - v.value.col(i)).squaredNorm();
            CHECK(std::abs(gap[i] - expected) < 1e-12 * (1 + mix[i]));
        }
    }
}

TEST_CASE("lambda = 0 reduces both objectives to l_sup") {
    const VelocityModel m = VelocityModel::initialize(small_arch(), 9);
    const Batch b = toy_batch(8, 16);
    const Detached v = fake_velocity(m, b, ShiftSpec{});
    const Vector sup = l_sup_terms(m, b);
    CHECK(max_abs_diff(l_mix_terms(m, b, v, 0.0), sup) < 1e-12);
    CHECK(max_abs_diff(g_apex_terms(m, b, v, 0.0), sup) < 1e-15);
    CHECK_THROWS_AS(l_mix(m, b, v, 1.5), InvalidArgument);
}

TEST_CASE("l_apex combines its parts with the given weights") {
    const VelocityModel m = VelocityModel::initialize(small_arch(), 10);
    const Batch b = toy_batch(9, 12);
    Rng rng(1);
    const FakeNoise noise = draw_fake_noise(b, rng, 0.05, 0.95, false);
    const ShiftSpec shift;
    const double fake = l_fake(m, b, shift, noise);
    const double mix = l_mix(m, b, shift, 0.5);

    Vector g10, g01, g11, gf, gm;
    const LossReport r10 = l_apex(m, b, shift, {0.5, 1.0, 0.0}, noise, &g10);
    const LossReport r01 = l_apex(m, b, shift, {0.5, 0.0, 1.0}, noise, &g01);
    const LossReport r23 = l_apex(m, b, shift, {0.5, 2.0, 3.0}, noise, &g11);
    l_fake(m, b, shift, noise, &gf);
    l_mix(m, b, shift, 0.5, &gm);
    CHECK(r10.l_apex == doctest::Approx(fake).epsilon(1e-13));
    CHECK(r01.l_apex == doctest::Approx(mix).epsilon(1e-13));
    CHECK(r23.l_apex == doctest::Approx(2 * fake + 3 * mix).epsilon(1e-13));
    CHECK(max_abs_diff(g10, gf) < 1e-12);
    CHECK(max_abs_diff(g01, gm) < 1e-12);
    CHECK(max_abs_diff(g11, 2 * gf + 3 * gm) < 1e-11);
    CHECK(r23.l_fm == doctest::Approx(l_fm(m, b)).epsilon(1e-13));
    CHECK(r23.g_apex == doctest::Approx(g_apex(m, b, shift, 0.5)).epsilon(1e-13));
    CHECK(r23.batch_size == 12);
    CHECK(r23.t_min >= 0.05);
    CHECK(r23.t_max <= 0.95);
    CHECK_THROWS_AS(l_apex(m, b, shift, {0.5, -1.0, 1.0}, noise), InvalidArgument);
}

TEST_CASE("stop-gradient: frozen v_fake gradient differs from differentiating through it") {
    const VelocityModel m = VelocityModel::initialize(small_arch(), 11);
    const Batch b = toy_batch(3, 10);
    const ShiftSpec shift{0.5, 0.2};
    Vector g_shift, g_frozen;
    l_cons(m, b, shift, &g_shift);
    l_cons(m, b, fake_velocity(m, b, shift), &g_frozen);
    CHECK(g_shift == g_frozen);

    // Finite differences that let v_fake move see a different gradient.
    const Objective live = [&](const VelocityModel& model, Vector*) { return l_cons(model, b, shift); };
    const FiniteDiffReport r = compare_with_finite_diff(m, live, g_frozen, 1e-6, 1e-4);
    CHECK_FALSE(r.pass);
}

TEST_CASE("l_fake and l_apex gradients agree with finite differences") {
    const VelocityModel m = VelocityModel::initialize(small_arch(), 12);
    const Batch b = toy_batch(11, 8);
    Rng rng(2);
    const FakeNoise noise = draw_fake_noise(b, rng, 0.05, 0.95, false);
    const ShiftSpec shift{-0.5, 1.0};
    const Objective fake = [&](const VelocityModel& model, Vector* g) {
        return l_fake(model, b, shift, noise, g);
    };
    CHECK(check_finite_diff(m, fake, 1e-5, 1e-4).pass);

    // l_apex with v_fake frozen at the base parameters for the l_mix part.
    const Detached v = fake_velocity(m, b, shift);
    const Objective frozen = [&](const VelocityModel& model, Vector*) {
        return 0.7 * l_fake(model, b, shift, noise) + 1.3 * l_mix(model, b, v, 0.5);
    };
    Vector g;
    l_apex(m, b, shift, {0.5, 0.7, 1.3}, noise, &g);
    const FiniteDiffReport r = compare_with_finite_diff(m, frozen, g, 1e-5, 1e-4);
    CHECK(r.pass);
    CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("fake noise reuse and fresh draws") {
    const Batch b = toy_batch(1, 5);
    Rng rng(3);
    const FakeNoise reuse = draw_fake_noise(b, rng, 0.01, 0.99, true);
    CHECK(reuse.z == b.z);
    CHECK(reuse.t == b.t);
    const FakeNoise fresh = draw_fake_noise(b, rng, 0.01, 0.99, false);
    CHECK(fresh.z != b.z);
    CHECK(fresh.t.minCoeff() >= 0.01);
    CHECK(fresh.t.maxCoeff() <= 0.99);
}

TEST_CASE("delta_v") {
    const VelocityModel lin = linear_model(2, 1.5, vec({0.1, 0.2}), 2, 2);
    CHECK(delta_v(lin, vec({1, 2}), 0.4, vec({1, 0}), vec({0, 1})).norm() == 0.0);
    const VelocityModel m = VelocityModel::initialize(small_arch(), 4);
    const Vector c = m.embedding(0);
    CHECK(delta_v(m, vec({1, 2}), 0.4, c, c).norm() == 0.0);
    const Vector c_fake = shift_condition(c, ShiftSpec{});
    CHECK(max_abs_diff(delta_v(m, vec({1, 2}), 0.4, c, c_fake),
                       forward(m, vec({1, 2}), 0.4, c_fake) - forward(m, vec({1, 2}), 0.4, c)) == 0.0);
}

TEST_CASE("induced scores of the exact Gaussian velocity") {
    const double t = 0.3;
    const double denom = t * t + (1 - t) * (1 - t);
    const OracleDist std_normal = OracleDist::gaussian(vec({0}), 1.0);
    const VelocityModel m = linear_model(1, (2 * t - 1) / denom, vec({0}));
    for (double x : {-2.0, -0.5, 0.0, 1.0, 3.0}) {
        const ScoreSet s = induced_scores(m, vec({x}), t, 0, ShiftSpec{}, std_normal, 0.5);
        CHECK(std::abs(s.s_theta[0] - s.s_data[0]) < 1e-6);
        CHECK(std::abs(s.s_data[0] + x / denom) < 1e-12);
        CHECK(s.s_fake == s.s_theta);
        CHECK(max_abs_diff(s.s_mix, 0.5 * s.s_data + 0.5 * s.s_fake) == 0.0);
    }
    CHECK_THROWS_AS(induced_scores(m, vec({0}), 1.0, 0, ShiftSpec{}, std_normal, 0.5), SingularTimeError);
    CHECK_THROWS_AS(induced_scores(m, vec({0}), 0.0, 0, ShiftSpec{}, std_normal, 0.5), SingularTimeError);
}

TEST_CASE("fisher estimate") {
    const OracleDist toy = OracleDist::two_gaussians_toy();
    // A condition-blind model at lambda = 1 has s_mix = s_fake = s_theta.
    const VelocityModel blind = linear_model(2, 0.4, vec({0.3, 0}), 2, 2);
    Rng r0(1);
    CHECK(fisher_estimate(blind, toy, 0, ShiftSpec{}, 1.0, 1000, r0).value == 0.0);

    const VelocityModel m = VelocityModel::initialize(small_arch(), 5);
    Rng a(9), b(9);
    const FisherEstimate e1 = fisher_estimate(m, toy, 1, ShiftSpec{}, 0.5, 20000, a);
    const FisherEstimate e2 = fisher_estimate(m, toy, 1, ShiftSpec{}, 0.5, 20000, b);
    CHECK(e1.value == e2.value);
    CHECK(e1.samples == 20000);
    Rng c(10);
    const FisherEstimate e3 = fisher_estimate(m, toy, 1, ShiftSpec{}, 0.5, 40000, c);
    CHECK(std::abs(e3.value - e1.value) < 2.0 * std::hypot(e1.std_error, e3.std_error) + 1e-12);
    CHECK(e1.std_error > 0.0);
    CHECK_THROWS_AS(fisher_estimate(m, toy, 1, ShiftSpec{}, 0.5, 0, c), InvalidArgument);
}

TEST_CASE("empty and mismatched batches are rejected") {
    std::vector<PathPoint> none;
    std::vector<std::size_t> conds;
    CHECK_THROWS_AS(make_batch(none, conds), InvalidArgument);
    const VelocityModel m = VelocityModel::initialize(small_arch(), 1);
    const Batch b = toy_batch(1, 4);
    CHECK_THROWS_AS(l_cons(m, b, detached_1d({1.0})), InvalidArgument);
    Batch bad = b;
    bad.cond[0] = 7;
    CHECK_THROWS_AS(l_fm(m, bad), InvalidArgument);
}

}  // TEST_SUITE
