#include "doctest.h"

#include <cstring>
#include <limits>

#include "apex/errors.hpp"
#include "apex/metrics.hpp"
#include "apex/sampler.hpp"
#include "support.hpp"

using namespace apex;
using apex::test::max_abs_diff;
using apex::test::vec;

namespace {

class BlowUpField : public VelocityField {
public:
    explicit BlowUpField(double below) : below_(below) {}
    Vector operator()(const Vector& x_t, double t) const override {
        if (t < below_) return Vector::Constant(x_t.size(), std::numeric_limits<double>::quiet_NaN());
        return Vector::Zero(x_t.size());
    }

private:
    double below_;
};

}  // namespace

TEST_SUITE("sampler") {

TEST_CASE("point-mass field is integrated exactly at any step count") {
    const Vector mu = vec({1.5, -0.5});
    const apex::test::PointMassField field(mu);
    for (int n : {1, 2, 3, 7, 50}) {
        CHECK(max_abs_diff(euler_sample(field, vec({0.3, 2.0}), n).x0, mu) < 1e-12);
    }
    CHECK(max_abs_diff(one_step_sample(field, vec({-4, 4})), mu) < 1e-15);
}

TEST_CASE("zero field leaves the noise unchanged") {
    const apex::test::ZeroField field;
    const Vector z = vec({0.1, 0.2, 0.3});
    CHECK(euler_sample(field, z, 10).x0 == z);
    CHECK(one_step_sample(field, z) == z);
}

TEST_CASE("one_step_sample equals a single Euler step bitwise") {
    const VelocityModel m = VelocityModel::initialize(Architecture{}, 3);
    Rng rng(1);
    for (int i = 0; i < 10; ++i) {
        const Vector z = standard_normal(2, rng);
        const Vector a = one_step_sample(m, z, m.embedding(1));
        const Vector b = euler_sample(m, z, m.embedding(1), 1).x0;
        CHECK(std::memcmp(a.data(), b.data(), sizeof(double) * 2) == 0);
    }
}

TEST_CASE("trajectory bookkeeping") {
    const OracleDist toy = OracleDist::two_gaussians_toy();
    const OracleField exact(toy, 0);
    const CountingField counter(exact);
    const SampleResult r = euler_sample(counter, vec({0.5, 0.5}), 8);
    CHECK(counter.calls() == 8);
    CHECK(r.trajectory.nfe == 8);
    REQUIRE(r.trajectory.times.size() == 9);
    REQUIRE(r.trajectory.states.size() == 9);
    CHECK(r.trajectory.times.front() == 1.0);
    CHECK(r.trajectory.times.back() == 0.0);
    for (std::size_t k = 1; k < r.trajectory.times.size(); ++k) {
        CHECK(r.trajectory.times[k] < r.trajectory.times[k - 1]);
    }
    CHECK(r.trajectory.states.front() == vec({0.5, 0.5}));
    CHECK(r.trajectory.states.back() == r.x0);
}

TEST_CASE("non-finite states report the failing step") {
    const BlowUpField field(0.5);
    try {
        euler_sample(field, vec({1, 1}), 5);  // t = 1, 0.8, 0.6, 0.4: NaN at k = 3
        FAIL("expected NumericFailure");
    } catch (const NumericFailure& e) {
        CHECK(e.index() == 3);
    }
    CHECK_THROWS_AS(euler_sample_batch(field, Matrix::Ones(2, 3), 5), NumericFailure);
}

TEST_CASE("invalid step counts are rejected") {
    const apex::test::ZeroField field;
    CHECK_THROWS_AS(euler_sample(field, vec({0}), 0), InvalidArgument);
    CHECK_THROWS_AS(euler_sample_batch(field, Matrix::Zero(1, 2), -1), InvalidArgument);
}

TEST_CASE("batched integration matches per-sample integration") {
    const VelocityModel m = VelocityModel::initialize(Architecture{}, 5);
    const ModelField field(m, m.embedding(0));
    Rng rng(2);
    Matrix z(2, 6);
    for (int i = 0; i < 6; ++i) z.col(i) = standard_normal(2, rng);
    const Matrix xb = euler_sample_batch(field, z, 4);
    for (int i = 0; i < 6; ++i) CHECK(max_abs_diff(xb.col(i), euler_sample(field, z.col(i), 4).x0) < 1e-13);
    CHECK(max_abs_diff(field.batch(z, 0.3).col(2), field(z.col(2), 0.3)) < 1e-14);
}

TEST_CASE("exact field: W2 decreases with the number of steps") {
    const OracleDist toy = OracleDist::two_gaussians_toy();
    const OracleField exact(toy, 1);
    Rng rng(4);
    const auto rows = nfe_gap(exact, toy, 1, {1, 2, 5, 20, 50}, 4000, rng);
    REQUIRE(rows.size() == 5);
    for (std::size_t k = 1; k < rows.size(); ++k) CHECK(rows[k].w2 < rows[k - 1].w2);
    CHECK(rows.back().w2 < 0.01);
}

TEST_CASE("exact field at 200 steps reproduces the data moments") {
    const OracleDist toy = OracleDist::two_gaussians_toy();
    const OracleField exact(toy, 0);
    Rng rng(6);
    Matrix z(2, 4000);
    for (int i = 0; i < 4000; ++i) z.col(i) = standard_normal(2, rng);
    const MomentReport r = moment_report(euler_sample_batch(exact, z, 200), toy, 0);
    CHECK(r.mean_err < 0.05);
    CHECK(r.var_err < 0.02);
}

}  // TEST_SUITE
