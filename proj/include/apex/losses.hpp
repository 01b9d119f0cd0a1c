#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "apex/net.hpp"
#include "apex/oracle.hpp"
#include "apex/path.hpp"
#include "apex/rng.hpp"

namespace apex {

// B training pairs on the interpolation path, stored column-wise (d x B).
struct Batch {
    Matrix x;
    Matrix z;
    Vector t;
    Matrix x_t;
    Matrix v_data;
    std::vector<std::size_t> cond;

    Eigen::Index size() const { return t.size(); }
};

Batch make_batch(std::span<const PathPoint> points, std::span<const std::size_t> conds);

// Draws B pairs: conditions uniform over K, t ~ U[t_min, t_max].
Batch sample_batch(const OracleDist& dist, Eigen::Index size, double t_min, double t_max, Rng& rng);

// Noise (z', t') of the fake trajectory x'_t = t' z' + (1 - t') x_fake.
struct FakeNoise {
    Matrix z;
    Vector t;
};

// Fresh independent draws, or the batch's own (z, t) when `reuse` is set.
FakeNoise draw_fake_noise(const Batch& batch, Rng& rng, double t_min, double t_max, bool reuse);

// Stop-gradient marker. Losses treat the wrapped value as a constant; no
// gradient is ever propagated into whatever produced it.
struct Detached {
    Matrix value;
};

// sg(F(x_t, t, c_fake)) at the batch's real trajectory points.
Detached fake_velocity(const VelocityModel& model, const Batch& batch, const ShiftSpec& shift);

struct LossWeights {
    double lambda = 0.5;    // inner mix between data and fake targets
    double lambda_p = 1.0;  // weight of l_fake
    double lambda_e = 1.0;  // weight of l_mix

    void validate() const;
};

// Per-sample terms. Every scalar loss below is the mean of its terms.
Vector l_fm_terms(const VelocityModel& model, const Batch& batch);
Vector l_sup_terms(const VelocityModel& model, const Batch& batch);
Vector l_cons_terms(const VelocityModel& model, const Batch& batch, const Detached& v_fake);
Vector l_mix_terms(const VelocityModel& model, const Batch& batch, const Detached& v_fake, double lambda);
Vector g_apex_terms(const VelocityModel& model, const Batch& batch, const Detached& v_fake, double lambda);

// Losses that take `grad` write d(loss)/d(theta) into it (resized, overwritten).

// mean ||F(x_t, t, c) - (z - x)||^2
double l_fm(const VelocityModel& model, const Batch& batch, Vector* grad = nullptr);

// mean t(1 - t) ||F - v_data||^2, equal to mean (1/omega) ||f(F) - x||^2.
double l_sup(const VelocityModel& model, const Batch& batch, Vector* grad = nullptr);
double l_sup_endpoint(const VelocityModel& model, const Batch& batch);

// mean t(1 - t) ||F - v_fake||^2, equal to the endpoint-space form.
double l_cons(const VelocityModel& model, const Batch& batch, const Detached& v_fake,
              Vector* grad = nullptr);
double l_cons(const VelocityModel& model, const Batch& batch, const ShiftSpec& shift,
              Vector* grad = nullptr);
double l_cons_endpoint(const VelocityModel& model, const Batch& batch, const Detached& v_fake);

// Mixed endpoint target (1 - lambda) x + lambda f(v_fake, x_t, t).
Vector t_mix(const Vector& x, const Vector& v_fake, const Vector& x_t, double t, double lambda);

// mean (1/omega) ||f(F, x_t, t) - T_mix||^2, evaluated in endpoint space.
double l_mix(const VelocityModel& model, const Batch& batch, const Detached& v_fake, double lambda,
             Vector* grad = nullptr);
double l_mix(const VelocityModel& model, const Batch& batch, const ShiftSpec& shift, double lambda,
             Vector* grad = nullptr);

// (1 - lambda) l_sup + lambda l_cons on shared v_fake evaluations.
double g_apex(const VelocityModel& model, const Batch& batch, const Detached& v_fake, double lambda,
              Vector* grad = nullptr);
double g_apex(const VelocityModel& model, const Batch& batch, const ShiftSpec& shift, double lambda,
              Vector* grad = nullptr);

// mean ||F(x'_t, t', c_fake) - (z' - x_fake)||^2 with x_fake = x_t - t F(x_t, t, c).
// The gradient flows through both network evaluations.
double l_fake(const VelocityModel& model, const Batch& batch, const ShiftSpec& shift,
              const FakeNoise& noise, Vector* grad = nullptr);

struct FakeBranch {
    Vector x_fake;    // carries gradient through F(x_t, t, c)
    Vector z_fake;
    double t_fake = 0.0;
    Vector x_t_fake;
    Vector v_fake;    // sg(F(x_t_fake, t_fake, c_fake))
};

FakeBranch make_fake(const VelocityModel& model, const PathPoint& point, const Vector& c,
                     const Vector& c_fake, const Vector& z_fake, double t_fake);

struct LossReport {
    double l_fm = 0.0;
    double l_fake = 0.0;
    double l_sup = 0.0;
    double l_cons = 0.0;
    double l_mix = 0.0;
    double g_apex = 0.0;
    double l_apex = 0.0;
    double delta_v_norm = 0.0;  // mean ||v_fake - v_theta|| over the batch
    LossWeights weights;
    Eigen::Index batch_size = 0;
    double t_mean = 0.0;
    double t_min = 0.0;
    double t_max = 0.0;
};

// lambda_p l_fake + lambda_e l_mix, with every sub-term recorded.
LossReport l_apex(const VelocityModel& model, const Batch& batch, const ShiftSpec& shift,
                  const LossWeights& weights, const FakeNoise& noise, Vector* grad = nullptr);

// v_fake(x_t, t, c_fake) - v_theta(x_t, t, c).
Vector delta_v(const VelocityModel& model, const Vector& x_t, double t, const Vector& c,
               const Vector& c_fake);

struct ScoreSet {
    Vector s_theta;
    Vector s_fake;
    Vector s_data;
    Vector s_mix;
};

ScoreSet induced_scores(const VelocityModel& model, const Vector& x_t, double t, std::size_t cond,
                        const ShiftSpec& shift, const OracleDist& oracle, double lambda);

struct FisherEstimate {
    double value = 0.0;
    double std_error = 0.0;
    std::size_t samples = 0;
};

// Monte-Carlo mean of ||s_theta - s_mix||^2 over points of the model's fake
// trajectory: x_fake from a real pair at t ~ U[t_min, t_max], then a fresh
// (z', t') puts it back on the path.
FisherEstimate fisher_estimate(const VelocityModel& model, const OracleDist& oracle, std::size_t cond,
                               const ShiftSpec& shift, double lambda, std::size_t n_samples, Rng& rng,
                               double t_min = kDefaultTMin, double t_max = kDefaultTMax);

}  // namespace apex
