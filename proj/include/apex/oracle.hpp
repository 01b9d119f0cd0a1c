#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "apex/path.hpp"
#include "apex/rng.hpp"

namespace apex {

struct GaussianComponent {
    double weight = 1.0;
    Vector mean;
    double stdev = 1.0;  // isotropic
};

// Conditional data distribution p(x | c): one isotropic Gaussian mixture per
// condition. Immutable after construction; every query is pure.
class OracleDist {
public:
    OracleDist(int dim, std::vector<std::vector<GaussianComponent>> per_condition);

    // Single isotropic Gaussian under one condition.
    static OracleDist gaussian(const Vector& mean, double stdev);

    // K = 2 conditions, means (+2, 0) and (-2, 0), stdev 0.5.
    static OracleDist two_gaussians_toy();

    int dim() const { return dim_; }
    std::size_t conditions() const { return components_.size(); }
    const std::vector<GaussianComponent>& components(std::size_t cond) const;

    // Moments of p(x | c): mixture mean and isotropic variance (trace / d).
    Vector mean(std::size_t cond) const;
    double isotropic_variance(std::size_t cond) const;

    Vector sample_x(std::size_t cond, Rng& rng) const;

    // log p_t(x_t | c), where each component marginal at time t is
    // N((1 - t) mu, ((1 - t)^2 sigma^2 + t^2) I).
    double marginal_log_density(std::size_t cond, const Vector& x_t, double t) const;

    // Component posterior P(k | x_t, c) at time t.
    Vector responsibilities(std::size_t cond, const Vector& x_t, double t) const;

private:
    void check_cond(std::size_t cond) const;
    void check_point(const Vector& x_t, double t) const;

    int dim_;
    std::vector<std::vector<GaussianComponent>> components_;
};

// Draws (x, z): x from the condition's mixture, z ~ N(0, I) independently.
std::pair<Vector, Vector> sample_pair(const OracleDist& dist, std::size_t cond, Rng& rng);

Vector marginal_score(const OracleDist& dist, std::size_t cond, const Vector& x_t, double t);

// E[z - x | x_t] by Gaussian conditioning of the joint (x, z, x_t) within each
// component, weighted by component responsibilities. Strictly t in (0, 1).
Vector optimal_velocity(const OracleDist& dist, std::size_t cond, const Vector& x_t, double t);

// Same conditional mean, also evaluated at the endpoints t = 0 and t = 1 where
// the conditioning is still well posed. Used as the exact sampling field.
Vector conditional_velocity(const OracleDist& dist, std::size_t cond, const Vector& x_t, double t);

struct McVelocityEstimate {
    Vector velocity;
    Vector std_error;  // per coordinate
    double effective_samples = 0.0;
};

// Self-normalised importance estimate of E[z - x | x_t] using n prior draws
// of x weighted by the likelihood N(x_t; (1 - t) x, t^2 I).
McVelocityEstimate optimal_velocity_mc(const OracleDist& dist, std::size_t cond, const Vector& x_t,
                                       double t, std::size_t n, Rng& rng);

// Squared 2-Wasserstein distance between N(meanA, varA I) and N(meanB, varB I).
double gaussian_w2(const Vector& mean_a, double var_a, const Vector& mean_b, double var_b);

}  // namespace apex
