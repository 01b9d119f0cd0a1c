#include "apex/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "apex/errors.hpp"

namespace apex {

namespace {

double component_variance(const GaussianComponent& c, double t) {
    const double s = 1.0 - t;
    return s * s * c.stdev * c.stdev + t * t;
}

// Per-component log N(x_t; (1 - t) mu, var I) plus log weight.
Vector component_log_terms(const std::vector<GaussianComponent>& comps, const Vector& x_t, double t) {
    const double d = static_cast<double>(x_t.size());
    Vector out(static_cast<Eigen::Index>(comps.size()));
    for (std::size_t k = 0; k < comps.size(); ++k) {
        const auto& c = comps[k];
        const double var = component_variance(c, t);
        const double sq = (x_t - (1.0 - t) * c.mean).squaredNorm();
        out[static_cast<Eigen::Index>(k)] =
            std::log(c.weight) - 0.5 * d * std::log(2.0 * std::numbers::pi * var) - 0.5 * sq / var;
    }
    return out;
}

double log_sum_exp(const Vector& v) {
    const double m = v.maxCoeff();
    return m + std::log((v.array() - m).exp().sum());
}

}  // namespace

OracleDist::OracleDist(int dim, std::vector<std::vector<GaussianComponent>> per_condition)
    : dim_(dim), components_(std::move(per_condition)) {
    if (dim_ < 1) {
        throw InvalidArgument("OracleDist: dimension must be positive");
    }
    if (components_.empty()) {
        throw InvalidArgument("OracleDist: need at least one condition");
    }
    for (std::size_t c = 0; c < components_.size(); ++c) {
        const auto& comps = components_[c];
        if (comps.empty()) {
            throw InvalidArgument("OracleDist: condition " + std::to_string(c) + " has no components");
        }
        double total = 0.0;
        for (const auto& comp : comps) {
            if (comp.mean.size() != dim_) {
                throw InvalidArgument("OracleDist: component mean has wrong dimension");
            }
            if (!(comp.stdev > 0.0) || !std::isfinite(comp.stdev)) {
                throw InvalidArgument("OracleDist: component stdev must be positive");
            }
            if (!(comp.weight > 0.0)) {
                throw InvalidArgument("OracleDist: component weight must be positive");
            }
            total += comp.weight;
        }
        if (std::abs(total - 1.0) > 1e-12) {
            throw InvalidArgument("OracleDist: weights of condition " + std::to_string(c) +
                                  " do not sum to 1");
        }
    }
}

OracleDist OracleDist::gaussian(const Vector& mean, double stdev) {
    return OracleDist(static_cast<int>(mean.size()), {{GaussianComponent{1.0, mean, stdev}}});
}

OracleDist OracleDist::two_gaussians_toy() {
    Vector left(2), right(2);
    right << 2.0, 0.0;
    left << -2.0, 0.0;
    return OracleDist(2, {{GaussianComponent{1.0, right, 0.5}}, {GaussianComponent{1.0, left, 0.5}}});
}

const std::vector<GaussianComponent>& OracleDist::components(std::size_t cond) const {
    check_cond(cond);
    return components_[cond];
}

void OracleDist::check_cond(std::size_t cond) const {
    if (cond >= components_.size()) {
        throw InvalidArgument("condition index " + std::to_string(cond) + " out of range (K = " +
                              std::to_string(components_.size()) + ")");
    }
}

void OracleDist::check_point(const Vector& x_t, double t) const {
    if (x_t.size() != dim_) {
        throw InvalidArgument("oracle query: dimension mismatch");
    }
    if (!std::isfinite(t) || t < 0.0 || t > 1.0) {
        throw InvalidArgument("oracle query: t outside [0, 1]");
    }
}

Vector OracleDist::mean(std::size_t cond) const {
    check_cond(cond);
    Vector m = Vector::Zero(dim_);
    for (const auto& c : components_[cond]) m += c.weight * c.mean;
    return m;
}

double OracleDist::isotropic_variance(std::size_t cond) const {
    const Vector m = mean(cond);
    double v = 0.0;
    for (const auto& c : components_[cond]) {
        v += c.weight * (c.stdev * c.stdev + (c.mean - m).squaredNorm() / dim_);
    }
    return v;
}

Vector OracleDist::sample_x(std::size_t cond, Rng& rng) const {
    check_cond(cond);
    const auto& comps = components_[cond];
    std::size_t k = 0;
    if (comps.size() > 1) {
        double u = uniform(0.0, 1.0, rng);
        for (k = 0; k + 1 < comps.size(); ++k) {
            if (u < comps[k].weight) break;
            u -= comps[k].weight;
        }
    }
    return comps[k].mean + comps[k].stdev * standard_normal(dim_, rng);
}

double OracleDist::marginal_log_density(std::size_t cond, const Vector& x_t, double t) const {
    check_cond(cond);
    check_point(x_t, t);
    return log_sum_exp(component_log_terms(components_[cond], x_t, t));
}

Vector OracleDist::responsibilities(std::size_t cond, const Vector& x_t, double t) const {
    check_cond(cond);
    check_point(x_t, t);
    const Vector logs = component_log_terms(components_[cond], x_t, t);
    return (logs.array() - log_sum_exp(logs)).exp().matrix();
}

std::pair<Vector, Vector> sample_pair(const OracleDist& dist, std::size_t cond, Rng& rng) {
    Vector x = dist.sample_x(cond, rng);
    Vector z = standard_normal(dist.dim(), rng);
    return {std::move(x), std::move(z)};
}

Vector marginal_score(const OracleDist& dist, std::size_t cond, const Vector& x_t, double t) {
    const Vector r = dist.responsibilities(cond, x_t, t);
    const auto& comps = dist.components(cond);
    Vector s = Vector::Zero(dist.dim());
    for (std::size_t k = 0; k < comps.size(); ++k) {
        const double var = component_variance(comps[k], t);
        s -= r[static_cast<Eigen::Index>(k)] * (x_t - (1.0 - t) * comps[k].mean) / var;
    }
    return s;
}

Vector conditional_velocity(const OracleDist& dist, std::size_t cond, const Vector& x_t, double t) {
    const Vector r = dist.responsibilities(cond, x_t, t);
    const auto& comps = dist.components(cond);
    Vector v = Vector::Zero(dist.dim());
    for (std::size_t k = 0; k < comps.size(); ++k) {
        const auto& c = comps[k];
        const double var_x = c.stdev * c.stdev;
        const double var_t = component_variance(c, t);
        const Vector centred = x_t - (1.0 - t) * c.mean;
        // Cov(x, x_t) = (1 - t) sigma^2 I, Cov(z, x_t) = t I.
        const Vector post_x = c.mean + ((1.0 - t) * var_x / var_t) * centred;
        const Vector post_z = (t / var_t) * centred;
        v += r[static_cast<Eigen::Index>(k)] * (post_z - post_x);
    }
    return v;
}

Vector optimal_velocity(const OracleDist& dist, std::size_t cond, const Vector& x_t, double t) {
    if (t <= 0.0 || t >= 1.0) {
        throw SingularTimeError("optimal_velocity: requires t in (0, 1)");
    }
    return conditional_velocity(dist, cond, x_t, t);
}

McVelocityEstimate optimal_velocity_mc(const OracleDist& dist, std::size_t cond, const Vector& x_t,
                                       double t, std::size_t n, Rng& rng) {
    if (t <= 0.0 || t >= 1.0) {
        throw SingularTimeError("optimal_velocity_mc: requires t in (0, 1)");
    }
    if (n == 0) {
        throw InvalidArgument("optimal_velocity_mc: need at least one sample");
    }
    const int d = dist.dim();
    Matrix xs(d, static_cast<Eigen::Index>(n));
    Vector logw(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        const auto col = static_cast<Eigen::Index>(i);
        xs.col(col) = dist.sample_x(cond, rng);
        logw[col] = -0.5 * (x_t - (1.0 - t) * xs.col(col)).squaredNorm() / (t * t);
    }
    const Vector w = (logw.array() - logw.maxCoeff()).exp().matrix();
    const double wsum = w.sum();
    const Vector post_x = xs * w / wsum;

    Vector var_x = Vector::Zero(d);
    for (Eigen::Index i = 0; i < xs.cols(); ++i) {
        const double wi = w[i] / wsum;
        var_x += (wi * wi) * (xs.col(i) - post_x).array().square().matrix();
    }

    McVelocityEstimate est;
    // z = (x_t - (1 - t) x) / t, so z - x = x_t / t - x / t.
    est.velocity = (x_t - post_x) / t;
    est.std_error = var_x.array().sqrt().matrix() / t;
    est.effective_samples = wsum * wsum / w.squaredNorm();
    return est;
}

double gaussian_w2(const Vector& mean_a, double var_a, const Vector& mean_b, double var_b) {
    if (mean_a.size() != mean_b.size()) {
        throw InvalidArgument("gaussian_w2: dimension mismatch");
    }
    if (var_a < 0.0 || var_b < 0.0) {
        throw InvalidArgument("gaussian_w2: negative variance");
    }
    const double ds = std::sqrt(var_a) - std::sqrt(var_b);
    return (mean_a - mean_b).squaredNorm() + static_cast<double>(mean_a.size()) * ds * ds;
}

}  // namespace apex
