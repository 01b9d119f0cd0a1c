#pragma once

#include <cmath>
#include <initializer_list>
#include <numbers>

#include "apex/net.hpp"
#include "apex/oracle.hpp"
#include "apex/sampler.hpp"

namespace apex::test {

inline Vector vec(std::initializer_list<double> values) {
    Vector v(static_cast<Eigen::Index>(values.size()));
    Eigen::Index i = 0;
    for (double x : values) v[i++] = x;
    return v;
}

inline double max_abs_diff(const Vector& a, const Vector& b) { return (a - b).cwiseAbs().maxCoeff(); }

// Closed-form score of the single Gaussian N(mu, sigma^2 I) pushed along the
// path to time t: N((1 - t) mu, ((1 - t)^2 sigma^2 + t^2) I).
inline Vector gaussian_path_score(const Vector& mu, double sigma, const Vector& x_t, double t) {
    const double var = (1.0 - t) * (1.0 - t) * sigma * sigma + t * t;
    return -(x_t - (1.0 - t) * mu) / var;
}

// Linear model (no hidden layers) whose output is bias + W_x x_t: every
// weight on time features and condition is zero.
inline VelocityModel linear_model(int d, double w_x, const Vector& bias, int conditions = 1, int embed_dim = 1,
                                  int time_freqs = 1) {
    Architecture arch;
    arch.data_dim = d;
    arch.conditions = conditions;
    arch.embed_dim = embed_dim;
    arch.time_freqs = time_freqs;
    arch.hidden = {};
    VelocityModel m(arch, Vector::Zero(static_cast<Eigen::Index>(arch.param_count())));
    const auto& slot = m.layer(0);
    for (int i = 0; i < d; ++i) {
        m.params()[static_cast<Eigen::Index>(slot.weight_offset) + i * slot.out + i] = w_x;  // W(i, i)
        m.params()[static_cast<Eigen::Index>(slot.bias_offset) + i] = bias[i];
    }
    return m;
}

// Constant model F = theta in 1D; theta lives at bias_index().
inline VelocityModel constant_model(double theta) { return linear_model(1, 0.0, vec({theta})); }
inline Eigen::Index constant_model_bias_index(const VelocityModel& m) {
    return static_cast<Eigen::Index>(m.layer(0).bias_offset);
}

// Exact field of point-mass data at mu: v(x_t, t) = (x_t - mu) / t.
class PointMassField : public VelocityField {
public:
    explicit PointMassField(Vector mu) : mu_(std::move(mu)) {}
    Vector operator()(const Vector& x_t, double t) const override { return (x_t - mu_) / t; }

private:
    Vector mu_;
};

class ZeroField : public VelocityField {
public:
    Vector operator()(const Vector& x_t, double) const override { return Vector::Zero(x_t.size()); }
};

}  // namespace apex::test
