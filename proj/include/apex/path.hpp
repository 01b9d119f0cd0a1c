#pragma once

#include <Eigen/Dense>

namespace apex {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Default clamp for every stochastic time draw. The raw path functions accept
// the wider interval each formula is defined on.
inline constexpr double kDefaultTMin = 0.01;
inline constexpr double kDefaultTMax = 0.99;

// A point on the straight noise/data path x_t = t z + (1 - t) x, together
// with its per-pair target velocity z - x.
struct PathPoint {
    Vector x;
    Vector z;
    double t = 0.0;
    Vector x_t;
    Vector v_data;
};

PathPoint interpolate(const Vector& x, const Vector& z, double t);

// Implied clean sample of a velocity estimate: x_t - t * velocity.
Vector endpoint_predict(const Vector& velocity, const Vector& x_t, double t);

// s = -(x_t + (1 - t) v) / t, defined for t in (0, 1].
Vector velocity_to_score(const Vector& velocity, const Vector& x_t, double t);

// v = -(x_t + t s) / (1 - t), defined for t in [0, 1).
Vector score_to_velocity(const Vector& score, const Vector& x_t, double t);

// t / (1 - t), defined for t in [0, 1).
double omega(double t);

}  // namespace apex
