#include "apex/path.hpp"

#include <cmath>
#include <string>

#include "apex/errors.hpp"

namespace apex {

namespace {

void require_same_dim(const Vector& a, const Vector& b, const char* what) {
    if (a.size() != b.size()) {
        throw InvalidArgument(std::string(what) + ": dimension mismatch (" +
                              std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
    }
}

void require_finite_time(double t, const char* what) {
    if (!std::isfinite(t)) {
        throw InvalidArgument(std::string(what) + ": non-finite time");
    }
}

}  // namespace

PathPoint interpolate(const Vector& x, const Vector& z, double t) {
    require_same_dim(x, z, "interpolate");
    require_finite_time(t, "interpolate");
    if (t < 0.0 || t > 1.0) {
        throw InvalidArgument("interpolate: t outside [0, 1]");
    }
    PathPoint p;
    p.x = x;
    p.z = z;
    p.t = t;
    p.x_t = t * z + (1.0 - t) * x;
    p.v_data = z - x;
    return p;
}

Vector endpoint_predict(const Vector& velocity, const Vector& x_t, double t) {
    require_same_dim(velocity, x_t, "endpoint_predict");
    require_finite_time(t, "endpoint_predict");
    if (t < 0.0 || t > 1.0) {
        throw InvalidArgument("endpoint_predict: t outside [0, 1]");
    }
    return x_t - t * velocity;
}

Vector velocity_to_score(const Vector& velocity, const Vector& x_t, double t) {
    require_same_dim(velocity, x_t, "velocity_to_score");
    require_finite_time(t, "velocity_to_score");
    if (t == 0.0) {
        throw SingularTimeError("velocity_to_score: score undefined at t = 0");
    }
    if (t < 0.0 || t > 1.0) {
        throw InvalidArgument("velocity_to_score: t outside (0, 1]");
    }
    return -(x_t + (1.0 - t) * velocity) / t;
}

Vector score_to_velocity(const Vector& score, const Vector& x_t, double t) {
    require_same_dim(score, x_t, "score_to_velocity");
    require_finite_time(t, "score_to_velocity");
    if (t == 1.0) {
        throw SingularTimeError("score_to_velocity: velocity undefined at t = 1");
    }
    if (t < 0.0 || t > 1.0) {
        throw InvalidArgument("score_to_velocity: t outside [0, 1)");
    }
    return -(x_t + t * score) / (1.0 - t);
}

double omega(double t) {
    require_finite_time(t, "omega");
    if (t == 1.0) {
        throw SingularTimeError("omega: singular at t = 1");
    }
    if (t < 0.0 || t > 1.0) {
        throw InvalidArgument("omega: t outside [0, 1)");
    }
    return t / (1.0 - t);
}

}  // namespace apex
