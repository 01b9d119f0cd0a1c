#include "apex/sampler.hpp"

#include <string>

#include "apex/errors.hpp"

namespace apex {

Matrix VelocityField::batch(const Matrix& x_t, double t) const {
    Matrix out(x_t.rows(), x_t.cols());
    for (Eigen::Index i = 0; i < x_t.cols(); ++i) out.col(i) = (*this)(x_t.col(i), t);
    return out;
}

Vector ModelField::operator()(const Vector& x_t, double t) const { return forward(model_, x_t, t, c_); }

Matrix ModelField::batch(const Matrix& x_t, double t) const {
    return forward_batch(model_, x_t, Vector::Constant(x_t.cols(), t), c_.replicate(1, x_t.cols()));
}

Vector OracleField::operator()(const Vector& x_t, double t) const {
    return conditional_velocity(dist_, cond_, x_t, t);
}

Vector CountingField::operator()(const Vector& x_t, double t) const {
    ++calls_;
    return inner_(x_t, t);
}

SampleResult euler_sample(const VelocityField& field, const Vector& z, int n_steps) {
    if (n_steps < 1) throw InvalidArgument("euler_sample: n_steps must be at least 1");
    const double h = 1.0 / n_steps;
    SampleResult out;
    auto& traj = out.trajectory;
    traj.times.reserve(static_cast<std::size_t>(n_steps) + 1);
    traj.states.reserve(static_cast<std::size_t>(n_steps) + 1);
    traj.times.push_back(1.0);
    traj.states.push_back(z);
    Vector x = z;
    for (int k = 0; k < n_steps; ++k) {
        const double t = 1.0 - static_cast<double>(k) / n_steps;
        x = x - h * field(x, t);
        ++traj.nfe;
        if (!x.allFinite()) {
            throw NumericFailure("euler_sample: non-finite state at step " + std::to_string(k), k);
        }
        traj.times.push_back(k + 1 == n_steps ? 0.0 : 1.0 - static_cast<double>(k + 1) / n_steps);
        traj.states.push_back(x);
    }
    out.x0 = x;
    return out;
}

SampleResult euler_sample(const VelocityModel& model, const Vector& z, const Vector& c, int n_steps) {
    return euler_sample(ModelField(model, c), z, n_steps);
}

Vector one_step_sample(const VelocityField& field, const Vector& z) {
    Vector x = endpoint_predict(field(z, 1.0), z, 1.0);
    if (!x.allFinite()) throw NumericFailure("one_step_sample: non-finite output", 0);
    return x;
}

Vector one_step_sample(const VelocityModel& model, const Vector& z, const Vector& c) {
    return one_step_sample(ModelField(model, c), z);
}

Matrix euler_sample_batch(const VelocityField& field, const Matrix& z, int n_steps) {
    if (n_steps < 1) throw InvalidArgument("euler_sample_batch: n_steps must be at least 1");
    const double h = 1.0 / n_steps;
    Matrix x = z;
    for (int k = 0; k < n_steps; ++k) {
        const double t = 1.0 - static_cast<double>(k) / n_steps;
        x = x - h * field.batch(x, t);
        if (!x.allFinite()) {
            throw NumericFailure("euler_sample_batch: non-finite state at step " + std::to_string(k), k);
        }
    }
    return x;
}

}  // namespace apex
