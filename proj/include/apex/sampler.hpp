#pragma once

#include <cstddef>
#include <vector>

#include "apex/net.hpp"
#include "apex/oracle.hpp"
#include "apex/path.hpp"

namespace apex {

// A time-dependent velocity field v(x_t, t) under a fixed condition.
class VelocityField {
public:
    virtual ~VelocityField() = default;
    virtual Vector operator()(const Vector& x_t, double t) const = 0;

    // Batched evaluation (columns of x share t). The default loops.
    virtual Matrix batch(const Matrix& x_t, double t) const;
};

class ModelField : public VelocityField {
public:
    ModelField(const VelocityModel& model, Vector c) : model_(model), c_(std::move(c)) {}
    Vector operator()(const Vector& x_t, double t) const override;
    Matrix batch(const Matrix& x_t, double t) const override;

private:
    const VelocityModel& model_;
    Vector c_;
};

// The exact conditional-mean velocity of an oracle condition.
class OracleField : public VelocityField {
public:
    OracleField(const OracleDist& dist, std::size_t cond) : dist_(dist), cond_(cond) {}
    Vector operator()(const Vector& x_t, double t) const override;

private:
    const OracleDist& dist_;
    std::size_t cond_;
};

// Counts single-sample evaluations of a wrapped field.
class CountingField : public VelocityField {
public:
    explicit CountingField(const VelocityField& inner) : inner_(inner) {}
    Vector operator()(const Vector& x_t, double t) const override;
    std::size_t calls() const { return calls_; }

private:
    const VelocityField& inner_;
    mutable std::size_t calls_ = 0;
};

struct Trajectory {
    std::vector<double> times;  // 1 = t_0 > t_1 > ... > t_n = 0
    std::vector<Vector> states;
    std::size_t nfe = 0;
};

struct SampleResult {
    Vector x0;
    Trajectory trajectory;
};

// Euler integration of the PF-ODE from t = 1 to t = 0 on the uniform grid
// t_k = 1 - k/n: x_{k+1} = x_k - F(x_k, t_k) / n.
SampleResult euler_sample(const VelocityField& field, const Vector& z, int n_steps);
SampleResult euler_sample(const VelocityModel& model, const Vector& z, const Vector& c, int n_steps);

// z - F(z, 1, c).
Vector one_step_sample(const VelocityField& field, const Vector& z);
Vector one_step_sample(const VelocityModel& model, const Vector& z, const Vector& c);

// Integrates every column of z (d x N) without recording trajectories.
Matrix euler_sample_batch(const VelocityField& field, const Matrix& z, int n_steps);

}  // namespace apex
