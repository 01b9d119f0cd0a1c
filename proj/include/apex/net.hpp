#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "apex/path.hpp"

namespace apex {

enum class Activation : std::uint32_t { Tanh = 0, Silu = 1 };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

// Shape of the velocity network F(x_t, t, c).
//
// Input features are concat(x_t, sin(f_k t), cos(f_k t), c) for k < time_freqs,
// followed by `hidden` fully connected layers and a linear output of width
// data_dim. The flat parameter vector stores, per layer, the weight matrix
// (column-major, out x in) and then the bias; the condition embedding table
// (conditions x embed_dim, one row per condition, stored row after row) sits
// at the tail.
struct Architecture {
    int data_dim = 2;
    int embed_dim = 8;
    int conditions = 2;
    int time_freqs = 8;
    std::vector<int> hidden{128, 128};
    Activation activation = Activation::Tanh;
    bool learnable_embeddings = false;

    int input_dim() const { return data_dim + 2 * time_freqs + embed_dim; }
    std::size_t network_param_count() const;
    std::size_t param_count() const;  // network + embedding table
    std::size_t embedding_offset() const { return network_param_count(); }
    void validate() const;

    bool operator==(const Architecture&) const = default;
};

struct ShiftSpec {
    double a = -0.5;
    double b = 1.0;
};

// c_fake = a c + b 1.
Vector shift_condition(const Vector& c, const ShiftSpec& shift);

Vector time_features(double t, int time_freqs);

class VelocityModel {
public:
    VelocityModel(Architecture arch, Vector params);

    // Weights ~ N(0, 1 / fan_in), zero biases, embedding rows ~ N(0, I).
    static VelocityModel initialize(const Architecture& arch, std::uint64_t seed);

    const Architecture& arch() const { return arch_; }
    const Vector& params() const { return params_; }
    Vector& params() { return params_; }

    struct LayerSlot {
        int in = 0;
        int out = 0;
        std::size_t weight_offset = 0;
        std::size_t bias_offset = 0;
    };

    std::size_t layer_count() const { return layers_.size(); }
    const LayerSlot& layer(std::size_t l) const { return layers_[l]; }
    Eigen::Map<const Matrix> weight(std::size_t l) const;
    Eigen::Map<const Vector> bias(std::size_t l) const;

    // Row `cond` of the embedding table.
    Vector embedding(std::size_t cond) const;

private:
    Architecture arch_;
    Vector params_;
    std::vector<LayerSlot> layers_;
};

// Intermediate values of one batched forward pass, needed for backward_batch.
class ForwardCache {
public:
    const Matrix& output() const { return output_; }
    Eigen::Index batch() const { return output_.cols(); }

private:
    std::vector<Matrix> inputs_;  // input of each layer
    std::vector<Matrix> pre_;     // pre-activation of each hidden layer
    Matrix output_;

    friend Matrix forward_batch(const VelocityModel&, const Matrix&, const Vector&, const Matrix&,
                                ForwardCache*);
    friend void backward_batch(const VelocityModel&, const ForwardCache&, const Matrix&, Vector&,
                               Matrix*, Matrix*);
};

// Columns of x (d x B), entries of t (B) and columns of c (e x B) form B
// independent inputs. Output is d x B.
Matrix forward_batch(const VelocityModel& model, const Matrix& x, const Vector& t, const Matrix& c,
                     ForwardCache* cache = nullptr);

// Vector-Jacobian product of a cached forward pass: accumulates
// sum_b d_out_b . dF_b/dtheta into the network part of `grad_params` and, if
// requested, writes dF/dx and dF/dc contractions into d_x / d_c.
void backward_batch(const VelocityModel& model, const ForwardCache& cache, const Matrix& d_out,
                    Vector& grad_params, Matrix* d_x = nullptr, Matrix* d_c = nullptr);

Vector forward(const VelocityModel& model, const Vector& x_t, double t, const Vector& c);

// A scalar function of the parameters. When `grad` is non-null it is resized
// to param_count() and overwritten with the gradient.
using Objective = std::function<double(const VelocityModel& model, Vector* grad)>;

// Gradient of `objective` at the model's parameters. Throws NumericFailure
// if the loss or any gradient entry is non-finite.
Vector grad(const VelocityModel& model, const Objective& objective);

struct FiniteDiffReport {
    double max_rel_err = 0.0;
    long long worst_index = -1;
    std::size_t checked = 0;
    std::vector<std::size_t> failures;
    bool pass = true;
};

// Central differences (L(theta + h e_i) - L(theta - h e_i)) / 2h for every
// coordinate. A coordinate fails when its relative error |g - fd| / max(|g|, |fd|)
// reaches `tol` and its absolute error exceeds 1e-8; max_rel_err covers every
// coordinate.
FiniteDiffReport check_finite_diff(const VelocityModel& model, const Objective& objective, double h,
                                   double tol);

// As above, but certifies a caller-supplied gradient.
FiniteDiffReport compare_with_finite_diff(const VelocityModel& model, const Objective& objective,
                                          const Vector& analytic, double h, double tol);

}  // namespace apex
