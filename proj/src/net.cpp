#include "apex/net.hpp"

#include <cmath>
#include <numbers>

#include "apex/errors.hpp"
#include "apex/rng.hpp"

namespace apex {

std::string to_string(Activation a) {
    switch (a) {
        case Activation::Tanh: return "tanh";
        case Activation::Silu: return "silu";
    }
    return "unknown";
}

Activation activation_from_string(const std::string& name) {
    if (name == "tanh") return Activation::Tanh;
    if (name == "silu") return Activation::Silu;
    throw InvalidArgument("unknown activation '" + name + "'");
}

std::size_t Architecture::network_param_count() const {
    std::size_t n = 0;
    int in = input_dim();
    for (int width : hidden) {
        n += static_cast<std::size_t>(width) * static_cast<std::size_t>(in + 1);
        in = width;
    }
    n += static_cast<std::size_t>(data_dim) * static_cast<std::size_t>(in + 1);
    return n;
}

std::size_t Architecture::param_count() const {
    return network_param_count() + static_cast<std::size_t>(conditions) * static_cast<std::size_t>(embed_dim);
}

void Architecture::validate() const {
    if (data_dim < 1 || data_dim > 8) throw InvalidArgument("architecture: data_dim must be in [1, 8]");
    if (embed_dim < 1) throw InvalidArgument("architecture: embed_dim must be positive");
    if (conditions < 1) throw InvalidArgument("architecture: need at least one condition");
    if (time_freqs < 1) throw InvalidArgument("architecture: time_freqs must be positive");
    for (int w : hidden) {
        if (w < 1) throw InvalidArgument("architecture: hidden widths must be positive");
    }
}

Vector shift_condition(const Vector& c, const ShiftSpec& shift) {
    if (!std::isfinite(shift.a) || !std::isfinite(shift.b) || !c.allFinite()) {
        throw InvalidArgument("shift_condition: non-finite input");
    }
    return (shift.a * c.array() + shift.b).matrix();
}

namespace {

double frequency(int k) { return 0.5 * std::numbers::pi * (k + 1); }

Matrix activate(const Matrix& pre, Activation a) {
    switch (a) {
        case Activation::Tanh: return pre.array().tanh().matrix();
        case Activation::Silu: return (pre.array() / (1.0 + (-pre.array()).exp())).matrix();
    }
    throw InvalidArgument("unsupported activation");
}

// Elementwise derivative of the activation at `pre`, given out = act(pre).
Matrix activation_slope(const Matrix& pre, const Matrix& out, Activation a) {
    switch (a) {
        case Activation::Tanh: return (1.0 - out.array().square()).matrix();
        case Activation::Silu: {
            const Eigen::ArrayXXd sig = 1.0 / (1.0 + (-pre.array()).exp());
            return (sig * (1.0 + pre.array() * (1.0 - sig))).matrix();
        }
    }
    throw InvalidArgument("unsupported activation");
}

}  // namespace

Vector time_features(double t, int time_freqs) {
    Vector f(2 * time_freqs);
    for (int k = 0; k < time_freqs; ++k) {
        f[k] = std::sin(frequency(k) * t);
        f[time_freqs + k] = std::cos(frequency(k) * t);
    }
    return f;
}

VelocityModel::VelocityModel(Architecture arch, Vector params)
    : arch_(std::move(arch)), params_(std::move(params)) {
    arch_.validate();
    if (static_cast<std::size_t>(params_.size()) != arch_.param_count()) {
        throw InvalidArgument("VelocityModel: parameter vector has " + std::to_string(params_.size()) +
                              " entries, architecture needs " + std::to_string(arch_.param_count()));
    }
    std::size_t offset = 0;
    int in = arch_.input_dim();
    auto add_layer = [&](int out) {
        LayerSlot slot{in, out, offset, offset + static_cast<std::size_t>(out) * in};
        offset = slot.bias_offset + static_cast<std::size_t>(out);
        layers_.push_back(slot);
        in = out;
    };
    for (int width : arch_.hidden) add_layer(width);
    add_layer(arch_.data_dim);
}

VelocityModel VelocityModel::initialize(const Architecture& arch, std::uint64_t seed) {
    arch.validate();
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector params = Vector::Zero(static_cast<Eigen::Index>(arch.param_count()));
    VelocityModel model(arch, params);
    for (std::size_t l = 0; l < model.layer_count(); ++l) {
        const auto& slot = model.layer(l);
        const double scale = 1.0 / std::sqrt(static_cast<double>(slot.in));
        for (std::size_t i = 0; i < static_cast<std::size_t>(slot.in) * slot.out; ++i) {
            model.params_[static_cast<Eigen::Index>(slot.weight_offset + i)] = scale * normal(rng);
        }
    }
    const std::size_t emb = arch.embedding_offset();
    for (std::size_t i = emb; i < arch.param_count(); ++i) {
        model.params_[static_cast<Eigen::Index>(i)] = normal(rng);
    }
    return model;
}

Eigen::Map<const Matrix> VelocityModel::weight(std::size_t l) const {
    const auto& slot = layers_.at(l);
    return {params_.data() + slot.weight_offset, slot.out, slot.in};
}

Eigen::Map<const Vector> VelocityModel::bias(std::size_t l) const {
    const auto& slot = layers_.at(l);
    return {params_.data() + slot.bias_offset, slot.out};
}

Vector VelocityModel::embedding(std::size_t cond) const {
    if (cond >= static_cast<std::size_t>(arch_.conditions)) {
        throw InvalidArgument("embedding: condition index out of range");
    }
    const auto offset = static_cast<Eigen::Index>(arch_.embedding_offset() + cond * arch_.embed_dim);
    return params_.segment(offset, arch_.embed_dim);
}

Matrix forward_batch(const VelocityModel& model, const Matrix& x, const Vector& t, const Matrix& c,
                     ForwardCache* cache) {
    const auto& arch = model.arch();
    const Eigen::Index batch = x.cols();
    if (x.rows() != arch.data_dim || c.rows() != arch.embed_dim || t.size() != batch ||
        c.cols() != batch) {
        throw InvalidArgument("forward: input dimensions do not match the architecture");
    }
    const int nf = arch.time_freqs;
    Matrix input(arch.input_dim(), batch);
    input.topRows(arch.data_dim) = x;
    for (int k = 0; k < nf; ++k) {
        const double f = frequency(k);
        input.row(arch.data_dim + k) = (f * t.array()).sin().matrix().transpose();
        input.row(arch.data_dim + nf + k) = (f * t.array()).cos().matrix().transpose();
    }
    input.bottomRows(arch.embed_dim) = c;

    const std::size_t hidden = model.layer_count() - 1;
    if (cache) {
        cache->inputs_.assign(model.layer_count(), Matrix());
        cache->pre_.assign(hidden, Matrix());
    }
    Matrix h = std::move(input);
    for (std::size_t l = 0; l < hidden; ++l) {
        Matrix pre = model.weight(l) * h;
        pre.colwise() += model.bias(l);
        Matrix next = activate(pre, arch.activation);
        if (cache) {
            cache->inputs_[l] = std::move(h);
            cache->pre_[l] = std::move(pre);
        }
        h = std::move(next);
    }
    Matrix out = model.weight(hidden) * h;
    out.colwise() += model.bias(hidden);
    if (cache) {
        cache->inputs_[hidden] = std::move(h);
        cache->output_ = out;
    }
    return out;
}

void backward_batch(const VelocityModel& model, const ForwardCache& cache, const Matrix& d_out,
                    Vector& grad_params, Matrix* d_x, Matrix* d_c) {
    const auto& arch = model.arch();
    if (cache.inputs_.size() != model.layer_count()) {
        throw InvalidArgument("backward: cache does not belong to this model");
    }
    if (d_out.rows() != arch.data_dim || d_out.cols() != cache.batch()) {
        throw InvalidArgument("backward: upstream gradient has the wrong shape");
    }
    if (static_cast<std::size_t>(grad_params.size()) != arch.param_count()) {
        throw InvalidArgument("backward: gradient buffer has the wrong size");
    }
    Matrix g = d_out;
    for (std::size_t l = model.layer_count(); l-- > 0;) {
        const auto& slot = model.layer(l);
        Eigen::Map<Matrix> gw(grad_params.data() + slot.weight_offset, slot.out, slot.in);
        Eigen::Map<Vector> gb(grad_params.data() + slot.bias_offset, slot.out);
        gw.noalias() += g * cache.inputs_[l].transpose();
        gb += g.rowwise().sum();
        if (l == 0 && !d_x && !d_c) break;
        Matrix g_in = model.weight(l).transpose() * g;
        if (l > 0) {
            g = g_in.cwiseProduct(activation_slope(cache.pre_[l - 1], cache.inputs_[l], arch.activation));
        } else {
            if (d_x) *d_x = g_in.topRows(arch.data_dim);
            if (d_c) *d_c = g_in.bottomRows(arch.embed_dim);
        }
    }
}

Vector forward(const VelocityModel& model, const Vector& x_t, double t, const Vector& c) {
    if (x_t.size() != model.arch().data_dim || c.size() != model.arch().embed_dim) {
        throw InvalidArgument("forward: input dimensions do not match the architecture");
    }
    Vector tt(1);
    tt[0] = t;
    return forward_batch(model, x_t, tt, c).col(0);
}

Vector grad(const VelocityModel& model, const Objective& objective) {
    Vector g;
    const double value = objective(model, &g);
    if (!std::isfinite(value)) {
        throw NumericFailure("grad: loss is not finite");
    }
    for (Eigen::Index i = 0; i < g.size(); ++i) {
        if (!std::isfinite(g[i])) {
            throw NumericFailure("grad: non-finite gradient entry at index " + std::to_string(i), i);
        }
    }
    return g;
}

FiniteDiffReport compare_with_finite_diff(const VelocityModel& model, const Objective& objective,
                                          const Vector& analytic, double h, double tol) {
    if (static_cast<std::size_t>(analytic.size()) != model.arch().param_count()) {
        throw InvalidArgument("compare_with_finite_diff: gradient has the wrong size");
    }
    constexpr double kAbsFloor = 1e-8;
    FiniteDiffReport report;
    VelocityModel probe = model;
    for (Eigen::Index i = 0; i < analytic.size(); ++i) {
        const double saved = probe.params()[i];
        probe.params()[i] = saved + h;
        const double up = objective(probe, nullptr);
        probe.params()[i] = saved - h;
        const double down = objective(probe, nullptr);
        probe.params()[i] = saved;

        const double fd = (up - down) / (2.0 * h);
        const double abs_err = std::abs(analytic[i] - fd);
        const double scale = std::max(std::abs(analytic[i]), std::abs(fd));
        const double rel = scale > 0.0 ? abs_err / scale : 0.0;
        ++report.checked;
        if (rel > report.max_rel_err) {
            report.max_rel_err = rel;
            report.worst_index = i;
        }
        if (rel >= tol && abs_err > kAbsFloor) report.failures.push_back(static_cast<std::size_t>(i));
    }
    report.pass = report.failures.empty();
    return report;
}

FiniteDiffReport check_finite_diff(const VelocityModel& model, const Objective& objective, double h,
                                   double tol) {
    if (model.arch().param_count() > 10000) {
        throw InvalidArgument("check_finite_diff: parameter count too large to brute-force");
    }
    return compare_with_finite_diff(model, objective, grad(model, objective), h, tol);
}

}  // namespace apex
