#include "apex/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "apex/errors.hpp"

namespace apex {

namespace {

void check_batch(const VelocityModel& model, const Batch& batch) {
    const Eigen::Index n = batch.size();
    if (n == 0) throw InvalidArgument("loss: empty batch");
    const int d = model.arch().data_dim;
    if (batch.x.rows() != d || batch.x.cols() != n || batch.z.rows() != d || batch.z.cols() != n ||
        batch.x_t.rows() != d || batch.x_t.cols() != n || batch.v_data.rows() != d ||
        batch.v_data.cols() != n || static_cast<Eigen::Index>(batch.cond.size()) != n) {
        throw InvalidArgument("loss: batch shape does not match the model");
    }
}

void check_lambda(double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidArgument("loss: lambda must be in [0, 1]");
}

Matrix condition_matrix(const VelocityModel& model, const std::vector<std::size_t>& cond) {
    Matrix c(model.arch().embed_dim, static_cast<Eigen::Index>(cond.size()));
    for (std::size_t b = 0; b < cond.size(); ++b) c.col(static_cast<Eigen::Index>(b)) = model.embedding(cond[b]);
    return c;
}

Matrix shifted(const Matrix& c, const ShiftSpec& shift) {
    if (!std::isfinite(shift.a) || !std::isfinite(shift.b)) {
        throw InvalidArgument("shift: non-finite coefficients");
    }
    return (shift.a * c.array() + shift.b).matrix();
}

// Scatters per-sample condition gradients back onto the embedding table rows.
void accumulate_embedding(const VelocityModel& model, const std::vector<std::size_t>& cond,
                          const Matrix& d_c, double scale, Vector& grad) {
    const auto& arch = model.arch();
    for (std::size_t b = 0; b < cond.size(); ++b) {
        const auto offset = static_cast<Eigen::Index>(arch.embedding_offset() + cond[b] * arch.embed_dim);
        grad.segment(offset, arch.embed_dim) += scale * d_c.col(static_cast<Eigen::Index>(b));
    }
}

// Backpropagates d_out through a cached pass evaluated at condition columns
// `scale * embedding + const`.
void backprop(const VelocityModel& model, const ForwardCache& cache, const Matrix& d_out,
              const std::vector<std::size_t>& cond, double scale, Vector& grad, Matrix* d_x = nullptr) {
    Matrix d_c;
    backward_batch(model, cache, d_out, grad, d_x, &d_c);
    accumulate_embedding(model, cond, d_c, scale, grad);
}

Vector zero_grad(const VelocityModel& model) {
    return Vector::Zero(static_cast<Eigen::Index>(model.arch().param_count()));
}

Vector time_weight(const Vector& t) { return (t.array() * (1.0 - t.array())).matrix(); }

void check_v_fake(const Batch& batch, const Detached& v_fake) {
    if (v_fake.value.rows() != batch.x.rows() || v_fake.value.cols() != batch.size()) {
        throw InvalidArgument("loss: v_fake shape does not match the batch");
    }
}

// Weighted squared-residual loss sum_b w_b ||F_b - target_b||^2 / B over the
// main branch F(x_t, t, c).
double weighted_fit(const VelocityModel& model, const Batch& batch, const Matrix& target,
                    const Vector& weight, Vector* grad) {
    const Matrix c = condition_matrix(model, batch.cond);
    ForwardCache cache;
    const Matrix f = forward_batch(model, batch.x_t, batch.t, c, grad ? &cache : nullptr);
    const Matrix r = f - target;
    const auto n = static_cast<double>(batch.size());
    const double value = (r.colwise().squaredNorm().transpose().cwiseProduct(weight)).sum() / n;
    if (grad) {
        *grad = zero_grad(model);
        const Matrix d_out = r * (2.0 / n * weight).asDiagonal();
        backprop(model, cache, d_out, batch.cond, 1.0, *grad);
    }
    return value;
}

double mean(const Vector& v) { return v.mean(); }

}  // namespace

Batch make_batch(std::span<const PathPoint> points, std::span<const std::size_t> conds) {
    if (points.empty()) throw InvalidArgument("make_batch: empty batch");
    if (points.size() != conds.size()) throw InvalidArgument("make_batch: one condition per point required");
    const Eigen::Index d = points.front().x.size();
    const auto n = static_cast<Eigen::Index>(points.size());
    Batch batch{Matrix(d, n), Matrix(d, n), Vector(n), Matrix(d, n), Matrix(d, n), {conds.begin(), conds.end()}};
    for (Eigen::Index b = 0; b < n; ++b) {
        const auto& p = points[static_cast<std::size_t>(b)];
        if (p.x.size() != d) throw InvalidArgument("make_batch: mixed dimensions");
        batch.x.col(b) = p.x;
        batch.z.col(b) = p.z;
        batch.t[b] = p.t;
        batch.x_t.col(b) = p.x_t;
        batch.v_data.col(b) = p.v_data;
    }
    return batch;
}

Batch sample_batch(const OracleDist& dist, Eigen::Index size, double t_min, double t_max, Rng& rng) {
    if (size < 1) throw InvalidArgument("sample_batch: batch size must be positive");
    if (!(0.0 < t_min && t_min < t_max && t_max < 1.0)) {
        throw InvalidArgument("sample_batch: need 0 < t_min < t_max < 1");
    }
    std::vector<PathPoint> points;
    std::vector<std::size_t> conds;
    points.reserve(static_cast<std::size_t>(size));
    conds.reserve(static_cast<std::size_t>(size));
    std::uniform_int_distribution<std::size_t> pick(0, dist.conditions() - 1);
    for (Eigen::Index b = 0; b < size; ++b) {
        const std::size_t c = pick(rng);
        auto [x, z] = sample_pair(dist, c, rng);
        const double t = uniform(t_min, t_max, rng);
        points.push_back(interpolate(x, z, t));
        conds.push_back(c);
    }
    return make_batch(points, conds);
}

FakeNoise draw_fake_noise(const Batch& batch, Rng& rng, double t_min, double t_max, bool reuse) {
    if (reuse) return {batch.z, batch.t};
    if (!(0.0 < t_min && t_min < t_max && t_max < 1.0)) {
        throw InvalidArgument("draw_fake_noise: need 0 < t_min < t_max < 1");
    }
    FakeNoise noise{Matrix(batch.x.rows(), batch.size()), Vector(batch.size())};
    for (Eigen::Index b = 0; b < batch.size(); ++b) {
        noise.z.col(b) = standard_normal(batch.x.rows(), rng);
        noise.t[b] = uniform(t_min, t_max, rng);
    }
    return noise;
}

Detached fake_velocity(const VelocityModel& model, const Batch& batch, const ShiftSpec& shift) {
    check_batch(model, batch);
    const Matrix c_fake = shifted(condition_matrix(model, batch.cond), shift);
    return {forward_batch(model, batch.x_t, batch.t, c_fake)};
}

void LossWeights::validate() const {
    check_lambda(lambda);
    if (!(lambda_p >= 0.0) || !(lambda_e >= 0.0) || !std::isfinite(lambda_p) || !std::isfinite(lambda_e)) {
        throw InvalidArgument("loss weights: lambda_p and lambda_e must be finite and non-negative");
    }
}

Vector l_fm_terms(const VelocityModel& model, const Batch& batch) {
    check_batch(model, batch);
    const Matrix f = forward_batch(model, batch.x_t, batch.t, condition_matrix(model, batch.cond));
    return (f - batch.v_data).colwise().squaredNorm().transpose();
}

Vector l_sup_terms(const VelocityModel& model, const Batch& batch) {
    check_batch(model, batch);
    const Matrix f = forward_batch(model, batch.x_t, batch.t, condition_matrix(model, batch.cond));
    return time_weight(batch.t).cwiseProduct((f - batch.v_data).colwise().squaredNorm().transpose());
}

Vector l_cons_terms(const VelocityModel& model, const Batch& batch, const Detached& v_fake) {
    check_batch(model, batch);
    check_v_fake(batch, v_fake);
    const Matrix f = forward_batch(model, batch.x_t, batch.t, condition_matrix(model, batch.cond));
    return time_weight(batch.t).cwiseProduct((f - v_fake.value).colwise().squaredNorm().transpose());
}

Vector l_mix_terms(const VelocityModel& model, const Batch& batch, const Detached& v_fake, double lambda) {
    check_batch(model, batch);
    check_v_fake(batch, v_fake);
    check_lambda(lambda);
    const Matrix f = forward_batch(model, batch.x_t, batch.t, condition_matrix(model, batch.cond));
    Vector out(batch.size());
    for (Eigen::Index b = 0; b < batch.size(); ++b) {
        const double t = batch.t[b];
        const Vector endpoint = endpoint_predict(f.col(b), batch.x_t.col(b), t);
        const Vector target = t_mix(batch.x.col(b), v_fake.value.col(b), batch.x_t.col(b), t, lambda);
        out[b] = (endpoint - target).squaredNorm() / omega(t);
    }
    return out;
}

Vector g_apex_terms(const VelocityModel& model, const Batch& batch, const Detached& v_fake, double lambda) {
    check_lambda(lambda);
    return (1.0 - lambda) * l_sup_terms(model, batch) + lambda * l_cons_terms(model, batch, v_fake);
}

double l_fm(const VelocityModel& model, const Batch& batch, Vector* grad) {
    check_batch(model, batch);
    return weighted_fit(model, batch, batch.v_data, Vector::Ones(batch.size()), grad);
}

double l_sup(const VelocityModel& model, const Batch& batch, Vector* grad) {
    check_batch(model, batch);
    return weighted_fit(model, batch, batch.v_data, time_weight(batch.t), grad);
}

double l_sup_endpoint(const VelocityModel& model, const Batch& batch) {
    check_batch(model, batch);
    const Matrix f = forward_batch(model, batch.x_t, batch.t, condition_matrix(model, batch.cond));
    double total = 0.0;
    for (Eigen::Index b = 0; b < batch.size(); ++b) {
        const double t = batch.t[b];
        total += (endpoint_predict(f.col(b), batch.x_t.col(b), t) - batch.x.col(b)).squaredNorm() / omega(t);
    }
    return total / static_cast<double>(batch.size());
}

double l_cons(const VelocityModel& model, const Batch& batch, const Detached& v_fake, Vector* grad) {
    check_batch(model, batch);
    check_v_fake(batch, v_fake);
    return weighted_fit(model, batch, v_fake.value, time_weight(batch.t), grad);
}

double l_cons(const VelocityModel& model, const Batch& batch, const ShiftSpec& shift, Vector* grad) {
    return l_cons(model, batch, fake_velocity(model, batch, shift), grad);
}

double l_cons_endpoint(const VelocityModel& model, const Batch& batch, const Detached& v_fake) {
    check_batch(model, batch);
    check_v_fake(batch, v_fake);
    const Matrix f = forward_batch(model, batch.x_t, batch.t, condition_matrix(model, batch.cond));
    double total = 0.0;
    for (Eigen::Index b = 0; b < batch.size(); ++b) {
        const double t = batch.t[b];
        const Vector x_t = batch.x_t.col(b);
        total += (endpoint_predict(f.col(b), x_t, t) - endpoint_predict(v_fake.value.col(b), x_t, t))
                     .squaredNorm() /
                 omega(t);
    }
    return total / static_cast<double>(batch.size());
}

Vector t_mix(const Vector& x, const Vector& v_fake, const Vector& x_t, double t, double lambda) {
    check_lambda(lambda);
    return (1.0 - lambda) * x + lambda * endpoint_predict(v_fake, x_t, t);
}

double l_mix(const VelocityModel& model, const Batch& batch, const Detached& v_fake, double lambda,
             Vector* grad) {
    if (!grad) return mean(l_mix_terms(model, batch, v_fake, lambda));
    check_batch(model, batch);
    check_v_fake(batch, v_fake);
    check_lambda(lambda);
    const Matrix c = condition_matrix(model, batch.cond);
    ForwardCache cache;
    const Matrix f = forward_batch(model, batch.x_t, batch.t, c, &cache);
    const auto n = static_cast<double>(batch.size());
    const auto t = batch.t.array();
    // r = (x_t - t F) - T_mix, weighted by (1 - t) / t.
    const Matrix target = (1.0 - lambda) * batch.x +
                          lambda * (batch.x_t - v_fake.value * batch.t.asDiagonal());
    const Matrix r = batch.x_t - f * batch.t.asDiagonal() - target;
    const Vector w = ((1.0 - t) / t).matrix();
    const double value = r.colwise().squaredNorm().transpose().cwiseProduct(w).sum() / n;
    *grad = zero_grad(model);
    const Vector scale = (-2.0 / n * (1.0 - t)).matrix();
    backprop(model, cache, r * scale.asDiagonal(), batch.cond, 1.0, *grad);
    return value;
}

double l_mix(const VelocityModel& model, const Batch& batch, const ShiftSpec& shift, double lambda,
             Vector* grad) {
    return l_mix(model, batch, fake_velocity(model, batch, shift), lambda, grad);
}

double g_apex(const VelocityModel& model, const Batch& batch, const Detached& v_fake, double lambda,
              Vector* grad) {
    check_batch(model, batch);
    check_v_fake(batch, v_fake);
    check_lambda(lambda);
    const Matrix c = condition_matrix(model, batch.cond);
    ForwardCache cache;
    const Matrix f = forward_batch(model, batch.x_t, batch.t, c, grad ? &cache : nullptr);
    const auto n = static_cast<double>(batch.size());
    const Vector w = time_weight(batch.t);
    const double sup = (f - batch.v_data).colwise().squaredNorm().transpose().cwiseProduct(w).sum() / n;
    const double cons = (f - v_fake.value).colwise().squaredNorm().transpose().cwiseProduct(w).sum() / n;
    if (grad) {
        *grad = zero_grad(model);
        const Matrix r = f - (1.0 - lambda) * batch.v_data - lambda * v_fake.value;
        backprop(model, cache, r * (2.0 / n * w).asDiagonal(), batch.cond, 1.0, *grad);
    }
    return (1.0 - lambda) * sup + lambda * cons;
}

double g_apex(const VelocityModel& model, const Batch& batch, const ShiftSpec& shift, double lambda,
              Vector* grad) {
    return g_apex(model, batch, fake_velocity(model, batch, shift), lambda, grad);
}

namespace {

// One evaluation of every APEX term on a batch, with an optional weighted
// gradient lambda_p dL_fake + lambda_e dL_mix.
LossReport evaluate(const VelocityModel& model, const Batch& batch, const ShiftSpec& shift,
                    const LossWeights& weights, const FakeNoise& noise, Vector* grad) {
    check_batch(model, batch);
    weights.validate();
    const Eigen::Index n = batch.size();
    if (noise.z.rows() != batch.x.rows() || noise.z.cols() != n || noise.t.size() != n) {
        throw InvalidArgument("l_fake: fake noise shape does not match the batch");
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    const double lambda = weights.lambda;

    const Matrix c = condition_matrix(model, batch.cond);
    const Matrix c_fake = shifted(c, shift);
    ForwardCache main_cache;
    const Matrix f = forward_batch(model, batch.x_t, batch.t, c, grad ? &main_cache : nullptr);
    const Matrix v_fake = forward_batch(model, batch.x_t, batch.t, c_fake);

    // Fake trajectory from the implied clean estimate.
    const Matrix x_fake = batch.x_t - f * batch.t.asDiagonal();
    const Vector one_minus_tp = (1.0 - noise.t.array()).matrix();
    const Matrix x_t_fake = noise.z * noise.t.asDiagonal() + x_fake * one_minus_tp.asDiagonal();
    ForwardCache fake_cache;
    const Matrix g = forward_batch(model, x_t_fake, noise.t, c_fake, grad ? &fake_cache : nullptr);
    const Matrix r_fake = g - (noise.z - x_fake);

    const Vector w = time_weight(batch.t);
    const Vector sup = (f - batch.v_data).colwise().squaredNorm().transpose();
    const Vector cons = (f - v_fake).colwise().squaredNorm().transpose();
    const Matrix target = (1.0 - lambda) * batch.x + lambda * (batch.x_t - v_fake * batch.t.asDiagonal());
    const Matrix r_mix = x_fake - target;
    const Vector mix_w = ((1.0 - batch.t.array()) / batch.t.array()).matrix();

    LossReport rep;
    rep.weights = weights;
    rep.batch_size = n;
    rep.l_fm = sup.sum() * inv_n;
    rep.l_sup = w.cwiseProduct(sup).sum() * inv_n;
    rep.l_cons = w.cwiseProduct(cons).sum() * inv_n;
    rep.l_fake = r_fake.colwise().squaredNorm().sum() * inv_n;
    rep.l_mix = r_mix.colwise().squaredNorm().transpose().cwiseProduct(mix_w).sum() * inv_n;
    rep.g_apex = (1.0 - lambda) * rep.l_sup + lambda * rep.l_cons;
    rep.l_apex = weights.lambda_p * rep.l_fake + weights.lambda_e * rep.l_mix;
    rep.delta_v_norm = (v_fake - f).colwise().norm().sum() * inv_n;
    rep.t_mean = batch.t.mean();
    rep.t_min = batch.t.minCoeff();
    rep.t_max = batch.t.maxCoeff();

    if (grad) {
        *grad = zero_grad(model);
        Matrix d_f = Matrix::Zero(f.rows(), n);
        if (weights.lambda_e != 0.0) {
            const Vector scale = (-2.0 * inv_n * weights.lambda_e * (1.0 - batch.t.array())).matrix();
            d_f += r_mix * scale.asDiagonal();
        }
        if (weights.lambda_p != 0.0) {
            const Matrix d_g = (2.0 * inv_n * weights.lambda_p) * r_fake;
            Matrix d_xtf;
            backprop(model, fake_cache, d_g, batch.cond, shift.a, *grad, &d_xtf);
            // The target z' - x_fake also depends on x_fake.
            const Matrix d_xfake = d_xtf * one_minus_tp.asDiagonal() + d_g;
            d_f -= d_xfake * batch.t.asDiagonal();
        }
        backprop(model, main_cache, d_f, batch.cond, 1.0, *grad);
    }
    return rep;
}

}  // namespace

double l_fake(const VelocityModel& model, const Batch& batch, const ShiftSpec& shift, const FakeNoise& noise,
              Vector* grad) {
    LossWeights only_fake;
    only_fake.lambda_e = 0.0;
    return evaluate(model, batch, shift, only_fake, noise, grad).l_fake;
}

LossReport l_apex(const VelocityModel& model, const Batch& batch, const ShiftSpec& shift,
                  const LossWeights& weights, const FakeNoise& noise, Vector* grad) {
    return evaluate(model, batch, shift, weights, noise, grad);
}

FakeBranch make_fake(const VelocityModel& model, const PathPoint& point, const Vector& c,
                     const Vector& c_fake, const Vector& z_fake, double t_fake) {
    if (!(point.t > 0.0 && point.t <= 1.0)) throw InvalidArgument("make_fake: t must be in (0, 1]");
    if (!(t_fake >= 0.0 && t_fake <= 1.0)) throw InvalidArgument("make_fake: t' must be in [0, 1]");
    if (z_fake.size() != point.x_t.size()) throw InvalidArgument("make_fake: z' has the wrong dimension");
    FakeBranch fb;
    fb.x_fake = endpoint_predict(forward(model, point.x_t, point.t, c), point.x_t, point.t);
    fb.z_fake = z_fake;
    fb.t_fake = t_fake;
    fb.x_t_fake = t_fake * z_fake + (1.0 - t_fake) * fb.x_fake;
    fb.v_fake = forward(model, fb.x_t_fake, t_fake, c_fake);
    return fb;
}

Vector delta_v(const VelocityModel& model, const Vector& x_t, double t, const Vector& c, const Vector& c_fake) {
    return forward(model, x_t, t, c_fake) - forward(model, x_t, t, c);
}

ScoreSet induced_scores(const VelocityModel& model, const Vector& x_t, double t, std::size_t cond,
                        const ShiftSpec& shift, const OracleDist& oracle, double lambda) {
    check_lambda(lambda);
    if (!(t > 0.0 && t < 1.0)) throw SingularTimeError("induced_scores: requires t in (0, 1)");
    const Vector c = model.embedding(cond);
    const Vector c_fake = shift_condition(c, shift);
    ScoreSet s;
    s.s_theta = velocity_to_score(forward(model, x_t, t, c), x_t, t);
    s.s_fake = velocity_to_score(forward(model, x_t, t, c_fake), x_t, t);
    s.s_data = marginal_score(oracle, cond, x_t, t);
    s.s_mix = (1.0 - lambda) * s.s_data + lambda * s.s_fake;
    return s;
}

FisherEstimate fisher_estimate(const VelocityModel& model, const OracleDist& oracle, std::size_t cond,
                               const ShiftSpec& shift, double lambda, std::size_t n_samples, Rng& rng,
                               double t_min, double t_max) {
    if (n_samples == 0) throw InvalidArgument("fisher_estimate: need at least one sample");
    check_lambda(lambda);
    if (!(0.0 < t_min && t_min < t_max && t_max < 1.0)) {
        throw InvalidArgument("fisher_estimate: need 0 < t_min < t_max < 1");
    }
    const int d = oracle.dim();
    const Vector c = model.embedding(cond);
    const Vector c_fake = shift_condition(c, shift);
    constexpr std::size_t kChunk = 4096;

    double sum = 0.0;
    double sum_sq = 0.0;
    for (std::size_t start = 0; start < n_samples; start += kChunk) {
        const auto m = static_cast<Eigen::Index>(std::min(kChunk, n_samples - start));
        Matrix x_t(d, m), z_fake(d, m);
        Vector t(m), t_fake(m);
        for (Eigen::Index i = 0; i < m; ++i) {
            auto [x, z] = sample_pair(oracle, cond, rng);
            t[i] = uniform(t_min, t_max, rng);
            x_t.col(i) = t[i] * z + (1.0 - t[i]) * x;
            z_fake.col(i) = standard_normal(d, rng);
            t_fake[i] = uniform(t_min, t_max, rng);
        }
        const Matrix cm = c.replicate(1, m);
        const Matrix cfm = c_fake.replicate(1, m);
        const Matrix x_fake = x_t - forward_batch(model, x_t, t, cm) * t.asDiagonal();
        const Matrix x_tf = z_fake * t_fake.asDiagonal() + x_fake * (1.0 - t_fake.array()).matrix().asDiagonal();
        const Matrix v_theta = forward_batch(model, x_tf, t_fake, cm);
        const Matrix v_fake = forward_batch(model, x_tf, t_fake, cfm);
        for (Eigen::Index i = 0; i < m; ++i) {
            const double tf = t_fake[i];
            const Vector xi = x_tf.col(i);
            const Vector s_theta = velocity_to_score(v_theta.col(i), xi, tf);
            const Vector s_mix = (1.0 - lambda) * marginal_score(oracle, cond, xi, tf) +
                                 lambda * velocity_to_score(v_fake.col(i), xi, tf);
            const double v = (s_theta - s_mix).squaredNorm();
            sum += v;
            sum_sq += v * v;
        }
    }
    const auto n = static_cast<double>(n_samples);
    FisherEstimate est;
    est.samples = n_samples;
    est.value = sum / n;
    if (n_samples > 1) {
        const double var = std::max(0.0, (sum_sq - n * est.value * est.value) / (n - 1.0));
        est.std_error = std::sqrt(var / n);
    }
    return est;
}

}  // namespace apex
