#include "apex/verify.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "json.hpp"

#include "apex/errors.hpp"

namespace apex {

namespace {

enum Stream : std::uint64_t {
    kCorollary = 10,
    kEndpoint = 11,
    kKl = 12,
    kGanModel = 13,
    kGanData = 14,
};

double cosine(const Vector& a, const Vector& b) {
    const double na = a.norm();
    const double nb = b.norm();
    if (na == 0.0 || nb == 0.0) return 0.0;
    return a.dot(b) / (na * nb);
}

void lattice_points(int dim, int per_axis, double extent, std::vector<Vector>& out) {
    std::vector<int> idx(static_cast<std::size_t>(dim), 0);
    const double step = per_axis > 1 ? 2.0 * extent / (per_axis - 1) : 0.0;
    while (true) {
        Vector p(dim);
        for (int i = 0; i < dim; ++i) p[i] = -extent + step * idx[static_cast<std::size_t>(i)];
        out.push_back(std::move(p));
        int k = 0;
        while (k < dim && ++idx[static_cast<std::size_t>(k)] == per_axis) idx[static_cast<std::size_t>(k++)] = 0;
        if (k == dim) break;
    }
}

// Adds d_c columns of a pass at a single condition onto that embedding row.
void add_embedding_grad(const VelocityModel& model, std::size_t cond, const Matrix& d_c, double scale,
                        Vector& grad) {
    const auto& arch = model.arch();
    const auto offset = static_cast<Eigen::Index>(arch.embedding_offset() + cond * arch.embed_dim);
    grad.segment(offset, arch.embed_dim) += scale * d_c.rowwise().sum();
}

Batch condition_batch(const OracleDist& oracle, std::size_t cond, Eigen::Index size, Rng& rng,
                      const double* fixed_t = nullptr) {
    std::vector<PathPoint> points;
    points.reserve(static_cast<std::size_t>(size));
    for (Eigen::Index i = 0; i < size; ++i) {
        auto [x, z] = sample_pair(oracle, cond, rng);
        const double t = fixed_t ? *fixed_t : uniform(kDefaultTMin, kDefaultTMax, rng);
        points.push_back(interpolate(x, z, t));
    }
    const std::vector<std::size_t> conds(static_cast<std::size_t>(size), cond);
    return make_batch(points, conds);
}

}  // namespace

double CheckReport::metric(const std::string& name) const {
    for (const auto& [k, v] : metrics) {
        if (k == name) return v;
    }
    throw std::out_of_range("check '" + check + "' has no metric '" + name + "'");
}

std::string to_ndjson(const CheckReport& report) {
    nlohmann::ordered_json j;
    j["check"] = report.check;
    j["pass"] = report.pass;
    if (report.skipped) j["skipped"] = true;
    for (const auto& [k, v] : report.metrics) {
        j[k] = std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json();
    }
    if (!report.note.empty()) j["note"] = report.note;
    j["seed"] = report.seed;
    return j.dump();
}

DualityGrid DualityGrid::standard() {
    DualityGrid g;
    for (int k = 1; k <= 19; ++k) g.times.push_back(0.05 * k);
    return g;
}

CheckReport check_duality(const OracleDist& oracle, const DualityGrid& grid) {
    std::vector<Vector> lattice;
    lattice_points(oracle.dim(), grid.points_per_axis, grid.extent, lattice);
    double worst = 0.0;
    std::size_t evaluated = 0;
    for (std::size_t c = 0; c < oracle.conditions(); ++c) {
        for (double t : grid.times) {
            for (const auto& x_t : lattice) {
                const Vector via_velocity = velocity_to_score(optimal_velocity(oracle, c, x_t, t), x_t, t);
                worst = std::max(worst, (via_velocity - marginal_score(oracle, c, x_t, t)).cwiseAbs().maxCoeff());
                ++evaluated;
            }
        }
    }
    CheckReport r;
    r.check = "duality";
    r.pass = worst < 1e-8;
    r.metrics = {{"max_abs_err", worst}, {"points", static_cast<double>(evaluated)}};
    return r;
}

CheckReport check_corollary(Rng& rng, std::size_t n_cases, std::uint64_t seed) {
    std::uniform_int_distribution<int> dim_pick(1, 8);
    double worst = 0.0;
    for (std::size_t i = 0; i < n_cases; ++i) {
        const int d = dim_pick(rng);
        const Vector v1 = standard_normal(d, rng);
        const Vector v2 = standard_normal(d, rng);
        const Vector x_t = standard_normal(d, rng);
        const double t = uniform(kDefaultTMin, kDefaultTMax, rng);
        const Vector lhs = v1 - v2;
        const Vector rhs = -omega(t) * (velocity_to_score(v1, x_t, t) - velocity_to_score(v2, x_t, t));
        const double scale = v1.norm() + v2.norm() + x_t.norm();
        worst = std::max(worst, (lhs - rhs).norm() / scale);
    }
    CheckReport r;
    r.check = "corollary";
    r.seed = seed;
    r.pass = worst < 1e-12;
    r.metrics = {{"max_rel_err", worst}, {"cases", static_cast<double>(n_cases)}};
    return r;
}

CheckReport check_endpoint_equiv(Rng& rng, std::size_t n_cases, std::uint64_t seed) {
    std::uniform_int_distribution<int> dim_pick(1, 8);
    // Error relative to the size of the inputs, t(1 - t) (|F| + |v|)^2, so that
    // near-cancelling residuals are judged on the scale they were computed at.
    auto rel = [](double a, double b, double t, const Vector& f, const Vector& v) {
        const double s = f.norm() + v.norm();
        const double scale = t * (1.0 - t) * s * s;
        return scale > 0.0 ? std::abs(a - b) / scale : std::abs(a - b);
    };
    double worst_sup = 0.0;
    double worst_fake = 0.0;
    for (std::size_t i = 0; i < n_cases; ++i) {
        const int d = dim_pick(rng);
        const Vector x = standard_normal(d, rng);
        const Vector z = standard_normal(d, rng);
        const Vector f = standard_normal(d, rng);
        const Vector v_fake = standard_normal(d, rng);
        const double t = uniform(kDefaultTMin, kDefaultTMax, rng);
        const PathPoint p = interpolate(x, z, t);
        const Vector endpoint = endpoint_predict(f, p.x_t, t);

        const double sup_endpoint = (endpoint - x).squaredNorm() / omega(t);
        const double sup_velocity = t * (1.0 - t) * (f - p.v_data).squaredNorm();
        const double fake_endpoint = (endpoint - endpoint_predict(v_fake, p.x_t, t)).squaredNorm() / omega(t);
        const double fake_velocity = t * (1.0 - t) * (f - v_fake).squaredNorm();
        worst_sup = std::max(worst_sup, rel(sup_endpoint, sup_velocity, t, f, p.v_data));
        worst_fake = std::max(worst_fake, rel(fake_endpoint, fake_velocity, t, f, v_fake));
    }
    CheckReport r;
    r.check = "endpoint_equiv";
    r.seed = seed;
    r.pass = worst_sup < 1e-12 && worst_fake < 1e-12;
    r.metrics = {{"max_rel_err_sup", worst_sup},
                 {"max_rel_err_fake", worst_fake},
                 {"cases", static_cast<double>(n_cases)}};
    return r;
}

CheckReport check_grad_equiv(const GradEquivSpec& spec) {
    const OracleDist toy = OracleDist::two_gaussians_toy();
    Architecture arch;
    arch.hidden = spec.hidden;
    const VelocityModel model = VelocityModel::initialize(arch, spec.model_seed);
    Rng rng(spec.batch_seed);
    const Batch batch = sample_batch(toy, spec.batch_size, kDefaultTMin, kDefaultTMax, rng);
    const Detached v_fake = fake_velocity(model, batch, spec.shift);

    Vector g_mix, g_gapex;
    const double mix = l_mix(model, batch, v_fake, spec.lambda, &g_mix);
    const double gapex = g_apex(model, batch, v_fake, spec.lambda, &g_gapex);
    const double denom = g_gapex.norm();
    const double rel_diff = denom > 0.0 ? (g_mix - g_gapex).norm() / denom : (g_mix - g_gapex).norm();

    CheckReport r;
    r.check = "grad_equiv";
    r.seed = spec.model_seed;
    r.pass = rel_diff < 1e-8;
    r.metrics = {{"rel_l2_diff", rel_diff},
                 {"params", static_cast<double>(arch.param_count())},
                 {"batch", static_cast<double>(spec.batch_size)},
                 {"l_mix", mix},
                 {"g_apex", gapex}};

    if (spec.finite_diff) {
        Architecture small;
        small.embed_dim = 2;
        small.time_freqs = 2;
        small.hidden = {8, 8};
        const VelocityModel tiny = VelocityModel::initialize(small, spec.model_seed + 1);
        const Batch fd_batch = sample_batch(toy, 16, kDefaultTMin, kDefaultTMax, rng);
        const Detached frozen = fake_velocity(tiny, fd_batch, spec.shift);
        const double lambda = spec.lambda;
        const Objective mix_obj = [&](const VelocityModel& m, Vector* g) {
            return l_mix(m, fd_batch, frozen, lambda, g);
        };
        const Objective gapex_obj = [&](const VelocityModel& m, Vector* g) {
            return g_apex(m, fd_batch, frozen, lambda, g);
        };
        const auto fd_mix = check_finite_diff(tiny, mix_obj, 1e-5, 1e-4);
        const auto fd_gapex = check_finite_diff(tiny, gapex_obj, 1e-5, 1e-4);
        r.pass = r.pass && fd_mix.pass && fd_gapex.pass;
        r.metrics.emplace_back("fd_params", static_cast<double>(small.param_count()));
        r.metrics.emplace_back("fd_max_rel_err_l_mix", fd_mix.max_rel_err);
        r.metrics.emplace_back("fd_max_rel_err_g_apex", fd_gapex.max_rel_err);
    }
    return r;
}

CheckReport check_kl_descent(const KlDescentSpec& spec, Rng& rng, std::uint64_t seed) {
    if (spec.theta.size() != spec.mu_star.size()) throw InvalidArgument("check_kl_descent: dimension mismatch");
    if (spec.n < 2) throw InvalidArgument("check_kl_descent: need at least two samples");
    CheckReport r;
    r.check = "kl_descent";
    r.seed = seed;
    const Vector analytic = spec.theta - spec.mu_star;
    if (analytic.norm() < 1e-6) {
        r.pass = true;
        r.skipped = true;
        r.note = "theta equals mu_star; the gradient vanishes";
        r.metrics = {{"analytic_norm", analytic.norm()}};
        return r;
    }
    const auto d = spec.theta.size();
    const OracleDist fake = OracleDist::gaussian(spec.theta, 1.0);
    const OracleDist real = OracleDist::gaussian(spec.mu_star, 1.0);
    Vector sum = Vector::Zero(d);
    Vector sum_sq = Vector::Zero(d);
    for (std::size_t i = 0; i < spec.n; ++i) {
        const double t = uniform(kDefaultTMin, kDefaultTMax, rng);
        const Vector x = standard_normal(d, rng) + spec.theta;
        const Vector x_t = t * standard_normal(d, rng) + (1.0 - t) * x;
        const Vector dv = optimal_velocity(fake, 0, x_t, t) - optimal_velocity(real, 0, x_t, t);
        // dx_t/dtheta = (1 - t) I.
        const Vector term = -(1.0 / omega(t)) * (1.0 - t) * dv;
        sum += term;
        sum_sq += term.cwiseProduct(term);
    }
    const double n = static_cast<double>(spec.n);
    const Vector estimate = sum / n;
    const Vector var = ((sum_sq / n) - estimate.cwiseProduct(estimate)).cwiseMax(0.0) * (n / (n - 1.0));
    const double cos = cosine(estimate, analytic);
    r.pass = cos > 0.99;
    r.metrics = {{"cosine", cos},
                 {"estimate_norm", estimate.norm()},
                 {"analytic_norm", analytic.norm()},
                 {"std_error_norm", std::sqrt(var.sum() / n)},
                 {"samples", n}};
    return r;
}

CheckReport check_gan_alignment(const VelocityModel& model, const OracleDist& oracle, const GanAlignmentSpec& spec,
                                Rng& rng, std::uint64_t seed) {
    if (spec.n < 2 || spec.ratio_samples < 2) throw InvalidArgument("check_gan_alignment: need at least two samples");
    const auto& arch = model.arch();
    if (arch.data_dim != oracle.dim()) throw InvalidArgument("check_gan_alignment: dimension mismatch");
    const Vector c = model.embedding(spec.cond);
    const Vector c_fake = shift_condition(c, spec.shift);
    const double lambda = spec.lambda;
    const auto n_params = static_cast<Eigen::Index>(arch.param_count());

    constexpr std::size_t kChunk = 4096;
    Vector grad_total = Vector::Zero(n_params);
    Vector score_total = Vector::Zero(n_params);
    std::vector<Vector> chunk_estimates;
    for (std::size_t start = 0; start < spec.n; start += kChunk) {
        const auto m = static_cast<Eigen::Index>(std::min(kChunk, spec.n - start));
        const Batch batch = condition_batch(oracle, spec.cond, m, rng);
        const double share = static_cast<double>(m) / static_cast<double>(spec.n);

        Vector g;
        g_apex(model, batch, spec.shift, lambda, &g);
        grad_total += share * g;

        ForwardCache cache;
        const Matrix f = forward_batch(model, batch.x_t, batch.t, c.replicate(1, m), &cache);
        const Matrix v_fake = forward_batch(model, batch.x_t, batch.t, c_fake.replicate(1, m));
        Matrix d_out(arch.data_dim, m);
        for (Eigen::Index i = 0; i < m; ++i) {
            const double t = batch.t[i];
            const Vector x_t = batch.x_t.col(i);
            const Vector s_theta = velocity_to_score(f.col(i), x_t, t);
            const Vector s_mix = (1.0 - lambda) * marginal_score(oracle, spec.cond, x_t, t) +
                                 lambda * velocity_to_score(v_fake.col(i), x_t, t);
            d_out.col(i) = (-2.0 * t * t / static_cast<double>(m)) * (s_theta - s_mix);
        }
        Vector chunk = Vector::Zero(n_params);
        Matrix d_c;
        backward_batch(model, cache, d_out, chunk, nullptr, &d_c);
        add_embedding_grad(model, spec.cond, d_c, 1.0, chunk);
        score_total += share * chunk;
        chunk_estimates.push_back(std::move(chunk));
    }
    double se = 0.0;
    if (chunk_estimates.size() > 1) {
        Vector mean = Vector::Zero(n_params);
        for (const auto& e : chunk_estimates) mean += e;
        mean /= static_cast<double>(chunk_estimates.size());
        double ss = 0.0;
        for (const auto& e : chunk_estimates) ss += (e - mean).squaredNorm();
        const double k = static_cast<double>(chunk_estimates.size());
        se = std::sqrt(ss / (k - 1.0) / k);
    }

    // Per-sample ratio at a fixed time, with the data velocity taken from the
    // oracle score through the duality map.
    const double t = spec.ratio_t;
    const double expected = -t / (1.0 - t);
    const Batch fixed = condition_batch(oracle, spec.cond, static_cast<Eigen::Index>(spec.ratio_samples), rng, &t);
    const auto m = fixed.size();
    const Matrix f = forward_batch(model, fixed.x_t, fixed.t, c.replicate(1, m));
    const Matrix v_fake = forward_batch(model, fixed.x_t, fixed.t, c_fake.replicate(1, m));
    std::vector<double> ratios;
    for (Eigen::Index i = 0; i < m; ++i) {
        const Vector x_t = fixed.x_t.col(i);
        const Vector s_data = marginal_score(oracle, spec.cond, x_t, t);
        const Vector s_theta = velocity_to_score(f.col(i), x_t, t);
        const Vector s_fake = velocity_to_score(v_fake.col(i), x_t, t);
        const Vector s_diff = s_theta - ((1.0 - lambda) * s_data + lambda * s_fake);
        const Vector v_combo = f.col(i) - ((1.0 - lambda) * score_to_velocity(s_data, x_t, t) + lambda * v_fake.col(i));
        const double denom = s_diff.squaredNorm();
        if (denom == 0.0) continue;
        ratios.push_back(v_combo.dot(s_diff) / denom);
    }
    double ratio_mean = 0.0;
    double ratio_var = 0.0;
    if (!ratios.empty()) {
        for (double q : ratios) ratio_mean += q;
        ratio_mean /= static_cast<double>(ratios.size());
        for (double q : ratios) ratio_var += (q - ratio_mean) * (q - ratio_mean);
        ratio_var /= static_cast<double>(ratios.size());
    }
    const double rel_var = ratio_var / (expected * expected);
    const double mean_err = ratios.empty() ? 0.0 : std::abs(ratio_mean - expected) / std::abs(expected);

    CheckReport r;
    r.check = "gan_alignment";
    r.seed = seed;
    const double cos = cosine(grad_total, score_total);
    const bool degenerate = grad_total.norm() == 0.0 && score_total.norm() == 0.0;
    r.pass = (cos > 0.95 || degenerate) && rel_var < 1e-10 && mean_err < 1e-10;
    if (degenerate) r.note = "both gradient forms vanish";
    r.metrics = {{"cosine", cos},
                 {"grad_norm", grad_total.norm()},
                 {"score_form_norm", score_total.norm()},
                 {"score_form_std_error", se},
                 {"samples", static_cast<double>(spec.n)},
                 {"ratio_t", t},
                 {"ratio_expected", expected},
                 {"ratio_mean", ratios.empty() ? expected : ratio_mean},
                 {"weight_variance", rel_var},
                 {"ratio_samples", static_cast<double>(ratios.size())}};
    return r;
}

std::vector<CheckReport> run_all_checks(std::uint64_t seed) {
    std::vector<CheckReport> out;

    Vector origin = Vector::Zero(2);
    const OracleDist toy = OracleDist::two_gaussians_toy();
    std::vector<std::vector<GaussianComponent>> per_cond{{GaussianComponent{1.0, origin, 1.0}}};
    for (std::size_t c = 0; c < toy.conditions(); ++c) per_cond.push_back(toy.components(c));
    out.push_back(check_duality(OracleDist(2, per_cond), DualityGrid::standard()));

    const std::uint64_t s_cor = derive_seed(seed, kCorollary);
    Rng cor_rng(s_cor);
    out.push_back(check_corollary(cor_rng, 10000, s_cor));

    const std::uint64_t s_end = derive_seed(seed, kEndpoint);
    Rng end_rng(s_end);
    out.push_back(check_endpoint_equiv(end_rng, 10000, s_end));

    GradEquivSpec ge;
    ge.model_seed = derive_seed(seed, 1);
    ge.batch_seed = derive_seed(seed, 2);
    out.push_back(check_grad_equiv(ge));

    KlDescentSpec kl;
    kl.theta = Vector::Zero(2);
    kl.mu_star = Vector::Zero(2);
    kl.theta[0] = 1.0;
    const std::uint64_t s_kl = derive_seed(seed, kKl);
    Rng kl_rng(s_kl);
    out.push_back(check_kl_descent(kl, kl_rng, s_kl));

    Architecture small;
    small.hidden = {32, 32};
    const VelocityModel model = VelocityModel::initialize(small, derive_seed(seed, kGanModel));
    const std::uint64_t s_gan = derive_seed(seed, kGanData);
    Rng gan_rng(s_gan);
    out.push_back(check_gan_alignment(model, OracleDist::two_gaussians_toy(), GanAlignmentSpec{}, gan_rng, s_gan));
    return out;
}

}  // namespace apex
