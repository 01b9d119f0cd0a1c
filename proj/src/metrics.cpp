#include "apex/metrics.hpp"

#include <cmath>

#include "apex/errors.hpp"

namespace apex {

IsotropicFit fit_isotropic(const Matrix& samples) {
    const Eigen::Index n = samples.cols();
    if (n < 2) throw InvalidArgument("fit_isotropic: need at least two samples");
    IsotropicFit fit;
    fit.mean = samples.rowwise().mean();
    const Matrix centred = samples.colwise() - fit.mean;
    fit.variance = centred.squaredNorm() / (static_cast<double>(n - 1) * static_cast<double>(samples.rows()));
    return fit;
}

MomentReport moment_report(const Matrix& samples, const OracleDist& oracle, std::size_t cond) {
    if (samples.rows() != oracle.dim()) throw InvalidArgument("moment_report: dimension mismatch");
    const IsotropicFit fit = fit_isotropic(samples);
    return {(fit.mean - oracle.mean(cond)).norm(), std::abs(fit.variance - oracle.isotropic_variance(cond))};
}

std::vector<NfeRow> nfe_gap(const VelocityField& field, const OracleDist& oracle, std::size_t cond,
                            const std::vector<int>& nfes, std::size_t n, Rng& rng) {
    if (nfes.empty()) throw InvalidArgument("nfe_gap: empty NFE list");
    if (n < 2) throw InvalidArgument("nfe_gap: need at least two samples");
    Matrix z(oracle.dim(), static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < z.cols(); ++i) z.col(i) = standard_normal(oracle.dim(), rng);
    const Vector target_mean = oracle.mean(cond);
    const double target_var = oracle.isotropic_variance(cond);

    std::vector<NfeRow> rows;
    for (int nfe : nfes) {
        const Matrix x = euler_sample_batch(field, z, nfe);
        const IsotropicFit fit = fit_isotropic(x);
        NfeRow row;
        row.nfe = nfe;
        row.cond = cond;
        row.w2 = gaussian_w2(fit.mean, fit.variance, target_mean, target_var);
        row.mean_err = (fit.mean - target_mean).norm();
        row.var_err = std::abs(fit.variance - target_var);
        rows.push_back(row);
    }
    return rows;
}

std::vector<NfeRow> nfe_gap(const VelocityModel& model, const OracleDist& oracle, const std::vector<int>& nfes,
                            std::size_t n, Rng& rng) {
    if (static_cast<std::size_t>(model.arch().conditions) != oracle.conditions()) {
        throw InvalidArgument("nfe_gap: model and oracle disagree on the number of conditions");
    }
    std::vector<NfeRow> rows;
    for (std::size_t c = 0; c < oracle.conditions(); ++c) {
        const ModelField field(model, model.embedding(c));
        auto part = nfe_gap(field, oracle, c, nfes, n, rng);
        rows.insert(rows.end(), part.begin(), part.end());
    }
    return rows;
}

}  // namespace apex
