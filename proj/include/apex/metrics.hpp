#pragma once

#include <cstddef>
#include <vector>

#include "apex/net.hpp"
#include "apex/oracle.hpp"
#include "apex/rng.hpp"
#include "apex/sampler.hpp"

namespace apex {

// Empirical mean and isotropic variance (trace of the unbiased covariance / d)
// of the columns of `samples`.
struct IsotropicFit {
    Vector mean;
    double variance = 0.0;
};

IsotropicFit fit_isotropic(const Matrix& samples);

struct MomentReport {
    double mean_err = 0.0;  // ||empirical mean - oracle mean||
    double var_err = 0.0;   // |empirical variance - oracle variance|
};

// Samples are the columns of a d x N matrix; N >= 2.
MomentReport moment_report(const Matrix& samples, const OracleDist& oracle, std::size_t cond);

struct NfeRow {
    int nfe = 0;
    std::size_t cond = 0;
    double w2 = 0.0;
    double mean_err = 0.0;
    double var_err = 0.0;
};

// W2 between the isotropic fit of n Euler samples and the oracle's condition
// marginal, for each NFE. Every NFE integrates the same noise draws.
std::vector<NfeRow> nfe_gap(const VelocityField& field, const OracleDist& oracle, std::size_t cond,
                            const std::vector<int>& nfes, std::size_t n, Rng& rng);

// The table above for every condition of the model, conditions in order.
std::vector<NfeRow> nfe_gap(const VelocityModel& model, const OracleDist& oracle, const std::vector<int>& nfes,
                            std::size_t n, Rng& rng);

}  // namespace apex
