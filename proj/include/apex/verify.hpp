#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "apex/losses.hpp"
#include "apex/net.hpp"
#include "apex/oracle.hpp"
#include "apex/rng.hpp"

namespace apex {

// One machine-readable check outcome.
struct CheckReport {
    std::string check;
    bool pass = false;
    bool skipped = false;
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, double>> metrics;
    std::string note;

    double metric(const std::string& name) const;  // throws if absent
};

std::string to_ndjson(const CheckReport& report);

struct DualityGrid {
    std::vector<double> times;  // defaults to 0.05, 0.10, ..., 0.95
    double extent = 3.0;        // lattice covers [-extent, extent]^d
    int points_per_axis = 13;

    static DualityGrid standard();
};

// |velocity_to_score(optimal_velocity) - marginal_score| over every condition
// of `oracle`, every grid time and every lattice point; pass iff < 1e-8.
CheckReport check_duality(const OracleDist& oracle, const DualityGrid& grid);

// v1 - v2 == -omega(t) (s1 - s2) on random tuples; errors are relative to the
// magnitude of the inputs. Pass iff < 1e-12.
CheckReport check_corollary(Rng& rng, std::size_t n_cases, std::uint64_t seed = 0);

// Endpoint-space and velocity-space forms of the supervised and fake-alignment
// losses agree on random (x, z, t, F, v_fake); pass iff the error relative to
// t(1 - t)(|F| + |v|)^2 is below 1e-12.
CheckReport check_endpoint_equiv(Rng& rng, std::size_t n_cases, std::uint64_t seed = 0);

struct GradEquivSpec {
    std::uint64_t model_seed = 1;
    std::uint64_t batch_seed = 2;
    double lambda = 0.5;
    ShiftSpec shift;
    std::vector<int> hidden{88, 88};  // ~10k parameters
    Eigen::Index batch_size = 64;
    bool finite_diff = true;          // also certify both gradients on a <= 200 parameter net
};

// ||grad l_mix - grad g_apex|| / ||grad g_apex|| < 1e-8 with shared v_fake,
// plus central finite differences at relative tolerance 1e-4.
CheckReport check_grad_equiv(const GradEquivSpec& spec);

struct KlDescentSpec {
    Vector theta;    // generator x = z + theta
    Vector mu_star;  // target N(mu_star, I)
    std::size_t n = 100000;
};

// Monte-Carlo velocity-space KL gradient against the analytic theta - mu*.
// Pass iff cosine > 0.99.
CheckReport check_kl_descent(const KlDescentSpec& spec, Rng& rng, std::uint64_t seed = 0);

struct GanAlignmentSpec {
    std::size_t cond = 0;
    ShiftSpec shift;
    double lambda = 0.5;
    std::size_t n = 100000;
    double ratio_t = 0.3;           // fixed time of the per-sample ratio test
    std::size_t ratio_samples = 1000;
};

// (i) cosine between grad g_apex and the matched-sample score-form estimate
// E[-2 t^2 (s_theta - s_mix) . dF/dtheta] > 0.95, (ii) per-sample ratio of the
// velocity combination to s_theta - s_mix equals -t/(1-t) with relative
// variance < 1e-10.
CheckReport check_gan_alignment(const VelocityModel& model, const OracleDist& oracle, const GanAlignmentSpec& spec,
                                Rng& rng, std::uint64_t seed = 0);

// Every check with default settings, each on its own stream derived from `seed`.
std::vector<CheckReport> run_all_checks(std::uint64_t seed);

}  // namespace apex
