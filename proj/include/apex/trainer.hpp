#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "apex/config.hpp"
#include "apex/losses.hpp"
#include "apex/net.hpp"

namespace apex {

// Seed streams (see derive_seed) used by train() for the model initialisation,
// the data batches and the fake-trajectory noise.
enum TrainStream : std::uint64_t { kInitStream = 0, kBatchStream = 1, kFakeStream = 2 };

class Optimizer {
public:
    virtual ~Optimizer() = default;
    // Updates params in place from grad (same size).
    virtual void step(Eigen::Ref<Vector> params, const Vector& grad) = 0;
};

// Bias-corrected Adam:
//   m = b1 m + (1 - b1) g,  v = b2 v + (1 - b2) g^2,
//   p -= lr * (m / (1 - b1^k)) / (sqrt(v / (1 - b2^k)) + eps)
class Adam : public Optimizer {
public:
    Adam(const OptimizerConfig& cfg, Eigen::Index size);
    void step(Eigen::Ref<Vector> params, const Vector& grad) override;

private:
    OptimizerConfig cfg_;
    Vector m_;
    Vector v_;
    long k_ = 0;
};

class Sgd : public Optimizer {
public:
    explicit Sgd(double lr) : lr_(lr) {}
    void step(Eigen::Ref<Vector> params, const Vector& grad) override { params -= lr_ * grad; }

private:
    double lr_;
};

std::unique_ptr<Optimizer> make_optimizer(const OptimizerConfig& cfg, Eigen::Index size);

// Number of leading parameters the optimizer updates: the whole vector when
// embeddings are learnable, else only the network weights.
Eigen::Index trainable_count(const Architecture& arch);

struct StepRecord {
    long step = 0;
    LossReport report;
    std::optional<double> wallclock_ms;
};

// One NDJSON line (no trailing newline).
std::string to_ndjson(const StepRecord& rec);

struct TrainResult {
    VelocityModel model;
    std::vector<StepRecord> log;
};

// Optional per-step observer, called after each logged step.
using StepObserver = std::function<void(const StepRecord&)>;

// Runs cfg.steps updates of L_APEX from the seeded initialisation. Pure
// apart from the observer; identical configs give identical results.
TrainResult train(const RunConfig& cfg, const StepObserver& observer = {});

// train() plus run-directory output: metrics.ndjson, checkpoint.bin and
// config.txt under `out`. On NumericFailure the last good parameters are
// written to checkpoint.bin before the error propagates.
TrainResult train_to_dir(const RunConfig& cfg, const std::filesystem::path& out);

}  // namespace apex
