#include "apex/trainer.hpp"

#include <chrono>
#include <cmath>

#include "json.hpp"

#include "apex/checkpoint.hpp"
#include "apex/errors.hpp"
#include "apex/io.hpp"
#include "apex/rng.hpp"

namespace apex {

Adam::Adam(const OptimizerConfig& cfg, Eigen::Index size)
    : cfg_(cfg), m_(Vector::Zero(size)), v_(Vector::Zero(size)) {}

void Adam::step(Eigen::Ref<Vector> params, const Vector& grad) {
    if (grad.size() != m_.size() || params.size() != m_.size()) {
        throw InvalidArgument("Adam: size mismatch");
    }
    ++k_;
    m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grad;
    v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(k_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(k_));
    params.array() -= cfg_.lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + cfg_.eps);
}

std::unique_ptr<Optimizer> make_optimizer(const OptimizerConfig& cfg, Eigen::Index size) {
    if (cfg.name == "adam") return std::make_unique<Adam>(cfg, size);
    if (cfg.name == "sgd") return std::make_unique<Sgd>(cfg.lr);
    throw InvalidArgument("unknown optimizer '" + cfg.name + "'");
}

Eigen::Index trainable_count(const Architecture& arch) {
    return static_cast<Eigen::Index>(arch.learnable_embeddings ? arch.param_count() : arch.network_param_count());
}

std::string to_ndjson(const StepRecord& rec) {
    const auto& r = rec.report;
    nlohmann::ordered_json j;
    j["step"] = rec.step;
    j["l_fm"] = r.l_fm;
    j["l_fake"] = r.l_fake;
    j["l_sup"] = r.l_sup;
    j["l_cons"] = r.l_cons;
    j["l_mix"] = r.l_mix;
    j["g_apex"] = r.g_apex;
    j["l_apex"] = r.l_apex;
    j["delta_v_norm"] = r.delta_v_norm;
    j["wallclock_ms"] = rec.wallclock_ms ? nlohmann::ordered_json(*rec.wallclock_ms) : nlohmann::ordered_json();
    return j.dump();
}

namespace {

TrainResult run(const RunConfig& cfg, const StepObserver& observer, VelocityModel* last_good) {
    cfg.validate();
    const OracleDist dist = cfg.dist();
    VelocityModel model = VelocityModel::initialize(cfg.arch, derive_seed(cfg.seed, kInitStream));
    Rng batch_rng(derive_seed(cfg.seed, kBatchStream));
    Rng fake_rng(derive_seed(cfg.seed, kFakeStream));
    const Eigen::Index n_train = trainable_count(cfg.arch);
    auto opt = make_optimizer(cfg.optimizer, n_train);

    TrainResult result{model, {}};
    const auto start = std::chrono::steady_clock::now();
    Vector g;
    for (long step = 1; step <= cfg.steps; ++step) {
        const Batch batch = sample_batch(dist, cfg.batch_size, cfg.t_min, cfg.t_max, batch_rng);
        const FakeNoise noise = draw_fake_noise(batch, fake_rng, cfg.t_min, cfg.t_max, cfg.fake_reuse_noise);
        const LossReport rep = l_apex(model, batch, cfg.shift, cfg.weights, noise, &g);
        if (!std::isfinite(rep.l_apex)) throw NumericFailure("train: non-finite loss", step);
        if (!g.allFinite()) throw NumericFailure("train: non-finite gradient", step);
        if (last_good) *last_good = model;
        opt->step(model.params().head(n_train), g.head(n_train));
        if (!model.params().allFinite()) throw NumericFailure("train: non-finite parameters", step);

        if (step % cfg.log_every == 0 || step == cfg.steps) {
            StepRecord rec{step, rep, std::nullopt};
            if (!cfg.deterministic) {
                rec.wallclock_ms =
                    std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
            }
            if (observer) observer(rec);
            result.log.push_back(std::move(rec));
        }
    }
    result.model = std::move(model);
    return result;
}

}  // namespace

TrainResult train(const RunConfig& cfg, const StepObserver& observer) { return run(cfg, observer, nullptr); }

TrainResult train_to_dir(const RunConfig& cfg, const std::filesystem::path& out) {
    std::filesystem::create_directories(out);
    write_file_atomic(out / "config.txt", to_text(cfg));
    VelocityModel last_good = VelocityModel::initialize(cfg.arch, derive_seed(cfg.seed, kInitStream));
    try {
        TrainResult result = run(cfg, {}, &last_good);
        std::string metrics;
        for (const auto& rec : result.log) metrics += to_ndjson(rec) + "\n";
        write_file_atomic(out / "metrics.ndjson", metrics);
        checkpoint_save(result.model, out / "checkpoint.bin");
        return result;
    } catch (const NumericFailure&) {
        checkpoint_save(last_good, out / "checkpoint.bin");
        throw;
    }
}

}  // namespace apex
