#include "apex/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"

#include "apex/checkpoint.hpp"
#include "apex/errors.hpp"
#include "apex/io.hpp"
#include "apex/sampler.hpp"
#include "apex/trainer.hpp"
#include "apex/verify.hpp"

namespace apex::cli {

namespace {

namespace fs = std::filesystem;

enum Stream : std::uint64_t { kEval = 20, kSample = 30 };

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool deterministic = false;
    std::string grid;
    std::string checkpoint;
    long n = 1000;
    int nfe = 1;
};

RunConfig resolve_config(const Options& opt, const fs::path& fallback) {
    RunConfig cfg;
    if (!opt.config.empty()) {
        cfg = load_config(opt.config);
    } else if (!fallback.empty() && fs::exists(fallback)) {
        cfg = load_config(fallback);
    }
    if (opt.seed) cfg.seed = *opt.seed;
    if (opt.deterministic) cfg.deterministic = true;
    cfg.validate();
    return cfg;
}

std::vector<NfeRow> evaluate(const VelocityModel& model, const RunConfig& cfg) {
    Rng rng(derive_seed(cfg.seed, kEval));
    return nfe_gap(model, cfg.dist(), cfg.eval_nfe, static_cast<std::size_t>(cfg.eval_samples), rng);
}

std::size_t thread_budget(bool deterministic) {
    if (deterministic) return 1;
    std::size_t n = std::max(1U, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("APEX_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v >= 1) n = std::min<std::size_t>(n, static_cast<std::size_t>(v));
        } catch (const std::exception&) {
            throw ConfigError("APEX_THREADS", std::string("not a positive integer: '") + env + "'");
        }
    }
    return n;
}

const char* kSweepHeader =
    "grid,cell,a,b,lambda_p,lambda_e,hash,nfe_lo,w2_lo,mean_err_lo,var_err_lo,nfe_hi,w2_hi,mean_err_hi,var_err_hi,"
    "final_l_mix\n";

// Condition-averaged metrics of one NFE value.
struct Summary {
    double w2 = 0.0, mean_err = 0.0, var_err = 0.0;
};

Summary average_at(const std::vector<NfeRow>& rows, int nfe) {
    Summary s;
    int count = 0;
    for (const auto& r : rows) {
        if (r.nfe != nfe) continue;
        s.w2 += r.w2;
        s.mean_err += r.mean_err;
        s.var_err += r.var_err;
        ++count;
    }
    if (count > 0) {
        s.w2 /= count;
        s.mean_err /= count;
        s.var_err /= count;
    }
    return s;
}

std::string sweep_row(const std::string& grid, const SweepCell& cell, const std::string& hash,
                      const std::vector<NfeRow>& rows, double final_l_mix) {
    const auto& cfg = cell.cfg;
    const int lo = cfg.eval_nfe.front();
    const int hi = cfg.eval_nfe.back();
    const Summary a = average_at(rows, lo);
    const Summary b = average_at(rows, hi);
    std::ostringstream o;
    o << grid << ',' << cell.label << ',' << format_double(cfg.shift.a) << ',' << format_double(cfg.shift.b) << ','
      << format_double(cfg.weights.lambda_p) << ',' << format_double(cfg.weights.lambda_e) << ',' << hash << ','
      << lo << ',' << format_double(a.w2) << ',' << format_double(a.mean_err) << ',' << format_double(a.var_err)
      << ',' << hi << ',' << format_double(b.w2) << ',' << format_double(b.mean_err) << ','
      << format_double(b.var_err) << ',' << format_double(final_l_mix) << '\n';
    return o.str();
}

std::string run_cell(const std::string& grid, const SweepCell& cell, const fs::path& out) {
    const std::string hash = cell_hash(cell.cfg);
    const fs::path dir = out / "cells" / hash;
    const fs::path summary = dir / "summary.json";
    if (fs::exists(summary)) {
        const auto j = nlohmann::json::parse(read_file(summary));
        return j.at("row").get<std::string>();
    }
    const TrainResult result = train_to_dir(cell.cfg, dir);
    const auto rows = evaluate(result.model, cell.cfg);
    write_file_atomic(dir / "eval.csv", eval_csv(rows));
    const double final_l_mix = result.log.empty() ? 0.0 : result.log.back().report.l_mix;
    const std::string row = sweep_row(grid, cell, hash, rows, final_l_mix);
    nlohmann::ordered_json j;
    j["label"] = cell.label;
    j["row"] = row;
    write_file_atomic(summary, j.dump() + "\n");
    return row;
}

int cmd_train(const Options& opt, std::ostream& out) {
    const fs::path dir = opt.out.empty() ? fs::path("runs/train") : fs::path(opt.out);
    const RunConfig cfg = resolve_config(opt, {});
    const TrainResult result = train_to_dir(cfg, dir);
    if (!result.log.empty()) {
        const auto& r = result.log.back().report;
        out << "step " << result.log.back().step << " l_apex " << r.l_apex << " l_mix " << r.l_mix << " l_fake "
            << r.l_fake << "\n";
    }
    out << "wrote " << (dir / "checkpoint.bin").string() << "\n";
    return kOk;
}

int cmd_sample(const Options& opt, std::ostream& out) {
    const fs::path dir = opt.out.empty() ? fs::path("runs/train") : fs::path(opt.out);
    const fs::path ckpt = opt.checkpoint.empty() ? dir / "checkpoint.bin" : fs::path(opt.checkpoint);
    const VelocityModel model = checkpoint_load(ckpt);
    if (opt.n < 1) throw InvalidArgument("--n must be positive");
    if (opt.nfe < 1) throw InvalidArgument("--nfe must be positive");
    Rng rng(derive_seed(opt.seed.value_or(0), kSample));
    const int d = model.arch().data_dim;
    std::string csv = "cond";
    for (int i = 0; i < d; ++i) csv += ",x" + std::to_string(i);
    csv += "\n";
    for (int c = 0; c < model.arch().conditions; ++c) {
        Matrix z(d, opt.n);
        for (Eigen::Index i = 0; i < z.cols(); ++i) z.col(i) = standard_normal(d, rng);
        const ModelField field(model, model.embedding(static_cast<std::size_t>(c)));
        const Matrix x = euler_sample_batch(field, z, opt.nfe);
        for (Eigen::Index i = 0; i < x.cols(); ++i) {
            csv += std::to_string(c);
            for (int k = 0; k < d; ++k) csv += "," + format_double(x(k, i));
            csv += "\n";
        }
    }
    write_file_atomic(dir / "samples.csv", csv);
    out << "wrote " << (dir / "samples.csv").string() << "\n";
    return kOk;
}

int cmd_verify(const Options& opt, std::ostream& out) {
    const fs::path dir = opt.out.empty() ? fs::path("runs/verify") : fs::path(opt.out);
    const auto reports = run_all_checks(opt.seed.value_or(0));
    std::string ndjson;
    bool ok = true;
    for (const auto& r : reports) {
        ndjson += to_ndjson(r) + "\n";
        ok = ok && r.pass;
        out << (r.pass ? "PASS " : "FAIL ") << r.check << "\n";
    }
    write_file_atomic(dir / "verify.ndjson", ndjson);
    return ok ? kOk : kCheckFailed;
}

int cmd_eval(const Options& opt, std::ostream& out) {
    const fs::path dir = opt.out.empty() ? fs::path("runs/train") : fs::path(opt.out);
    const RunConfig cfg = resolve_config(opt, dir / "config.txt");
    const fs::path ckpt = opt.checkpoint.empty() ? dir / "checkpoint.bin" : fs::path(opt.checkpoint);
    const VelocityModel model = checkpoint_load(ckpt, cfg.arch);
    const std::string csv = eval_csv(evaluate(model, cfg));
    write_file_atomic(dir / "eval.csv", csv);
    out << csv;
    return kOk;
}

int cmd_sweep(const Options& opt, std::ostream& out) {
    const fs::path dir = opt.out.empty() ? fs::path("runs/sweep") : fs::path(opt.out);
    const RunConfig base = resolve_config(opt, {});
    const std::string csv = run_sweep(opt.grid, base, dir, thread_budget(opt.deterministic));
    out << csv;
    return kOk;
}

}  // namespace

std::vector<SweepCell> sweep_cells(const std::string& grid, const RunConfig& base) {
    std::vector<SweepCell> cells;
    if (grid == "ab") {
        for (double a : {-1.0, -0.5, 0.5}) {
            for (double b : {0.0, 0.1, 1.0, 10.0}) {
                SweepCell cell{"a=" + format_double(a) + " b=" + format_double(b), base};
                cell.cfg.shift = {a, b};
                cells.push_back(std::move(cell));
            }
        }
    } else if (grid == "pe") {
        const std::pair<double, double> ratios[] = {{1.0, 0.0}, {0.0, 1.0}, {1.0, 0.5}, {1.0, 1.0}, {1.0, 2.0}};
        for (const auto& [p, e] : ratios) {
            SweepCell cell{format_double(p) + ":" + format_double(e), base};
            cell.cfg.weights.lambda_p = p;
            cell.cfg.weights.lambda_e = e;
            cells.push_back(std::move(cell));
        }
    } else {
        throw InvalidArgument("unknown grid '" + grid + "' (expected ab or pe)");
    }
    return cells;
}

std::string cell_hash(const RunConfig& cfg) { return hex64(fnv1a64(to_text(cfg))); }

std::string run_sweep(const std::string& grid, const RunConfig& base, const fs::path& out, std::size_t threads) {
    const auto cells = sweep_cells(grid, base);
    std::vector<std::string> rows(cells.size());
    std::vector<std::exception_ptr> errors(cells.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < cells.size(); i = next++) {
            try {
                rows[i] = run_cell(grid, cells[i], out);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t n_threads = std::clamp<std::size_t>(threads, 1, cells.size());
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    std::string csv = kSweepHeader;
    for (const auto& r : rows) csv += r;
    write_file_atomic(out / "sweep.csv", csv);
    return csv;
}

std::string eval_csv(const std::vector<NfeRow>& rows) {
    std::string csv = "nfe,cond,w2,mean_err,var_err\n";
    for (const auto& r : rows) {
        csv += std::to_string(r.nfe) + "," + std::to_string(r.cond) + "," + format_double(r.w2) + "," +
               format_double(r.mean_err) + "," + format_double(r.var_err) + "\n";
    }
    return csv;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"APEX toy flow-matching trainer and certification suite", "apex"};
    app.require_subcommand(1);
    Options opt;
    std::uint64_t seed = 0;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opt.config, "Config file (flat key = value)");
        sub->add_option("--seed", seed, "Seed overriding the config");
        sub->add_option("--out", opt.out, "Output directory");
        sub->add_flag("--deterministic", opt.deterministic, "Single-threaded, wall-clock free output");
    };
    auto* train = app.add_subcommand("train", "Train a model and write a run directory");
    add_common(train);
    auto* sample = app.add_subcommand("sample", "Draw samples from a trained checkpoint");
    add_common(sample);
    sample->add_option("--checkpoint", opt.checkpoint, "Checkpoint (default OUT/checkpoint.bin)");
    sample->add_option("--n", opt.n, "Samples per condition");
    sample->add_option("--nfe", opt.nfe, "Euler steps");
    auto* verify = app.add_subcommand("verify", "Run the certification checks");
    add_common(verify);
    auto* eval = app.add_subcommand("eval", "Evaluate a trained checkpoint");
    add_common(eval);
    eval->add_option("--checkpoint", opt.checkpoint, "Checkpoint (default OUT/checkpoint.bin)");
    auto* sweep = app.add_subcommand("sweep", "Train and evaluate every cell of a grid");
    add_common(sweep);
    sweep->add_option("--grid", opt.grid, "Grid name")->required()->check(CLI::IsMember({"ab", "pe"}));

    std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        err << app.help();
        return kUsage;
    }
    for (auto* sub : app.get_subcommands()) {
        if (sub->count("--seed") > 0) opt.seed = seed;
    }

    try {
        if (train->parsed()) return cmd_train(opt, out);
        if (sample->parsed()) return cmd_sample(opt, out);
        if (verify->parsed()) return cmd_verify(opt, out);
        if (eval->parsed()) return cmd_eval(opt, out);
        if (sweep->parsed()) return cmd_sweep(opt, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kUsage;
    } catch (const InvalidArgument& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kCheckFailed;
    }
    return kUsage;
}

int run(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    return run(args, std::cout, std::cerr);
}

}  // namespace apex::cli
