#include "apex/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "apex/errors.hpp"
#include "apex/io.hpp"

namespace apex {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) out.push_back(trim(cur));
    return out;
}

double to_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || end != v.data() + v.size() || !std::isfinite(out)) {
        throw ConfigError(key, "expected a finite number, got '" + v + "'");
    }
    return out;
}

long long to_int(const std::string& key, const std::string& v) {
    long long out = 0;
    auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || end != v.data() + v.size()) throw ConfigError(key, "expected an integer, got '" + v + "'");
    return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || end != v.data() + v.size()) {
        throw ConfigError(key, "expected an unsigned integer, got '" + v + "'");
    }
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw ConfigError(key, "expected true or false, got '" + v + "'");
}

std::vector<int> to_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    if (v.empty()) return out;
    for (const auto& part : split(v, ',')) out.push_back(static_cast<int>(to_int(key, part)));
    return out;
}

std::vector<std::vector<GaussianComponent>> to_components(const std::string& key, const std::string& v, int dim) {
    std::vector<std::vector<GaussianComponent>> out;
    for (const auto& entry : split(v, ';')) {
        if (entry.empty()) continue;
        const auto fields = split(entry, ':');
        if (fields.size() != 4) throw ConfigError(key, "component '" + entry + "' is not cond:weight:stdev:mean");
        const auto cond = to_int(key, fields[0]);
        if (cond < 0 || cond > 1024) throw ConfigError(key, "condition index out of range");
        const auto coords = split(fields[3], ',');
        if (static_cast<int>(coords.size()) != dim) {
            throw ConfigError(key, "component mean must have dist.dim = " + std::to_string(dim) + " entries");
        }
        GaussianComponent comp;
        comp.weight = to_double(key, fields[1]);
        comp.stdev = to_double(key, fields[2]);
        comp.mean = Vector(dim);
        for (int i = 0; i < dim; ++i) comp.mean[i] = to_double(key, coords[static_cast<std::size_t>(i)]);
        if (out.size() <= static_cast<std::size_t>(cond)) out.resize(static_cast<std::size_t>(cond) + 1);
        out[static_cast<std::size_t>(cond)].push_back(comp);
    }
    if (out.empty()) throw ConfigError(key, "no components given");
    return out;
}

std::string components_text(const RunConfig& cfg) {
    std::string s;
    for (std::size_t c = 0; c < cfg.dist_components.size(); ++c) {
        for (const auto& comp : cfg.dist_components[c]) {
            if (!s.empty()) s += "; ";
            s += std::to_string(c) + ":" + format_double(comp.weight) + ":" + format_double(comp.stdev) + ":";
            for (Eigen::Index i = 0; i < comp.mean.size(); ++i) {
                if (i) s += ",";
                s += format_double(comp.mean[i]);
            }
        }
    }
    return s;
}

std::string join(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

}  // namespace

std::vector<std::vector<GaussianComponent>> RunConfig::default_components() {
    Vector right(2), left(2);
    right << 2.0, 0.0;
    left << -2.0, 0.0;
    return {{GaussianComponent{1.0, right, 0.5}}, {GaussianComponent{1.0, left, 0.5}}};
}

OracleDist RunConfig::dist() const { return OracleDist(dist_dim, dist_components); }

void RunConfig::validate() const {
    if (!(0.0 < t_min && t_min < t_max && t_max < 1.0)) throw ConfigError("t_min", "need 0 < t_min < t_max < 1");
    if (batch_size < 1) throw ConfigError("batch_size", "must be at least 1");
    if (steps < 0) throw ConfigError("steps", "must be non-negative");
    if (log_every < 1) throw ConfigError("log_every", "must be at least 1");
    if (eval_samples < 2) throw ConfigError("eval.n_samples", "must be at least 2");
    if (eval_nfe.empty()) throw ConfigError("eval.nfe", "must list at least one value");
    for (int n : eval_nfe) {
        if (n < 1) throw ConfigError("eval.nfe", "values must be positive");
    }
    if (optimizer.name != "adam" && optimizer.name != "sgd") {
        throw ConfigError("optimizer", "must be adam or sgd");
    }
    if (!(optimizer.lr > 0.0)) throw ConfigError("optimizer.lr", "must be positive");
    if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0)) throw ConfigError("optimizer.beta1", "must be in [0, 1)");
    if (!(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) throw ConfigError("optimizer.beta2", "must be in [0, 1)");
    if (!(optimizer.eps > 0.0)) throw ConfigError("optimizer.eps", "must be positive");
    try {
        weights.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError("loss.lambda", e.what());
    }
    try {
        arch.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError("model", e.what());
    }
    if (arch.data_dim != dist_dim) throw ConfigError("dist.dim", "does not match the model data dimension");
    if (arch.conditions != static_cast<int>(dist_components.size())) {
        throw ConfigError("dist.components", "condition count does not match the model");
    }
    try {
        (void)dist();
    } catch (const InvalidArgument& e) {
        throw ConfigError("dist.components", e.what());
    }
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "version") {
        if (to_int(key, value) != kConfigVersion) throw ConfigError(key, "unsupported config version " + value);
    } else if (key == "seed") {
        cfg.seed = to_u64(key, value);
    } else if (key == "steps") {
        cfg.steps = static_cast<long>(to_int(key, value));
    } else if (key == "batch_size") {
        cfg.batch_size = static_cast<long>(to_int(key, value));
    } else if (key == "log_every") {
        cfg.log_every = static_cast<long>(to_int(key, value));
    } else if (key == "t_min") {
        cfg.t_min = to_double(key, value);
    } else if (key == "t_max") {
        cfg.t_max = to_double(key, value);
    } else if (key == "shift.a") {
        cfg.shift.a = to_double(key, value);
    } else if (key == "shift.b") {
        cfg.shift.b = to_double(key, value);
    } else if (key == "loss.lambda") {
        cfg.weights.lambda = to_double(key, value);
    } else if (key == "loss.lambda_p") {
        cfg.weights.lambda_p = to_double(key, value);
    } else if (key == "loss.lambda_e") {
        cfg.weights.lambda_e = to_double(key, value);
    } else if (key == "fake_reuse_noise") {
        cfg.fake_reuse_noise = to_bool(key, value);
    } else if (key == "optimizer") {
        cfg.optimizer.name = value;
    } else if (key == "optimizer.lr") {
        cfg.optimizer.lr = to_double(key, value);
    } else if (key == "optimizer.beta1") {
        cfg.optimizer.beta1 = to_double(key, value);
    } else if (key == "optimizer.beta2") {
        cfg.optimizer.beta2 = to_double(key, value);
    } else if (key == "optimizer.eps") {
        cfg.optimizer.eps = to_double(key, value);
    } else if (key == "model.hidden") {
        cfg.arch.hidden = to_int_list(key, value);
    } else if (key == "model.activation") {
        try {
            cfg.arch.activation = activation_from_string(value);
        } catch (const InvalidArgument& e) {
            throw ConfigError(key, e.what());
        }
    } else if (key == "model.time_freqs") {
        cfg.arch.time_freqs = static_cast<int>(to_int(key, value));
    } else if (key == "model.embed_dim") {
        cfg.arch.embed_dim = static_cast<int>(to_int(key, value));
    } else if (key == "model.learnable_embeddings") {
        cfg.arch.learnable_embeddings = to_bool(key, value);
    } else if (key == "dist.dim") {
        const auto d = to_int(key, value);
        if (d < 1 || d > 8) throw ConfigError(key, "must be in [1, 8]");
        cfg.dist_dim = static_cast<int>(d);
        cfg.arch.data_dim = cfg.dist_dim;
    } else if (key == "dist.components") {
        cfg.dist_components = to_components(key, value, cfg.dist_dim);
        cfg.arch.conditions = static_cast<int>(cfg.dist_components.size());
    } else if (key == "deterministic") {
        cfg.deterministic = to_bool(key, value);
    } else if (key == "eval.n_samples") {
        cfg.eval_samples = static_cast<long>(to_int(key, value));
    } else if (key == "eval.nfe") {
        cfg.eval_nfe = to_int_list(key, value);
    } else {
        throw ConfigError(key, "unknown key");
    }
}

RunConfig parse_config(const std::string& text, RunConfig base) {
    RunConfig cfg = std::move(base);
    bool saw_version = false;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(lineno), "expected 'key = value'");
        }
        const std::string key = trim(std::string_view(line).substr(0, eq));
        const std::string value = trim(std::string_view(line).substr(eq + 1));
        if (key == "version") saw_version = true;
        set_config_value(cfg, key, value);
    }
    if (!saw_version) throw ConfigError("version", "missing (expected version = 1)");
    cfg.validate();
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const std::runtime_error& e) {
        throw ConfigError("--config", e.what());
    }
    return parse_config(text);
}

std::string to_text(const RunConfig& cfg) {
    std::ostringstream o;
    o << "version = " << kConfigVersion << "\n"
      << "seed = " << cfg.seed << "\n"
      << "steps = " << cfg.steps << "\n"
      << "batch_size = " << cfg.batch_size << "\n"
      << "log_every = " << cfg.log_every << "\n"
      << "t_min = " << format_double(cfg.t_min) << "\n"
      << "t_max = " << format_double(cfg.t_max) << "\n"
      << "shift.a = " << format_double(cfg.shift.a) << "\n"
      << "shift.b = " << format_double(cfg.shift.b) << "\n"
      << "loss.lambda = " << format_double(cfg.weights.lambda) << "\n"
      << "loss.lambda_p = " << format_double(cfg.weights.lambda_p) << "\n"
      << "loss.lambda_e = " << format_double(cfg.weights.lambda_e) << "\n"
      << "fake_reuse_noise = " << (cfg.fake_reuse_noise ? "true" : "false") << "\n"
      << "optimizer = " << cfg.optimizer.name << "\n"
      << "optimizer.lr = " << format_double(cfg.optimizer.lr) << "\n"
      << "optimizer.beta1 = " << format_double(cfg.optimizer.beta1) << "\n"
      << "optimizer.beta2 = " << format_double(cfg.optimizer.beta2) << "\n"
      << "optimizer.eps = " << format_double(cfg.optimizer.eps) << "\n"
      << "model.hidden = " << join(cfg.arch.hidden) << "\n"
      << "model.activation = " << to_string(cfg.arch.activation) << "\n"
      << "model.time_freqs = " << cfg.arch.time_freqs << "\n"
      << "model.embed_dim = " << cfg.arch.embed_dim << "\n"
      << "model.learnable_embeddings = " << (cfg.arch.learnable_embeddings ? "true" : "false") << "\n"
      << "dist.dim = " << cfg.dist_dim << "\n"
      << "dist.components = " << components_text(cfg) << "\n"
      << "deterministic = " << (cfg.deterministic ? "true" : "false") << "\n"
      << "eval.n_samples = " << cfg.eval_samples << "\n"
      << "eval.nfe = " << join(cfg.eval_nfe) << "\n";
    return o.str();
}

}  // namespace apex
