#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "peftlab/adapters.hpp"
#include "peftlab/errors.hpp"
#include "peftlab/optim.hpp"

namespace peftlab {

enum class TaskKind { TeacherStudent, Blobs };

/// Full description of one experiment. Everything downstream (data, model,
/// schedule, masking) derives deterministically from this plus the seed.
struct TrainConfig {
    TaskKind task = TaskKind::TeacherStudent;
    AdapterKind adapter = AdapterKind::MAP;

    // shapes
    long n = 16, m = 12, r = 2;
    long hidden = 16;   // blobs MLP hidden width
    long classes = 3;   // blobs
    long samples = 512;

    // blobs geometry: class-mean radius and within-class spread
    double blob_radius = 4.0;
    double blob_spread = 0.6;

    // task parameters
    double a_star = 8.0, b_star = 3.0, noise_std = 0.01;

    // adapter hyper-parameters
    double lora_alpha = 32.0;
    double beta_init = 1.0;
    double b_init_std = 1e-3;
    double dropout_p = 0.0;

    // optimizer / schedule
    OptKind optimizer = OptKind::AdamW;
    OptHyper hyper{};     // hyper.lr is the peak learning rate
    long warmup_steps = 100;
    long epochs = 3;
    long batch_size = 16;
    long max_steps = 0;   // 0 = derive from epochs

    OptModeCfg opt_mode{};
    long stepwise_period = 0;  // 0 = one epoch's worth of steps

    std::uint64_t seed = 0;
    bool record_timing = false;  // fills step_ms in metrics.csv (non-deterministic)
};

inline const char* task_name(TaskKind t) {
    return t == TaskKind::TeacherStudent ? "teacher_student" : "blobs";
}

namespace detail {

inline std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace detail

/// Canonical key=value serialization. Field order is fixed so the config hash
/// is stable.
inline std::string serialize_config(const TrainConfig& c) {
    std::ostringstream os;
    os << "task = " << task_name(c.task) << "\n";
    os << "adapter = " << kind_name(c.adapter) << "\n";
    os << "n = " << c.n << "\n";
    os << "m = " << c.m << "\n";
    os << "r = " << c.r << "\n";
    os << "hidden = " << c.hidden << "\n";
    os << "classes = " << c.classes << "\n";
    os << "samples = " << c.samples << "\n";
    os << "blob_radius = " << detail::fmt_double(c.blob_radius) << "\n";
    os << "blob_spread = " << detail::fmt_double(c.blob_spread) << "\n";
    os << "a_star = " << detail::fmt_double(c.a_star) << "\n";
    os << "b_star = " << detail::fmt_double(c.b_star) << "\n";
    os << "noise_std = " << detail::fmt_double(c.noise_std) << "\n";
    os << "lora_alpha = " << detail::fmt_double(c.lora_alpha) << "\n";
    os << "beta_init = " << detail::fmt_double(c.beta_init) << "\n";
    os << "b_init_std = " << detail::fmt_double(c.b_init_std) << "\n";
    os << "dropout_p = " << detail::fmt_double(c.dropout_p) << "\n";
    os << "optimizer = " << (c.optimizer == OptKind::AdamW ? "adamw" : "sgd") << "\n";
    os << "lr = " << detail::fmt_double(c.hyper.lr) << "\n";
    os << "beta1 = " << detail::fmt_double(c.hyper.beta1) << "\n";
    os << "beta2 = " << detail::fmt_double(c.hyper.beta2) << "\n";
    os << "eps = " << detail::fmt_double(c.hyper.eps) << "\n";
    os << "weight_decay = " << detail::fmt_double(c.hyper.weight_decay) << "\n";
    os << "warmup_steps = " << c.warmup_steps << "\n";
    os << "epochs = " << c.epochs << "\n";
    os << "batch_size = " << c.batch_size << "\n";
    os << "max_steps = " << c.max_steps << "\n";
    os << "mode = " << (c.opt_mode.mode == OptMode::Joint ? "joint" : "stepwise") << "\n";
    os << "stepwise_period = " << c.stepwise_period << "\n";
    os << "seed = " << c.seed << "\n";
    os << "record_timing = " << (c.record_timing ? 1 : 0) << "\n";
    return os.str();
}

inline std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 0x100000001B3ULL;
    }
    return h;
}

inline std::string config_hash(const TrainConfig& c) {
    std::ostringstream os;
    os << std::hex << fnv1a64(serialize_config(c));
    return os.str();
}

inline void validate_config(const TrainConfig& c) {
    if (c.n < 1 || c.m < 1) throw ConfigError("n and m must be positive");
    if (c.r < 1 || c.r > std::min(c.n, c.m))
        throw ConfigError("rank must satisfy 1 <= r <= min(n, m)");
    if (c.task == TaskKind::Blobs) {
        if (c.classes < 2) throw ConfigError("classes must be >= 2");
        if (c.hidden < 1) throw ConfigError("hidden must be positive");
        if (c.r > std::min(c.n, c.hidden) || c.r > std::min(c.hidden, c.classes))
            throw ConfigError("rank exceeds a blobs layer dimension");
        if (c.blob_radius <= 0.0) throw ConfigError("blob_radius must be positive");
        if (c.blob_spread <= 0.0) throw ConfigError("blob_spread must be positive");
    }
    if (c.samples < 10) throw ConfigError("samples must be >= 10");
    if (c.noise_std < 0.0) throw ConfigError("noise_std must be >= 0");
    if (c.lora_alpha <= 0.0) throw ConfigError("lora_alpha must be positive");
    if (c.b_init_std < 0.0) throw ConfigError("b_init_std must be >= 0");
    if (c.dropout_p < 0.0 || c.dropout_p >= 1.0)
        throw ConfigError("dropout_p must be in [0, 1)");
    if (c.dropout_p > 0.0 && c.adapter == AdapterKind::DoRA)
        throw ConfigError("dora does not support dropout");
    if (c.hyper.lr <= 0.0) throw ConfigError("lr must be positive");
    if (c.hyper.beta1 < 0.0 || c.hyper.beta1 >= 1.0 || c.hyper.beta2 < 0.0 ||
        c.hyper.beta2 >= 1.0)
        throw ConfigError("adam betas must be in [0, 1)");
    if (c.hyper.eps <= 0.0) throw ConfigError("eps must be positive");
    if (c.hyper.weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    if (c.warmup_steps < 0) throw ConfigError("warmup_steps must be >= 0");
    if (c.epochs < 1 && c.max_steps < 1)
        throw ConfigError("need epochs >= 1 or max_steps >= 1");
    if (c.batch_size < 1) throw ConfigError("batch_size must be positive");
    if (c.opt_mode.mode == OptMode::Stepwise) {
        if (c.adapter != AdapterKind::MAP)
            throw ConfigError("stepwise mode requires the map adapter");
        if (c.stepwise_period < 0) throw ConfigError("stepwise_period must be >= 0");
    }
}

// ---------------------------------------------------------------------------
// key = value text parsing ('#' starts a comment)
// ---------------------------------------------------------------------------

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config: bad numeric value for '" + key + "': " + v);
    }
}

inline long parse_long(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const long d = std::stol(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer value for '" + key + "': " + v);
    }
}

}  // namespace detail

inline AdapterKind parse_adapter_kind(const std::string& v) {
    if (v == "lora") return AdapterKind::PlainLoRA;
    if (v == "dora") return AdapterKind::DoRA;
    if (v == "map") return AdapterKind::MAP;
    throw ConfigError("config: unknown adapter '" + v + "' (lora|dora|map)");
}

/// Parse config text into `c` (fields not mentioned keep their prior values).
/// Unknown keys are errors; nothing executes on an invalid config.
inline void parse_config_text(const std::string& text, TrainConfig& c) {
    std::istringstream in(text);
    std::string line;
    long lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": expected 'key = value'");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string val = detail::trim(line.substr(eq + 1));
        if (key == "task") {
            if (val == "teacher_student") c.task = TaskKind::TeacherStudent;
            else if (val == "blobs") c.task = TaskKind::Blobs;
            else throw ConfigError("config: unknown task '" + val + "'");
        } else if (key == "adapter") c.adapter = parse_adapter_kind(val);
        else if (key == "n") c.n = detail::parse_long(key, val);
        else if (key == "m") c.m = detail::parse_long(key, val);
        else if (key == "r") c.r = detail::parse_long(key, val);
        else if (key == "hidden") c.hidden = detail::parse_long(key, val);
        else if (key == "classes") c.classes = detail::parse_long(key, val);
        else if (key == "samples") c.samples = detail::parse_long(key, val);
        else if (key == "blob_radius") c.blob_radius = detail::parse_double(key, val);
        else if (key == "blob_spread") c.blob_spread = detail::parse_double(key, val);
        else if (key == "a_star") c.a_star = detail::parse_double(key, val);
        else if (key == "b_star") c.b_star = detail::parse_double(key, val);
        else if (key == "noise_std") c.noise_std = detail::parse_double(key, val);
        else if (key == "lora_alpha") c.lora_alpha = detail::parse_double(key, val);
        else if (key == "beta_init") c.beta_init = detail::parse_double(key, val);
        else if (key == "b_init_std") c.b_init_std = detail::parse_double(key, val);
        else if (key == "dropout_p") c.dropout_p = detail::parse_double(key, val);
        else if (key == "optimizer") {
            if (val == "adamw") c.optimizer = OptKind::AdamW;
            else if (val == "sgd") c.optimizer = OptKind::SGD;
            else throw ConfigError("config: unknown optimizer '" + val + "'");
        } else if (key == "lr") c.hyper.lr = detail::parse_double(key, val);
        else if (key == "beta1") c.hyper.beta1 = detail::parse_double(key, val);
        else if (key == "beta2") c.hyper.beta2 = detail::parse_double(key, val);
        else if (key == "eps") c.hyper.eps = detail::parse_double(key, val);
        else if (key == "weight_decay") c.hyper.weight_decay = detail::parse_double(key, val);
        else if (key == "warmup_steps") c.warmup_steps = detail::parse_long(key, val);
        else if (key == "epochs") c.epochs = detail::parse_long(key, val);
        else if (key == "batch_size") c.batch_size = detail::parse_long(key, val);
        else if (key == "max_steps") c.max_steps = detail::parse_long(key, val);
        else if (key == "mode") {
            if (val == "joint") c.opt_mode.mode = OptMode::Joint;
            else if (val == "stepwise") c.opt_mode.mode = OptMode::Stepwise;
            else throw ConfigError("config: unknown mode '" + val + "'");
        } else if (key == "stepwise_period") c.stepwise_period = detail::parse_long(key, val);
        else if (key == "seed") c.seed = static_cast<std::uint64_t>(detail::parse_long(key, val));
        else if (key == "record_timing") c.record_timing = detail::parse_long(key, val) != 0;
        else throw ConfigError("config: unknown key '" + key + "'");
    }
}

}  // namespace peftlab
