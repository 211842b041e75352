#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "hvae/tensor.hpp"

namespace hvae {

enum class ModelVariant { VAE, NVAE, NVMP, NVMP_PLUS };

inline std::string variant_name(ModelVariant v) {
    switch (v) {
        case ModelVariant::VAE: return "vae";
        case ModelVariant::NVAE: return "nvae";
        case ModelVariant::NVMP: return "nvmp";
        case ModelVariant::NVMP_PLUS: return "nvmp+";
    }
    return "?";
}

inline ModelVariant parse_variant(const std::string& s) {
    if (s == "vae") return ModelVariant::VAE;
    if (s == "nvae") return ModelVariant::NVAE;
    if (s == "nvmp") return ModelVariant::NVMP;
    if (s == "nvmp+" || s == "nvmp_plus") return ModelVariant::NVMP_PLUS;
    throw ContractViolation("unknown variant '" + s + "' (expected vae|nvae|nvmp|nvmp+)");
}

inline bool variant_uses_vamprior(ModelVariant v) {
    return v == ModelVariant::NVMP || v == ModelVariant::NVMP_PLUS;
}

/// Cyclical KL-weight schedule: beta ramps linearly from beta_init to 1 over
/// the first ramp_fraction of each cycle, holds at 1, then resets.
struct ScheduleConfig {
    long cycle_length = 10000;
    double beta_init = 2e-7;
    double ramp_fraction = 0.5;

    void validate() const {
        require(cycle_length >= 1, "cycle_length must be >= 1");
        require(beta_init > 0 && beta_init <= 1, "beta_init must be in (0, 1]");
        require(ramp_fraction > 0 && ramp_fraction <= 1, "ramp_fraction must be in (0, 1]");
    }
};

struct SupervisionConfig {
    bool enabled = false;
    int target_layer = 2;  // z_P
    double loss_weight = 1.0;

    void validate(int levels) const {
        require(target_layer >= 0 && target_layer <= levels,
                "supervise_layer must be in [0, levels]");
        require(loss_weight >= 0, "supervision loss_weight must be >= 0");
    }
};

struct RunConfig {
    ModelVariant variant = ModelVariant::NVAE;
    int levels = 4;           // L; the hierarchy has L+1 groups
    int latent_channels = 2;  // c_l, identical at every scale
    int width = 32;           // feature channels at full resolution
    int width_cap = 128;
    int vamprior_k = 16;
    double lr = 5e-5;
    double weight_decay = 1e-8;
    int batch_size = 16;
    long max_iters = 1000;
    uint64_t seed = 1;
    long ckpt_every = 0;  // 0: final checkpoint only
    bool kl_balance = true;
    int mc_train_samples = 1;
    double clip_norm = 100.0;
    ScheduleConfig schedule;
    SupervisionConfig supervision;
    std::string data_dir;
    std::string out_dir;

    void validate() const {
        require(lr > 0, "lr must be > 0");
        require(max_iters >= 1, "max_iters must be >= 1");
        require(batch_size >= 1, "batch_size must be >= 1");
        require(levels >= 1, "levels must be >= 1");
        require(width >= 1 && width_cap >= width, "width must be >= 1 and <= width_cap");
        require(!variant_uses_vamprior(variant) || vamprior_k >= 1,
                "vamprior k must be >= 1 for nvmp variants");
        schedule.validate();
        supervision.validate(levels);
    }
};

namespace config_io {

inline std::string bool_str(bool b) { return b ? "true" : "false"; }

inline std::string to_text(const RunConfig& c) {
    std::ostringstream os;
    os << "variant = " << variant_name(c.variant) << "\n";
    os << "levels = " << c.levels << "\n";
    os << "latent_channels = " << c.latent_channels << "\n";
    os << "width = " << c.width << "\n";
    os << "width_cap = " << c.width_cap << "\n";
    os << "k = " << c.vamprior_k << "\n";
    os << "lr = " << c.lr << "\n";
    os << "weight_decay = " << c.weight_decay << "\n";
    os << "batch = " << c.batch_size << "\n";
    os << "iters = " << c.max_iters << "\n";
    os << "seed = " << c.seed << "\n";
    os << "ckpt_every = " << c.ckpt_every << "\n";
    os << "kl_balance = " << bool_str(c.kl_balance) << "\n";
    os << "mc_train_samples = " << c.mc_train_samples << "\n";
    os << "clip_norm = " << c.clip_norm << "\n";
    os << "cycle_length = " << c.schedule.cycle_length << "\n";
    os << "beta_init = " << c.schedule.beta_init << "\n";
    os << "ramp_fraction = " << c.schedule.ramp_fraction << "\n";
    os << "supervise = " << bool_str(c.supervision.enabled) << "\n";
    os << "supervise_layer = " << c.supervision.target_layer << "\n";
    os << "sup_weight = " << c.supervision.loss_weight << "\n";
    os << "data = " << c.data_dir << "\n";
    os << "out = " << c.out_dir << "\n";
    return os.str();
}

inline bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ContractViolation("bad boolean value '" + v + "'");
}

/// Apply one `key = value` assignment. Unknown keys are rejected.
inline void apply_key(RunConfig& c, const std::string& key, const std::string& value) {
    auto as_long = [&] { return std::stol(value); };
    auto as_int = [&] { return std::stoi(value); };
    auto as_double = [&] { return std::stod(value); };
    if (key == "variant") c.variant = parse_variant(value);
    else if (key == "levels") c.levels = as_int();
    else if (key == "latent_channels") c.latent_channels = as_int();
    else if (key == "width") c.width = as_int();
    else if (key == "width_cap") c.width_cap = as_int();
    else if (key == "k") c.vamprior_k = as_int();
    else if (key == "lr") c.lr = as_double();
    else if (key == "weight_decay") c.weight_decay = as_double();
    else if (key == "batch") c.batch_size = as_int();
    else if (key == "iters") c.max_iters = as_long();
    else if (key == "seed") c.seed = static_cast<uint64_t>(std::stoull(value));
    else if (key == "ckpt_every") c.ckpt_every = as_long();
    else if (key == "kl_balance") c.kl_balance = parse_bool(value);
    else if (key == "mc_train_samples") c.mc_train_samples = as_int();
    else if (key == "clip_norm") c.clip_norm = as_double();
    else if (key == "cycle_length") c.schedule.cycle_length = as_long();
    else if (key == "beta_init") c.schedule.beta_init = as_double();
    else if (key == "ramp_fraction") c.schedule.ramp_fraction = as_double();
    else if (key == "supervise") c.supervision.enabled = parse_bool(value);
    else if (key == "supervise_layer") c.supervision.target_layer = as_int();
    else if (key == "sup_weight") c.supervision.loss_weight = as_double();
    else if (key == "data") c.data_dir = value;
    else if (key == "out") c.out_dir = value;
    else throw ContractViolation("unknown config key '" + key + "'");
}

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline void parse_text(RunConfig& c, std::istream& in) {
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        require(eq != std::string::npos, "config line " + std::to_string(lineno) + " is not 'key = value'");
        apply_key(c, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
}

inline RunConfig load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    RunConfig c;
    parse_text(c, in);
    return c;
}

}  // namespace config_io

}  // namespace hvae
