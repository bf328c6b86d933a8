#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "seqseg/common.hpp"
#include "seqseg/inference.hpp"
#include "seqseg/model.hpp"
#include "seqseg/training.hpp"

namespace seqseg {

// Effective settings of a run; flat keys shared by config files and flags.
// Precedence: CLI flag > config file > built-in default.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    InferenceConfig infer;
};

// key = value lines; '#' starts a comment, blank lines are skipped.
inline std::map<std::string, std::string> load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file: " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        std::string stripped = detail::trim(line);
        if (stripped.empty()) continue;
        auto eq = stripped.find('=');
        if (eq == std::string::npos)
            throw UsageError("config line " + std::to_string(line_no) + ": expected key = value");
        std::string key = detail::trim(stripped.substr(0, eq));
        std::string value = detail::trim(stripped.substr(eq + 1));
        if (key.empty())
            throw UsageError("config line " + std::to_string(line_no) + ": empty key");
        kv[key] = value;  // later lines win
    }
    return kv;
}

namespace detail_cfg {

inline long long parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        long long out = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw UsageError("config: bad integer for " + key + ": '" + v + "'");
    }
}

inline double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        double out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw UsageError("config: bad number for " + key + ": '" + v + "'");
    }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw UsageError("config: bad boolean for " + key + ": '" + v + "'");
}

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail_cfg

// Returns false for keys it does not know.
inline bool apply_config_entry(RunConfig& rc, const std::string& key, const std::string& value) {
    using detail_cfg::parse_bool;
    using detail_cfg::parse_double;
    using detail_cfg::parse_int;
    auto as_int = [&] { return static_cast<int>(parse_int(key, value)); };
    if (key == "d_model") rc.model.d_model = as_int();
    else if (key == "n_layers") rc.model.n_layers = as_int();
    else if (key == "n_heads") rc.model.n_heads = as_int();
    else if (key == "d_ff") rc.model.d_ff = as_int();
    else if (key == "max_seq_len") rc.model.max_seq_len = rc.train.max_seq_len = as_int();
    else if (key == "dropout_rate") rc.model.dropout_rate = parse_double(key, value);
    else if (key == "use_phone") rc.model.use_phone = parse_bool(key, value);
    else if (key == "head") rc.model.head = head_from_string(value);
    else if (key == "forward_step") rc.train.forward_step = as_int();
    else if (key == "max_sentences") rc.train.max_sentences = as_int();
    else if (key == "batch_size") rc.train.batch_size = as_int();
    else if (key == "epochs") rc.train.epochs = as_int();
    else if (key == "learning_rate") rc.train.learning_rate = parse_double(key, value);
    else if (key == "adam_beta1") rc.train.adam_beta1 = parse_double(key, value);
    else if (key == "adam_beta2") rc.train.adam_beta2 = parse_double(key, value);
    else if (key == "adam_eps") rc.train.adam_eps = parse_double(key, value);
    else if (key == "seed") rc.train.seed = static_cast<std::uint64_t>(parse_int(key, value));
    else if (key == "adaptive_window_samples")
        rc.train.adaptive_window_samples = parse_bool(key, value);
    else if (key == "backward_step") rc.train.backward_step = as_int();
    else if (key == "left_ctx") rc.train.cross_left_ctx = rc.infer.left_ctx = as_int();
    else if (key == "right_ctx") rc.train.cross_right_ctx = rc.infer.right_ctx = as_int();
    else if (key == "strategy") rc.infer.strategy = strategy_from_string(value);
    else if (key == "step") rc.infer.step = as_int();
    else if (key == "threshold") rc.infer.threshold = parse_double(key, value);
    else if (key == "window_token_budget") rc.infer.window_token_budget = as_int();
    else if (key == "max_window_sentences") rc.infer.max_window_sentences = as_int();
    else return false;
    return true;
}

inline void apply_config_file(RunConfig& rc, const std::map<std::string, std::string>& kv) {
    for (const auto& [key, value] : kv) {
        if (!apply_config_entry(rc, key, value))
            throw UsageError("unknown config key '" + key + "'");
    }
}

inline std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& rc) {
    using detail_cfg::fmt_double;
    auto b = [](bool v) { return v ? std::string("true") : std::string("false"); };
    std::vector<std::pair<std::string, std::string>> e;
    e.emplace_back("d_model", std::to_string(rc.model.d_model));
    e.emplace_back("n_layers", std::to_string(rc.model.n_layers));
    e.emplace_back("n_heads", std::to_string(rc.model.n_heads));
    e.emplace_back("d_ff", std::to_string(rc.model.d_ff));
    e.emplace_back("max_seq_len", std::to_string(rc.model.max_seq_len));
    e.emplace_back("dropout_rate", fmt_double(rc.model.dropout_rate));
    e.emplace_back("use_phone", b(rc.model.use_phone));
    e.emplace_back("head", to_string(rc.model.head));
    e.emplace_back("vocab_size", std::to_string(rc.model.vocab_size));
    e.emplace_back("phone_vocab_size", std::to_string(rc.model.phone_vocab_size));
    e.emplace_back("forward_step", std::to_string(rc.train.forward_step));
    e.emplace_back("max_sentences", std::to_string(rc.train.max_sentences));
    e.emplace_back("batch_size", std::to_string(rc.train.batch_size));
    e.emplace_back("epochs", std::to_string(rc.train.epochs));
    e.emplace_back("learning_rate", fmt_double(rc.train.learning_rate));
    e.emplace_back("adam_beta1", fmt_double(rc.train.adam_beta1));
    e.emplace_back("adam_beta2", fmt_double(rc.train.adam_beta2));
    e.emplace_back("adam_eps", fmt_double(rc.train.adam_eps));
    e.emplace_back("seed", std::to_string(rc.train.seed));
    e.emplace_back("adaptive_window_samples", b(rc.train.adaptive_window_samples));
    e.emplace_back("backward_step", std::to_string(rc.train.backward_step));
    e.emplace_back("left_ctx", std::to_string(rc.infer.left_ctx));
    e.emplace_back("right_ctx", std::to_string(rc.infer.right_ctx));
    e.emplace_back("strategy", to_string(rc.infer.strategy));
    e.emplace_back("step", std::to_string(rc.infer.step));
    e.emplace_back("threshold", fmt_double(rc.infer.threshold));
    e.emplace_back("window_token_budget", std::to_string(rc.infer.window_token_budget));
    e.emplace_back("max_window_sentences", std::to_string(rc.infer.max_window_sentences));
    return e;
}

inline std::string fingerprint_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline std::uint64_t config_fingerprint(const std::string& subcommand,
                                        std::vector<std::pair<std::string, std::string>> entries) {
    std::sort(entries.begin(), entries.end());
    std::uint64_t h = fnv1a64(subcommand);
    h = fnv1a64("\n", h);
    for (const auto& [k, v] : entries) h = fnv1a64(k + "=" + v + "\n", h);
    return h;
}

}  // namespace seqseg
