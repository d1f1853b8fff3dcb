#pragma once

// Flat `key = value` configuration documents and `K=V` command-line params,
// with typed builders for the training, attack, defence and baseline specs.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "boltzdef/attacks.hpp"
#include "boltzdef/classifiers.hpp"
#include "boltzdef/defences.hpp"
#include "boltzdef/error.hpp"
#include "boltzdef/trainer.hpp"

namespace boltzdef {

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

} // namespace detail

/// Ordered key/value pairs. Every lookup marks the key as used so that
/// `finish()` can reject keys nobody asked for.
class KeyValues {
public:
    KeyValues() = default;

    void set(const std::string& key, const std::string& value, const std::string& where = "") {
        if (key.empty()) throw ConfigError("empty key" + where);
        if (!values_.emplace(key, value).second) throw ConfigError("duplicate key '" + key + "'" + where);
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    bool empty() const { return values_.empty(); }
    const std::map<std::string, std::string>& entries() const { return values_; }

    std::optional<std::string> raw(const std::string& key) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return std::nullopt;
        used_.insert(key);
        return it->second;
    }

    std::string text(const std::string& key, const std::string& fallback) const { return raw(key).value_or(fallback); }

    double real(const std::string& key, double fallback) const {
        const auto v = raw(key);
        if (!v) return fallback;
        double out = 0.0;
        const auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
        if (ec != std::errc() || ptr != v->data() + v->size() || v->empty())
            throw ConfigError("key '" + key + "' expects a number, got '" + *v + "'");
        return out;
    }

    std::uint64_t integer(const std::string& key, std::uint64_t fallback) const {
        const auto v = raw(key);
        if (!v) return fallback;
        std::uint64_t out = 0;
        const auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
        if (ec != std::errc() || ptr != v->data() + v->size() || v->empty())
            throw ConfigError("key '" + key + "' expects a non-negative integer, got '" + *v + "'");
        return out;
    }

    std::size_t count(const std::string& key, std::size_t fallback) const {
        return static_cast<std::size_t>(integer(key, fallback));
    }

    bool flag(const std::string& key, bool fallback) const {
        const auto v = raw(key);
        if (!v) return fallback;
        if (*v == "true" || *v == "1" || *v == "yes") return true;
        if (*v == "false" || *v == "0" || *v == "no") return false;
        throw ConfigError("key '" + key + "' expects a boolean, got '" + *v + "'");
    }

    /// Comma-separated list; an absent key yields `fallback`.
    std::vector<std::string> list(const std::string& key, const std::vector<std::string>& fallback) const {
        const auto v = raw(key);
        if (!v) return fallback;
        std::vector<std::string> out;
        std::stringstream ss(*v);
        std::string item;
        while (std::getline(ss, item, ','))
            if (auto t = detail::trim(item); !t.empty()) out.push_back(t);
        return out;
    }

    /// The entries under `prefix.`, with the prefix stripped.
    KeyValues section(const std::string& prefix) const {
        KeyValues out;
        const std::string p = prefix + ".";
        for (const auto& [k, v] : values_) {
            if (k.rfind(p, 0) == 0) {
                used_.insert(k);
                out.values_.emplace(k.substr(p.size()), v);
            }
        }
        return out;
    }

    /// Throws on any key that was never looked up.
    void finish(const std::string& context) const {
        for (const auto& [k, v] : values_)
            if (!used_.count(k)) throw ConfigError("unknown " + context + " key '" + k + "'");
    }

private:
    std::map<std::string, std::string> values_;
    mutable std::set<std::string> used_;
};

/// Parses `key = value` lines. `#` starts a comment; blank lines are skipped.
inline KeyValues parse_key_values(std::istream& in, const std::string& source = "<config>") {
    KeyValues kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        const std::string where = " at " + source + ":" + std::to_string(lineno);
        if (eq == std::string::npos) throw ConfigError("expected key = value" + where);
        kv.set(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)), where);
    }
    return kv;
}

inline KeyValues parse_key_values(const std::string& text) {
    std::istringstream in(text);
    return parse_key_values(in);
}

inline KeyValues load_key_values(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path.string());
    return parse_key_values(in, path.string());
}

/// `K=V` command-line tokens.
inline KeyValues parse_params(const std::vector<std::string>& tokens) {
    KeyValues kv;
    for (const auto& t : tokens) {
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ConfigError("parameter '" + t + "' is not of the form K=V");
        kv.set(detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
    }
    return kv;
}

namespace detail {

inline void read_annealer(const KeyValues& kv, AnnealerConfig& a) {
    a.temperature = kv.real("annealer.temperature", a.temperature);
    a.param_range = kv.real("annealer.param_range", a.param_range);
    a.num_samples = kv.count("annealer.num_samples", a.num_samples);
    a.num_spin_reversals = kv.count("annealer.spin_reversals", a.num_spin_reversals);
    a.sweeps = kv.count("annealer.sweeps", a.sweeps);
    a.rungs = kv.count("annealer.rungs", a.rungs);
    a.hot_temperature = kv.real("annealer.hot_temperature", a.hot_temperature);
}

} // namespace detail

/// Training configuration. With `sampler = annealer_sim` the defaults become
/// batch_size 1000 and 100 PCD bootstrap epochs followed by 10 annealer epochs.
inline TrainConfig train_config_from(const KeyValues& kv) {
    TrainConfig cfg;
    cfg.backend.kind = parse_backend(kv.text("sampler", "pcd"));
    const bool annealer = cfg.backend.kind == BackendKind::annealer_sim;
    cfg.bootstrap_epochs = kv.count("bootstrap_epochs", annealer ? 100 : 0);
    cfg.epochs = kv.count("epochs", annealer ? cfg.bootstrap_epochs + 10 : cfg.epochs);
    cfg.hidden = kv.count("hidden", cfg.hidden);
    cfg.batch_size = kv.count("batch_size", annealer ? 1000 : cfg.batch_size);
    cfg.learning_rate = kv.real("learning_rate", cfg.learning_rate);
    cfg.backend.k = kv.count("k", cfg.backend.k);
    detail::read_annealer(kv, cfg.backend.annealer);
    cfg.bootstrap_backend.kind = parse_backend(kv.text("bootstrap_sampler", "pcd"));
    cfg.bootstrap_backend.k = kv.count("bootstrap_k", cfg.bootstrap_backend.k);
    cfg.bootstrap_batch_size = kv.count("bootstrap_batch_size", cfg.bootstrap_batch_size);
    cfg.seed = kv.integer("seed", cfg.seed);
    cfg.adam.beta1 = kv.real("adam_beta1", cfg.adam.beta1);
    cfg.adam.beta2 = kv.real("adam_beta2", cfg.adam.beta2);
    cfg.adam.eps = kv.real("adam_eps", cfg.adam.eps);
    cfg.init_std = kv.real("init_std", cfg.init_std);
    cfg.checkpoint_every = kv.count("checkpoint_every", cfg.checkpoint_every);
    kv.finish("train config");
    cfg.validate();
    return cfg;
}

inline BaselineConfig baseline_config_from(const KeyValues& kv) {
    BaselineConfig cfg;
    if (kv.has("hidden")) {
        cfg.hidden.clear();
        for (const auto& h : kv.list("hidden", {})) {
            KeyValues one;
            one.set("hidden", h);
            cfg.hidden.push_back(one.count("hidden", 0));
        }
    }
    cfg.epochs = kv.count("epochs", cfg.epochs);
    cfg.batch_size = kv.count("batch_size", cfg.batch_size);
    cfg.learning_rate = kv.real("learning_rate", cfg.learning_rate);
    cfg.seed = kv.integer("seed", cfg.seed);
    kv.finish("baseline config");
    cfg.validate();
    return cfg;
}

/// Attack parameters for one attack kind; keys belonging to another kind
/// are rejected.
inline AttackSpec attack_spec_from(AttackKind kind, const KeyValues& kv) {
    AttackSpec s;
    s.kind = kind;
    switch (kind) {
    case AttackKind::fgsm: s.fgsm.epsilon = kv.real("epsilon", s.fgsm.epsilon); break;
    case AttackKind::deepfool:
        s.deepfool.max_iter = kv.count("max_iter", s.deepfool.max_iter);
        s.deepfool.overshoot = kv.real("overshoot", s.deepfool.overshoot);
        break;
    case AttackKind::cw:
        s.cw.binary_search_steps = kv.count("binary_search_steps", s.cw.binary_search_steps);
        s.cw.max_iterations = kv.count("max_iterations", s.cw.max_iterations);
        s.cw.initial_c = kv.real("initial_c", s.cw.initial_c);
        s.cw.learning_rate = kv.real("learning_rate", s.cw.learning_rate);
        s.cw.confidence = kv.real("confidence", s.cw.confidence);
        s.cw.c_growth = kv.real("c_growth", s.cw.c_growth);
        s.cw.abort_early = kv.flag("abort_early", s.cw.abort_early);
        s.cw.box_shrink = kv.real("box_shrink", s.cw.box_shrink);
        break;
    }
    kv.finish(to_string(kind) + " attack");
    if (s.fgsm.epsilon < 0.0) throw ConfigError("epsilon must be non-negative");
    if (s.deepfool.max_iter < 1) throw ConfigError("max_iter must be at least 1");
    if (s.cw.binary_search_steps < 1 || s.cw.max_iterations < 1) throw ConfigError("cw step counts must be positive");
    if (!(s.cw.initial_c > 0.0) || !(s.cw.c_growth > 1.0)) throw ConfigError("cw needs initial_c > 0 and c_growth > 1");
    return s;
}

/// Defence parameters. Adversarial training also takes `epsilon` for its
/// FGSM crafting attack. Callers read any extra keys and then call finish().
inline DefenceSpec defence_spec_from(DefenceKind kind, const KeyValues& kv, bool seven_by_seven = true) {
    DefenceSpec s;
    s.kind = kind;
    switch (kind) {
    case DefenceKind::none: break;
    case DefenceKind::feature_squeezing:
        s.bits = static_cast<int>(kv.integer("bits", seven_by_seven ? 1 : 4));
        break;
    case DefenceKind::spatial_smoothing: s.window = static_cast<int>(kv.integer("window", 3)); break;
    case DefenceKind::adversarial_training:
        s.mix = kv.real("mix", s.mix);
        s.attack.fgsm.epsilon = kv.real("epsilon", s.attack.fgsm.epsilon);
        break;
    case DefenceKind::random_resize_pad:
        s.max_shrink = kv.count("max_shrink", s.max_shrink);
        s.seed = kv.integer("seed", s.seed);
        break;
    }
    s.validate();
    return s;
}

} // namespace boltzdef
