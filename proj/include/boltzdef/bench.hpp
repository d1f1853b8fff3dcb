#pragma once

// Attack x defence benchmark: trains the defended baselines and the RBM
// classifiers, builds the 1:1 adversarial test sets, scores every cell and
// renders the accuracy matrix as CSV, JSON or markdown.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "boltzdef/attacks.hpp"
#include "boltzdef/binary_io.hpp"
#include "boltzdef/classifiers.hpp"
#include "boltzdef/config.hpp"
#include "boltzdef/data.hpp"
#include "boltzdef/defences.hpp"
#include "boltzdef/trainer.hpp"

namespace boltzdef {

inline constexpr std::string_view kToolVersion = "0.1.0";

enum class EvalMode { transfer, direct, both };

inline std::string to_string(EvalMode m) {
    switch (m) {
    case EvalMode::transfer: return "transfer";
    case EvalMode::direct: return "direct";
    case EvalMode::both: return "both";
    }
    return "unknown";
}

inline EvalMode parse_eval_mode(const std::string& s) {
    if (s == "transfer") return EvalMode::transfer;
    if (s == "direct") return EvalMode::direct;
    if (s == "both") return EvalMode::both;
    throw ConfigError("unknown evaluation mode '" + s + "'");
}

struct BenchmarkConfig {
    std::string variant = "7x7";
    double threshold = 0.5;
    std::filesystem::path idx_dir;    // raw IDX files, standard MNIST names
    std::filesystem::path train_data; // or prepared containers
    std::filesystem::path test_data;
    std::size_t n_train = 2000;
    std::size_t n_test = 500;
    std::vector<DefenceSpec> defences;
    std::vector<AttackSpec> attacks;
    BaselineConfig baseline;
    TrainConfig rbm;
    bool qrbm = true;
    TrainConfig qrbm_config; // continues from the trained classical RBM
    EvalMode mode = EvalMode::both;
    bool rebinarize = true;
    std::uint64_t seed = 1;

    bool seven() const { return variant == "7x7"; }

    void validate() const {
        if (variant != "7x7" && variant != "28x28") throw ConfigError("variant must be 7x7 or 28x28");
        if (attacks.empty()) throw ConfigError("benchmark needs at least one attack");
        if (defences.empty()) throw ConfigError("benchmark needs at least one defence");
        if (n_train == 0 || n_test == 0) throw ConfigError("subset sizes must be positive");
        for (const auto& d : defences) d.validate();
        rbm.validate();
        if (qrbm) qrbm_config.validate();
    }

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["variant"] = variant;
        j["threshold"] = threshold;
        j["idx_dir"] = idx_dir.string();
        j["train_data"] = train_data.string();
        j["test_data"] = test_data.string();
        j["n_train"] = n_train;
        j["n_test"] = n_test;
        j["mode"] = to_string(mode);
        j["rebinarize"] = rebinarize;
        j["seed"] = seed;
        for (const auto& a : attacks) {
            j["attacks"].push_back({{"kind", a.name()},
                                    {"epsilon", a.fgsm.epsilon},
                                    {"max_iter", a.deepfool.max_iter},
                                    {"overshoot", a.deepfool.overshoot},
                                    {"binary_search_steps", a.cw.binary_search_steps},
                                    {"max_iterations", a.cw.max_iterations},
                                    {"initial_c", a.cw.initial_c},
                                    {"cw_learning_rate", a.cw.learning_rate},
                                    {"confidence", a.cw.confidence},
                                    {"c_growth", a.cw.c_growth}});
        }
        for (const auto& d : defences) {
            j["defences"].push_back({{"kind", d.name()},
                                     {"bits", d.bits},
                                     {"window", d.window},
                                     {"mix", d.mix},
                                     {"epsilon", d.attack.fgsm.epsilon}});
        }
        j["baseline"] = {{"hidden", baseline.hidden},
                         {"epochs", baseline.epochs},
                         {"batch_size", baseline.batch_size},
                         {"learning_rate", baseline.learning_rate},
                         {"seed", baseline.seed}};
        j["rbm"] = rbm.to_json();
        j["qrbm"] = qrbm ? qrbm_config.to_json() : nlohmann::json(nullptr);
        return j;
    }

    std::string digest() const {
        std::ostringstream hex;
        hex << std::hex << std::setw(16) << std::setfill('0') << io::fnv1a(to_json().dump());
        return hex.str();
    }
};

/// Defaults of the desk-scale matrix: three attacks, three baseline
/// defences plus the RBM, a 100-epoch PCD RBM and a 10-epoch annealer-sim
/// continuation at batch 1000.
inline BenchmarkConfig default_bench_config() {
    BenchmarkConfig cfg;
    for (AttackKind k : {AttackKind::fgsm, AttackKind::deepfool, AttackKind::cw}) {
        AttackSpec a;
        a.kind = k;
        cfg.attacks.push_back(a);
    }
    for (DefenceKind k : {DefenceKind::adversarial_training, DefenceKind::feature_squeezing,
                          DefenceKind::spatial_smoothing, DefenceKind::none}) {
        DefenceSpec d;
        d.kind = k;
        cfg.defences.push_back(d);
    }
    cfg.qrbm_config.backend.kind = BackendKind::annealer_sim;
    cfg.qrbm_config.epochs = 10;
    cfg.qrbm_config.batch_size = 1000;
    cfg.qrbm_config.seed = 2;
    return cfg;
}

/// Bench config document. Sections: `rbm.*` and `qrbm.*` take train-config
/// keys, `baseline.*` baseline keys, `<attack>.*` attack params and
/// `<defence>.*` defence params.
inline BenchmarkConfig bench_config_from(const KeyValues& kv) {
    BenchmarkConfig cfg = default_bench_config();
    cfg.variant = kv.text("variant", cfg.variant);
    cfg.threshold = kv.real("threshold", cfg.threshold);
    cfg.idx_dir = kv.text("idx_dir", "");
    cfg.train_data = kv.text("train_data", "");
    cfg.test_data = kv.text("test_data", "");
    cfg.n_train = kv.count("n_train", cfg.n_train);
    cfg.n_test = kv.count("n_test", cfg.n_test);
    cfg.mode = parse_eval_mode(kv.text("mode", "both"));
    cfg.rebinarize = kv.flag("rebinarize", cfg.variant == "7x7");
    cfg.seed = kv.integer("seed", cfg.seed);
    cfg.qrbm = kv.flag("qrbm", cfg.qrbm);

    cfg.attacks.clear();
    for (const auto& name : kv.list("attacks", {"fgsm", "deepfool", "cw"})) {
        const AttackKind k = parse_attack_kind(name);
        cfg.attacks.push_back(attack_spec_from(k, kv.section(name)));
    }
    cfg.defences.clear();
    for (const auto& name : kv.list("defences", {"advtrain", "squeeze", "smooth", "rbm"})) {
        const DefenceKind k = parse_defence_kind(name);
        const KeyValues sec = kv.section(to_string(k));
        cfg.defences.push_back(defence_spec_from(k, sec, cfg.variant == "7x7"));
        sec.finish(to_string(k) + " defence");
    }
    cfg.baseline = baseline_config_from(kv.section("baseline"));

    KeyValues rbm = kv.section("rbm");
    if (!rbm.has("seed")) rbm.set("seed", std::to_string(cfg.seed));
    cfg.rbm = train_config_from(rbm);

    KeyValues q = kv.section("qrbm");
    if (!q.has("sampler")) q.set("sampler", "annealer_sim");
    if (!q.has("bootstrap_epochs")) q.set("bootstrap_epochs", "0");
    if (!q.has("epochs")) q.set("epochs", "10");
    if (!q.has("seed")) q.set("seed", std::to_string(cfg.seed + 1));
    if (!q.has("hidden")) q.set("hidden", std::to_string(cfg.rbm.hidden));
    cfg.qrbm_config = train_config_from(q);
    kv.finish("bench config");
    cfg.validate();
    return cfg;
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct BenchCell {
    std::string attack;  // attack name, or "clean"
    std::string defence; // advtrain | squeeze | smooth | baseline | rbm | qrbm
    double accuracy = std::numeric_limits<double>::quiet_NaN();
    std::size_t n = 0;
    double success_rate = std::numeric_limits<double>::quiet_NaN();
    double l2_mean = std::numeric_limits<double>::quiet_NaN();
    double linf_mean = std::numeric_limits<double>::quiet_NaN();
    std::string mode; // direct | transfer, with a _bin suffix when re-binarized
    std::string error; // nonempty marks a failed cell

    bool failed() const { return !error.empty(); }
    friend bool operator==(const BenchCell&, const BenchCell&) = default;
};

struct BenchmarkReport {
    std::vector<BenchCell> cells;
    std::string config_digest;
    std::vector<std::string> warnings;

    bool complete() const {
        for (const auto& c : cells)
            if (c.failed()) return false;
        return true;
    }

    /// First cell matching the triple, if any.
    const BenchCell* find(const std::string& attack, const std::string& defence, const std::string& mode) const {
        for (const auto& c : cells)
            if (c.attack == attack && c.defence == defence && c.mode == mode) return &c;
        return nullptr;
    }
};

inline constexpr std::string_view kCsvHeader = "attack,defence,accuracy,n,success_rate,l2_mean,linf_mean,mode";

namespace detail {

inline std::string format_real(double v) {
    if (std::isnan(v)) return "nan";
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

inline double parse_real(const std::string& s) {
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
        throw FormatError("bad number '" + s + "' in report");
    return v;
}

inline nlohmann::json real_json(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }

inline double json_real(const nlohmann::json& j) {
    return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

} // namespace detail

inline std::string report_csv(const BenchmarkReport& r) {
    std::ostringstream os;
    os << kCsvHeader << '\n';
    for (const auto& c : r.cells) {
        os << c.attack << ',' << c.defence << ',' << detail::format_real(c.accuracy) << ',' << c.n << ','
           << detail::format_real(c.success_rate) << ',' << detail::format_real(c.l2_mean) << ','
           << detail::format_real(c.linf_mean) << ',' << c.mode << '\n';
    }
    return os.str();
}

inline BenchmarkReport report_from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kCsvHeader) throw FormatError("report CSV has an unexpected header");
    BenchmarkReport r;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string item;
        while (std::getline(ss, item, ',')) f.push_back(item);
        if (f.size() != 8) throw FormatError("report CSV row has " + std::to_string(f.size()) + " fields");
        BenchCell c;
        c.attack = f[0];
        c.defence = f[1];
        c.accuracy = detail::parse_real(f[2]);
        c.n = static_cast<std::size_t>(std::stoull(f[3]));
        c.success_rate = detail::parse_real(f[4]);
        c.l2_mean = detail::parse_real(f[5]);
        c.linf_mean = detail::parse_real(f[6]);
        c.mode = f[7];
        if (std::isnan(c.accuracy)) c.error = "failed";
        r.cells.push_back(std::move(c));
    }
    return r;
}

inline nlohmann::json report_json(const BenchmarkReport& r) {
    nlohmann::json j;
    j["config_digest"] = r.config_digest;
    j["warnings"] = r.warnings;
    j["cells"] = nlohmann::json::array();
    for (const auto& c : r.cells) {
        nlohmann::json cell = {{"attack", c.attack},
                               {"defence", c.defence},
                               {"accuracy", detail::real_json(c.accuracy)},
                               {"n", c.n},
                               {"success_rate", detail::real_json(c.success_rate)},
                               {"l2_mean", detail::real_json(c.l2_mean)},
                               {"linf_mean", detail::real_json(c.linf_mean)},
                               {"mode", c.mode}};
        if (c.failed()) cell["error"] = c.error;
        j["cells"].push_back(std::move(cell));
    }
    return j;
}

inline BenchmarkReport report_from_json(const nlohmann::json& j) {
    BenchmarkReport r;
    try {
        r.config_digest = j.value("config_digest", "");
        if (j.contains("warnings")) r.warnings = j.at("warnings").get<std::vector<std::string>>();
        for (const auto& cell : j.at("cells")) {
            BenchCell c;
            c.attack = cell.at("attack").get<std::string>();
            c.defence = cell.at("defence").get<std::string>();
            c.accuracy = detail::json_real(cell.at("accuracy"));
            c.n = cell.at("n").get<std::size_t>();
            c.success_rate = detail::json_real(cell.at("success_rate"));
            c.l2_mean = detail::json_real(cell.at("l2_mean"));
            c.linf_mean = detail::json_real(cell.at("linf_mean"));
            c.mode = cell.at("mode").get<std::string>();
            c.error = cell.value("error", std::isnan(c.accuracy) ? std::string("failed") : std::string());
            r.cells.push_back(std::move(c));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed report JSON: ") + e.what());
    }
    return r;
}

/// Attack rows by defence columns. Baseline columns use direct cells and
/// the RBM columns use `rbm_mode`.
inline std::string report_markdown(const BenchmarkReport& r, const std::string& rbm_mode = "transfer",
                                   const std::string& suffix = "") {
    std::vector<std::string> attacks, defences;
    auto add = [](std::vector<std::string>& v, const std::string& s) {
        if (std::find(v.begin(), v.end(), s) == v.end()) v.push_back(s);
    };
    for (const auto& c : r.cells) {
        add(attacks, c.attack);
        add(defences, c.defence);
    }
    auto lookup = [&](const std::string& a, const std::string& d) -> std::string {
        const bool rbm = d == "rbm" || d == "qrbm";
        const std::string mode = a == "clean" ? "clean" : (rbm ? rbm_mode : "direct") + suffix;
        const BenchCell* c = r.find(a, d, mode);
        if (!c) return "-";
        if (c->failed()) return "failed";
        std::ostringstream os;
        os << std::fixed << std::setprecision(2) << 100.0 * c->accuracy << '%';
        return os.str();
    };
    std::ostringstream os;
    os << "| Attack |";
    for (const auto& d : defences) os << ' ' << d << " |";
    os << "\n|---|";
    for (std::size_t i = 0; i < defences.size(); ++i) os << "---|";
    os << '\n';
    for (const auto& a : attacks) {
        os << "| " << a << " |";
        for (const auto& d : defences) os << ' ' << lookup(a, d) << " |";
        os << '\n';
    }
    return os.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

enum class ReportFormat { csv, json, markdown };

inline void emit_report(const BenchmarkReport& r, ReportFormat format, const std::filesystem::path& path) {
    switch (format) {
    case ReportFormat::csv: write_text(path, report_csv(r)); return;
    case ReportFormat::json: write_text(path, report_json(r).dump(2) + "\n"); return;
    case ReportFormat::markdown: {
        std::string md = "## Accuracy, RBM transfer mode\n\n" + report_markdown(r, "transfer") +
                         "\n## Accuracy, RBM direct mode\n\n" + report_markdown(r, "direct");
        bool has_bin = false;
        for (const auto& c : r.cells) has_bin = has_bin || c.mode.ends_with("_bin");
        if (has_bin)
            md += "\n## Accuracy on re-binarized adversarials, RBM transfer mode\n\n" +
                  report_markdown(r, "transfer", "_bin");
        write_text(path, md);
        return;
    }
    }
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

struct BenchData {
    Dataset train;
    Dataset test;
};

inline BenchData load_bench_data(const BenchmarkConfig& cfg) {
    BenchData d;
    if (!cfg.idx_dir.empty()) {
        d.train = load_idx(cfg.idx_dir / "train-images-idx3-ubyte", cfg.idx_dir / "train-labels-idx1-ubyte");
        d.test = load_idx(cfg.idx_dir / "test-images-idx3-ubyte", cfg.idx_dir / "test-labels-idx1-ubyte");
        if (cfg.seven()) {
            d.train = downscale_binarize(d.train, cfg.threshold);
            d.test = downscale_binarize(d.test, cfg.threshold);
        }
    } else if (!cfg.train_data.empty() && !cfg.test_data.empty()) {
        d.train = load_dataset(dataset_file(cfg.train_data));
        d.test = load_dataset(dataset_file(cfg.test_data));
    } else {
        throw ConfigError("bench needs idx_dir or both train_data and test_data");
    }
    if (cfg.n_train > d.train.size() || cfg.n_test > d.test.size())
        throw ConfigError("subset sizes exceed the dataset (" + std::to_string(d.train.size()) + " train, " +
                          std::to_string(d.test.size()) + " test)");
    d.train = d.train.head(cfg.n_train);
    d.test = d.test.head(cfg.n_test);
    return d;
}

/// Images pushed back onto {0, 1} by rounding at one half.
inline Dataset rebinarized(const Dataset& ds) {
    Dataset out = ds;
    for (auto& img : out.images) img = feature_squeeze(img, 1);
    return out;
}

/// Scores `clf` on `adv`, the attacked copy of `reference`.
template <DifferentiableClassifier C>
BenchCell score_cell(const C& clf, const Dataset& reference, const Dataset& adv, std::string attack,
                     std::string defence, std::string mode) {
    BenchCell c;
    c.attack = std::move(attack);
    c.defence = std::move(defence);
    c.mode = std::move(mode);
    c.n = adv.size();
    std::size_t correct = 0;
    double l2 = 0.0, linf = 0.0;
    for (std::size_t i = 0; i < adv.size(); ++i) {
        correct += predict(clf, adv.images[i]) == adv.labels[i] ? 1 : 0;
        const Eigen::VectorXd d = adv.images[i].pixels - reference.images[i].pixels;
        l2 += d.norm();
        linf += d.size() ? d.cwiseAbs().maxCoeff() : 0.0;
    }
    const double n = static_cast<double>(std::max<std::size_t>(adv.size(), 1));
    c.accuracy = static_cast<double>(correct) / n;
    c.success_rate = 1.0 - c.accuracy;
    c.l2_mean = l2 / n;
    c.linf_mean = linf / n;
    return c;
}

struct BenchOptions {
    std::function<void(const std::string&)> log;
    /// Training hooks: trained models are reported here (e.g. for saving).
    std::function<void(const std::string&, const BaselineNet&)> on_baseline;
    std::function<void(const std::string&, const Rbm&)> on_rbm;
};

struct BenchArtifacts {
    std::optional<BaselineNet> source; // undefended net that crafts transfer attacks
    std::map<std::string, BaselineNet> baselines;
    std::map<std::string, Rbm> rbms;
    std::map<std::string, double> seconds; // wall time per stage
};

/// Runs every configured cell. Stage failures mark the affected cells as
/// failed instead of aborting the matrix.
inline BenchmarkReport run_matrix(const BenchmarkConfig& cfg, const BenchOptions& opts = {},
                                  BenchArtifacts* artifacts_out = nullptr) {
    cfg.validate();
    auto log = [&](const std::string& s) {
        if (opts.log) opts.log(s);
    };
    BenchArtifacts local;
    BenchArtifacts& art = artifacts_out ? *artifacts_out : local;
    BenchmarkReport report;
    report.config_digest = cfg.digest();

    using clock = std::chrono::steady_clock;
    auto seconds_since = [](clock::time_point t0) {
        return std::chrono::duration<double>(clock::now() - t0).count();
    };

    const BenchData data = load_bench_data(cfg);
    const bool bin = cfg.rebinarize;

    auto failed_cells = [&](const std::string& defence, const std::vector<std::string>& modes, const std::string& why) {
        BenchCell c;
        c.defence = defence;
        c.n = data.test.size();
        c.error = why;
        c.attack = "clean";
        c.mode = "clean";
        report.cells.push_back(c);
        for (const auto& a : cfg.attacks) {
            for (const auto& m : modes) {
                c.attack = a.name();
                c.mode = m;
                report.cells.push_back(c);
                if (bin) {
                    c.mode = m + "_bin";
                    report.cells.push_back(c);
                }
            }
        }
    };

    // Undefended source net and its adversarial test sets for transfer mode.
    std::map<std::string, Dataset> transfer_sets;
    const bool want_transfer = cfg.mode != EvalMode::direct;
    try {
        auto t0 = clock::now();
        art.source = baseline_train(cfg.baseline, data.train);
        art.seconds["source"] = seconds_since(t0);
        log("source net trained, clean accuracy " + std::to_string(accuracy(*art.source, data.test)));
        if (want_transfer) {
            for (const auto& a : cfg.attacks) {
                t0 = clock::now();
                transfer_sets[a.name()] = attack_dataset(*art.source, data.test, a);
                art.seconds["transfer_" + a.name()] = seconds_since(t0);
            }
        }
    } catch (const std::exception& e) {
        report.warnings.push_back(std::string("source net stage failed: ") + e.what());
    }

    // Baseline defences, each attacked directly on its defended test set.
    for (const auto& d : cfg.defences) {
        if (d.kind == DefenceKind::none) continue;
        const std::string name = d.name();
        try {
            auto t0 = clock::now();
            const Dataset train_d = apply_defence(data.train, d);
            const Dataset test_d = apply_defence(data.test, d);
            BaselineNet net = [&] {
                if (d.kind != DefenceKind::adversarial_training) return baseline_train(cfg.baseline, train_d);
                auto r = adversarial_training(train_d, d.attack, cfg.baseline, d.mix);
                for (const auto& w : r.warnings) report.warnings.push_back(name + ": " + w);
                return r.defended;
            }();
            art.seconds["train_" + name] = seconds_since(t0);
            if (opts.on_baseline) opts.on_baseline(name, net);
            report.cells.push_back(score_cell(net, test_d, test_d, "clean", name, "clean"));
            log(name + " clean accuracy " + std::to_string(report.cells.back().accuracy));
            for (const auto& a : cfg.attacks) {
                t0 = clock::now();
                const Dataset adv = attack_dataset(net, test_d, a);
                report.cells.push_back(score_cell(net, test_d, adv, a.name(), name, "direct"));
                log(name + " / " + a.name() + " direct accuracy " + std::to_string(report.cells.back().accuracy));
                if (bin) report.cells.push_back(score_cell(net, test_d, rebinarized(adv), a.name(), name, "direct_bin"));
                art.seconds[name + "_" + a.name()] = seconds_since(t0);
            }
            art.baselines.emplace(name, std::move(net));
        } catch (const std::exception& e) {
            failed_cells(name, {"direct"}, e.what());
        }
    }

    // RBM defences: the classical one and its annealer-sim continuation.
    const bool has_rbm = std::any_of(cfg.defences.begin(), cfg.defences.end(),
                                     [](const DefenceSpec& d) { return d.kind == DefenceKind::none; });
    std::vector<std::string> rbm_modes;
    if (cfg.mode != EvalMode::direct) rbm_modes.push_back("transfer");
    if (cfg.mode != EvalMode::transfer) rbm_modes.push_back("direct");

    auto evaluate_rbm = [&](const std::string& name, const Rbm& model) {
        const FreeEnergyClassifier clf(model, data.test.num_classes);
        report.cells.push_back(score_cell(clf, data.test, data.test, "clean", name, "clean"));
        log(name + " clean accuracy " + std::to_string(report.cells.back().accuracy));
        for (const auto& a : cfg.attacks) {
            for (const auto& mode : rbm_modes) {
                const auto t0 = clock::now();
                Dataset adv;
                if (mode == "transfer") {
                    const auto it = transfer_sets.find(a.name());
                    if (it == transfer_sets.end()) throw Error("no transfer set for " + a.name());
                    adv = it->second;
                } else {
                    adv = attack_dataset(clf, data.test, a);
                }
                report.cells.push_back(score_cell(clf, data.test, adv, a.name(), name, mode));
                log(name + " / " + a.name() + " " + mode + " accuracy " + std::to_string(report.cells.back().accuracy));
                if (bin) report.cells.push_back(score_cell(clf, data.test, rebinarized(adv), a.name(), name, mode + "_bin"));
                art.seconds[name + "_" + a.name() + "_" + mode] = seconds_since(t0);
            }
        }
    };

    if (has_rbm) {
        std::optional<Rbm> classical;
        try {
            const auto t0 = clock::now();
            classical = train(cfg.rbm, data.train).model;
            art.seconds["train_rbm"] = seconds_since(t0);
            if (opts.on_rbm) opts.on_rbm("rbm", *classical);
            evaluate_rbm("rbm", *classical);
            art.rbms.emplace("rbm", *classical);
        } catch (const std::exception& e) {
            failed_cells("rbm", rbm_modes, e.what());
        }
        if (cfg.qrbm) {
            try {
                if (!classical) throw Error("classical RBM unavailable for bootstrapping");
                const auto t0 = clock::now();
                TrainOptions topts;
                topts.initial = *classical;
                const auto q = train(cfg.qrbm_config, data.train, topts);
                std::size_t warned = 0;
                for (const auto& e : q.history.epochs) warned += e.sampler_warnings;
                if (warned > 0)
                    report.warnings.push_back("qrbm: " + std::to_string(warned) +
                                              " annealer batches clipped more than half of the parameters");
                art.seconds["train_qrbm"] = seconds_since(t0);
                if (opts.on_rbm) opts.on_rbm("qrbm", q.model);
                evaluate_rbm("qrbm", q.model);
                art.rbms.emplace("qrbm", q.model);
            } catch (const std::exception& e) {
                failed_cells("qrbm", rbm_modes, e.what());
            }
        }
    }
    return report;
}

/// Writes report.{csv,json,md} and manifest.json into `dir`.
inline void write_bench_outputs(const BenchmarkConfig& cfg, const BenchmarkReport& r, const std::filesystem::path& dir,
                                const BenchArtifacts* art = nullptr) {
    std::filesystem::create_directories(dir);
    emit_report(r, ReportFormat::csv, dir / "report.csv");
    emit_report(r, ReportFormat::json, dir / "report.json");
    emit_report(r, ReportFormat::markdown, dir / "report.md");
    nlohmann::json m;
    m["tool"] = "boltzdef";
    m["version"] = std::string(kToolVersion);
    m["config_digest"] = cfg.digest();
    m["config"] = cfg.to_json();
    m["complete"] = r.complete();
    m["cells"] = r.cells.size();
    m["files"] = {"report.csv", "report.json", "report.md"};
    m["warnings"] = r.warnings;
    if (art) m["stage_seconds"] = art->seconds;
    write_text(dir / "manifest.json", m.dump(2) + "\n");
}

} // namespace boltzdef
