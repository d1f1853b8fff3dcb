// boltzdef command-line front end.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "boltzdef/bench.hpp"

namespace fs = std::filesystem;
using namespace boltzdef;

namespace {

struct PrepareArgs {
    std::string images, labels, variant = "7x7", out;
    double threshold = 0.5;
};

struct TrainArgs {
    std::string config, data, out;
};

struct EvalArgs {
    std::string model, data;
};

struct AttackArgs {
    std::string model, data, attack, out;
    std::vector<std::string> params;
};

struct DefendArgs {
    std::string data, defence, out;
    std::vector<std::string> params;
};

struct BenchArgs {
    std::string config, out;
};

fs::path dataset_in_dir(const fs::path& dir) {
    fs::create_directories(dir);
    return dir / "data.bzds";
}

int run_prepare(const PrepareArgs& a) {
    if (a.variant != "7x7" && a.variant != "28x28") throw ConfigError("variant must be 7x7 or 28x28");
    Dataset ds = load_idx(a.images, a.labels);
    if (a.variant == "7x7") ds = downscale_binarize(ds, a.threshold);
    save_dataset(ds, dataset_in_dir(a.out));
    std::cout << "prepared " << ds.size() << " images (" << ds.width() << "x" << ds.height() << ") in " << a.out
              << "\n";
    return 0;
}

/// A `classifier = baseline` config trains the MLP; anything else trains an RBM.
int run_train(const TrainArgs& a) {
    const KeyValues kv = load_key_values(a.config);
    const Dataset ds = load_dataset(dataset_file(a.data));
    const fs::path out = a.out;
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    if (kv.text("classifier", "rbm") == "baseline") {
        KeyValues rest;
        for (const auto& [k, v] : kv.entries())
            if (k != "classifier") rest.set(k, v);
        const BaselineNet net = baseline_train(baseline_config_from(rest), ds);
        save_baseline(net, out);
        std::cout << "baseline trained, train accuracy " << net.train_accuracy << "\n";
        return 0;
    }
    const TrainConfig cfg = train_config_from(kv);
    TrainOptions opts;
    opts.on_epoch = [&](const Rbm& m, const EpochRecord& r) {
        std::cout << "epoch " << r.epoch << " " << r.backend << " recon " << r.reconstruction_error;
        if (r.sampler_warnings) std::cout << " clip-warnings " << r.sampler_warnings;
        std::cout << "\n";
        if (cfg.checkpoint_every && (r.epoch + 1) % cfg.checkpoint_every == 0) {
            fs::path ck = out;
            ck += ".epoch" + std::to_string(r.epoch + 1);
            save_rbm(m, ck, {{"num_classes", ds.num_classes}, {"epoch", r.epoch + 1}});
        }
    };
    const TrainResult r = train(cfg, ds, opts);
    save_rbm(r.model, out,
             {{"num_classes", ds.num_classes}, {"config", cfg.to_json()}, {"history_digest", r.history.digest()}});
    std::cout << "rbm trained, " << r.model.num_visible() << " visible, " << r.model.num_hidden() << " hidden\n";
    return 0;
}

/// Calls `fn` with the classifier stored at `path`.
template <typename F>
void with_classifier(const fs::path& path, int num_classes, F&& fn) {
    if (detect_model_kind(path) == ModelKind::baseline) {
        fn(load_baseline(path));
        return;
    }
    const auto meta = load_model_metadata(path);
    fn(FreeEnergyClassifier(load_rbm(path), meta.value("num_classes", num_classes)));
}

int run_eval(const EvalArgs& a) {
    const Dataset ds = load_dataset(dataset_file(a.data));
    with_classifier(a.model, ds.num_classes, [&](const auto& clf) {
        std::cout << "accuracy " << accuracy(clf, ds) << " n " << ds.size() << "\n";
    });
    return 0;
}

int run_attack(const AttackArgs& a) {
    const Dataset ds = load_dataset(dataset_file(a.data));
    const KeyValues kv = parse_params(a.params);
    const AttackSpec spec = attack_spec_from(parse_attack_kind(a.attack), kv);
    const fs::path out = a.out.empty() ? fs::path(a.data).replace_filename(fs::path(a.data).filename().string() +
                                                                           "-" + a.attack)
                                       : fs::path(a.out);
    with_classifier(a.model, ds.num_classes, [&](const auto& clf) {
        std::vector<AttackResult> results;
        const Dataset adv = attack_dataset(clf, ds, spec, &results);
        save_dataset(adv, dataset_in_dir(out));
        std::size_t success = 0;
        double l2 = 0.0;
        for (const auto& r : results) {
            success += r.success ? 1 : 0;
            l2 += r.l2;
        }
        const double n = static_cast<double>(std::max<std::size_t>(results.size(), 1));
        std::cout << "success_rate " << static_cast<double>(success) / n << " l2_mean " << l2 / n << " accuracy "
                  << accuracy(clf, adv) << " written " << out.string() << "\n";
    });
    return 0;
}

int run_defend(const DefendArgs& a) {
    const Dataset ds = load_dataset(dataset_file(a.data));
    const KeyValues kv = parse_params(a.params);
    const DefenceSpec spec = defence_spec_from(parse_defence_kind(a.defence), kv, ds.width() == 7);
    const fs::path out = a.out;
    if (spec.kind == DefenceKind::adversarial_training) {
        const BaselineConfig base = baseline_config_from(kv.section("baseline"));
        kv.finish("advtrain defence");
        const auto r = adversarial_training(ds, spec.attack, base, spec.mix);
        for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
        fs::create_directories(out);
        save_dataset(ds, out / "data.bzds");
        save_baseline(r.defended, out / "model.bznt");
        std::cout << "adversarially trained net written to " << (out / "model.bznt").string()
                  << ", crafting success rate " << r.attack_success_rate << "\n";
        return 0;
    }
    kv.finish(spec.name() + " defence");
    save_dataset(apply_defence(ds, spec), dataset_in_dir(out));
    std::cout << "defended dataset written to " << out.string() << "\n";
    return 0;
}

int run_bench(const BenchArgs& a) {
    const BenchmarkConfig cfg = bench_config_from(load_key_values(a.config));
    BenchOptions opts;
    opts.log = [](const std::string& s) { std::cerr << s << "\n"; };
    BenchArtifacts art;
    const BenchmarkReport r = run_matrix(cfg, opts, &art);
    write_bench_outputs(cfg, r, a.out, &art);
    std::cout << report_markdown(r);
    for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
    if (!r.complete()) {
        std::cerr << "some cells failed\n";
        return 1;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adversarial robustness of RBM classifiers versus baseline defences"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kToolVersion));

    PrepareArgs prep;
    auto* data = app.add_subcommand("data", "Dataset utilities");
    data->require_subcommand(1);
    auto* prepare = data->add_subcommand("prepare", "Convert IDX files into a prepared dataset");
    prepare->add_option("--images", prep.images, "IDX image file")->required();
    prepare->add_option("--labels", prep.labels, "IDX label file")->required();
    prepare->add_option("--variant", prep.variant, "28x28 or 7x7")->check(CLI::IsMember({"28x28", "7x7"}));
    prepare->add_option("--threshold", prep.threshold, "binarization threshold for 7x7");
    prepare->add_option("--out", prep.out, "output directory")->required();

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train", "Train an RBM (or the baseline MLP)");
    train_cmd->add_option("--config", tr.config, "key = value config file")->required();
    train_cmd->add_option("--data", tr.data, "prepared dataset")->required();
    train_cmd->add_option("--out", tr.out, "model file")->required();

    EvalArgs ev;
    auto* eval = app.add_subcommand("eval", "Accuracy of a stored classifier");
    eval->add_option("--model", ev.model, "model file")->required();
    eval->add_option("--data", ev.data, "prepared dataset")->required();

    AttackArgs at;
    auto* attack = app.add_subcommand("attack", "Build the adversarial copy of a dataset");
    attack->add_option("--model", at.model, "model file")->required();
    attack->add_option("--data", at.data, "prepared dataset")->required();
    attack->add_option("--attack", at.attack, "fgsm, deepfool or cw")
        ->required()
        ->check(CLI::IsMember({"fgsm", "deepfool", "cw"}));
    attack->add_option("--params", at.params, "K=V attack parameters");
    attack->add_option("--out", at.out, "output directory");

    DefendArgs de;
    auto* defend = app.add_subcommand("defend", "Apply a defence");
    defend->add_option("--data", de.data, "prepared dataset")->required();
    defend->add_option("--defence", de.defence, "advtrain, squeeze, smooth or none")
        ->required()
        ->check(CLI::IsMember({"advtrain", "squeeze", "smooth", "none"}));
    defend->add_option("--params", de.params, "K=V defence parameters");
    defend->add_option("--out", de.out, "output directory")->required();

    BenchArgs be;
    auto* bench = app.add_subcommand("bench", "Run the attack x defence matrix");
    bench->add_option("--config", be.config, "bench config file")->required();
    bench->add_option("--out", be.out, "output directory")->required();

    CLI11_PARSE(app, argc, argv);
    try {
        if (prepare->parsed()) return run_prepare(prep);
        if (train_cmd->parsed()) return run_train(tr);
        if (eval->parsed()) return run_eval(ev);
        if (attack->parsed()) return run_attack(at);
        if (defend->parsed()) return run_defend(de);
        if (bench->parsed()) return run_bench(be);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
