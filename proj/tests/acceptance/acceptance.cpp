// Acceptance run: one PASS/FAIL/SKIPPED line per criterion. Exit status is
// nonzero when any criterion fails.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "boltzdef/bench.hpp"
#include "boltzdef/samplers.hpp"
#include "oracles.hpp"

using namespace boltzdef;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
    bool skipped = false;
};

std::string fmt(double v, int precision = 4) {
    std::ostringstream os;
    os << std::setprecision(precision) << v;
    return os.str();
}

std::string pct(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(1) << 100.0 * v;
    return os.str();
}

Eigen::VectorXd binary(std::uint64_t mask, std::size_t n) { return oracle::to_eigen(oracle::bits(mask, n)); }

template <typename R>
Rbm random_shape_rbm(std::size_t max_v, std::size_t max_h, R& rng) {
    std::uniform_int_distribution<std::size_t> v(1, max_v), h(1, max_h);
    const std::size_t nv = v(rng), nh = h(rng);
    return oracle::random_rbm(nv, nh, rng);
}

Rbm model_4x2() {
    Rbm m(4, 2);
    m.weights << 0.9, -0.6, -0.4, 0.8, 0.5, 0.3, -0.7, -0.2;
    m.visible_bias << -0.3, 0.2, 0.1, -0.1;
    m.hidden_bias << 0.25, -0.4;
    return m;
}

double moment_mae(const Moments& est, const oracle::JointMoments& exact) {
    double e = 0.0;
    for (Eigen::Index i = 0; i < est.v.size(); ++i) e += std::abs(est.v[i] - exact.v[std::size_t(i)]);
    for (Eigen::Index j = 0; j < est.h.size(); ++j) e += std::abs(est.h[j] - exact.h[std::size_t(j)]);
    for (Eigen::Index i = 0; i < est.vh.rows(); ++i)
        for (Eigen::Index j = 0; j < est.vh.cols(); ++j)
            e += std::abs(est.vh(i, j) - exact.vh[std::size_t(i)][std::size_t(j)]);
    return e / double(est.v.size() + est.h.size() + est.vh.size());
}

// 1. e^{-F(x)} against the explicit hidden sum, 100 models, every input.
Outcome free_energy_identity() {
    std::mt19937_64 rng(101);
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
        const Rbm m = random_shape_rbm(8, 10, rng);
        const auto p = oracle::plain(m);
        for (std::uint64_t c = 0; c < (std::uint64_t{1} << m.num_visible()); ++c) {
            const double lhs = std::exp(-free_energy(m, binary(c, m.num_visible())));
            const double rhs = oracle::hidden_sum(p, oracle::bits(c, m.num_visible()));
            worst = std::max(worst, std::abs(lhs - rhs) / lhs);
        }
    }
    return {worst < 1e-10, "max relative error " + fmt(worst)};
}

// 2. Exact-moment gradient against central differences of the NLL.
Outcome gradient_exactness() {
    std::mt19937_64 rng(102);
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
        const Rbm m = [&] {
            Rbm r = random_shape_rbm(6, 4, rng);
            r.weights *= 0.5;
            return r;
        }();
        const std::size_t nv = m.num_visible(), nh = m.num_hidden();
        Eigen::MatrixXd data(8, static_cast<Eigen::Index>(nv));
        for (int r = 0; r < 8; ++r) data.row(r) = binary(rng() % (std::uint64_t{1} << nv), nv).transpose();
        const auto g = loss_gradient(m, GradientEstimate{data_moments(m, data), exact_model_moments(m)});
        const Eigen::VectorXd analytic = flatten(g);
        const Eigen::VectorXd base = flatten(RbmGradient{m.weights, m.visible_bias, m.hidden_bias});
        const auto loss = [&](const Eigen::VectorXd& p) {
            Rbm q(nv, nh);
            apply_delta(q, p);
            return nll_loss(q, data, partition_function(q));
        };
        const Eigen::VectorXd fd = oracle::finite_difference(loss, base, 1e-5);
        worst = std::max(worst, oracle::max_relative_error(analytic, fd, 1e-3));
    }
    return {worst < 1e-5, "max per-coordinate relative error " + fmt(worst)};
}

// 3. Sum over visibles of e^{-F} against the full double sum.
Outcome partition_cross_check() {
    std::mt19937_64 rng(103);
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
        const Rbm m = random_shape_rbm(8, 10, rng);
        double z = 0.0;
        for (std::uint64_t c = 0; c < (std::uint64_t{1} << m.num_visible()); ++c)
            z += std::exp(-free_energy(m, binary(c, m.num_visible())));
        const double full = oracle::partition(oracle::plain(m));
        worst = std::max(worst, std::abs(z - full) / full);
        worst = std::max(worst, std::abs(partition_function(m) - full) / full);
    }
    return {worst < 1e-10, "max relative error " + fmt(worst)};
}

// 4. CD-k and annealer-sim moments at 1e5 samples on the fixed 4x2 model.
Outcome sampler_convergence() {
    const Rbm m = model_4x2();
    const auto exact = oracle::joint_moments(oracle::plain(m));
    Rng rng(104);
    const Eigen::MatrixXd batch = Eigen::MatrixXd::Zero(100000, 4);
    const double cd = moment_mae(cd_k(m, batch, 50, rng).negative, exact);
    AnnealerConfig cfg;
    cfg.num_samples = 100000;
    const auto ar = annealer_sample(m, cfg, rng);
    const double an = moment_mae(ar.moments, exact);
    return {cd < 0.01 && an < 0.01 && ar.faithful(), "MAE cd-50 " + fmt(cd) + ", annealer-sim " + fmt(an)};
}

// 5. Gauge invariance, exact and sampled.
Outcome gauge_invariance() {
    std::mt19937_64 g(105);
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
        const IsingModel im = to_ising(oracle::random_rbm(5, 5, g));
        std::vector<int> mask(10);
        for (auto& b : mask) b = int(g() & 1U);
        const IsingModel gauged = spin_reversal_transform(im, mask);
        const auto p = oracle::spin_distribution(10, [&](const Eigen::VectorXd& s) { return im.energy(s); });
        const auto q = oracle::spin_distribution(10, [&](const Eigen::VectorXd& s) { return gauged.energy(s); });
        for (std::uint64_t c = 0; c < 1024; ++c) {
            std::uint64_t pulled = c;
            for (std::size_t i = 0; i < 10; ++i)
                if (mask[i]) pulled ^= std::uint64_t{1} << i;
            worst = std::max(worst, std::abs(q[pulled] - p[c]));
        }
    }
    // Two-sample z tests on all six bit means; Bonferroni keeps the
    // family-wise level at 0.01.
    const Rbm m = model_4x2();
    Rng rng(205);
    AnnealerConfig one, five;
    one.num_spin_reversals = 1;
    one.num_samples = five.num_samples = 20000;
    const auto a = annealer_sample(m, one, rng);
    const auto b = annealer_sample(m, five, rng);
    const double crit = 3.0902; // two-sided 0.01 / 6
    double zmax = 0.0;
    auto z = [&](double pa, double pb) {
        const double pooled = (pa + pb) / 2.0;
        return std::abs(pa - pb) / std::sqrt(std::max(pooled * (1 - pooled), 1e-12) * (2.0 / 20000.0));
    };
    for (int i = 0; i < 4; ++i) zmax = std::max(zmax, z(a.moments.v[i], b.moments.v[i]));
    for (int j = 0; j < 2; ++j) zmax = std::max(zmax, z(a.moments.h[j], b.moments.h[j]));
    return {worst < 1e-12 && zmax < crit,
            "pulled-back max error " + fmt(worst) + ", max |z| " + fmt(zmax) + " < " + fmt(crit)};
}

// 6. Energy gaps and round trip through the Ising form.
Outcome ising_mapping() {
    std::mt19937_64 g(106);
    double gap = 0.0, trip = 0.0;
    for (int t = 0; t < 20; ++t) {
        const Rbm m = random_shape_rbm(5, 5, g);
        const IsingModel im = to_ising(m);
        const std::size_t nv = m.num_visible(), nh = m.num_hidden();
        const auto state = [&](std::uint64_t c) {
            return std::pair{binary(c & ((std::uint64_t{1} << nv) - 1), nv), binary(c >> nv, nh)};
        };
        const auto [x0, h0] = state(0);
        Eigen::VectorXd s0(nv + nh);
        s0 << binary_to_spin(x0), binary_to_spin(h0);
        const double e0 = energy(m, x0, h0), i0 = im.energy(s0);
        for (std::uint64_t c = 1; c < (std::uint64_t{1} << (nv + nh)); ++c) {
            const auto [x, h] = state(c);
            Eigen::VectorXd s(nv + nh);
            s << binary_to_spin(x), binary_to_spin(h);
            gap = std::max(gap, std::abs((energy(m, x, h) - e0) - (im.energy(s) - i0)));
        }
        const Rbm back = from_ising(im);
        trip = std::max({trip, (back.weights - m.weights).cwiseAbs().maxCoeff(),
                         (back.visible_bias - m.visible_bias).cwiseAbs().maxCoeff(),
                         (back.hidden_bias - m.hidden_bias).cwiseAbs().maxCoeff()});
    }
    return {gap < 1e-10 && trip < 1e-12, "max gap error " + fmt(gap) + ", round trip " + fmt(trip)};
}

// 7. Attack validity on affine models and on a trained net.
Outcome attack_validity(const Dataset& train, const Dataset& test) {
    std::mt19937_64 g(107);
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.2, 0.8);
    double df_err = 0.0, cw_err = 0.0, fgsm_excess = 0.0;
    bool box = true;
    auto in_box = [](const AttackResult& r) {
        return r.adversarial.pixels.minCoeff() >= 0.0 && r.adversarial.pixels.maxCoeff() <= 1.0;
    };
    int cw_cases = 0;
    for (int t = 0; t < 20; ++t) {
        oracle::Affine clf{Eigen::VectorXd(6), 0.0};
        for (auto& v : clf.w) v = n(g);
        Image x(6, 1);
        x.pixels.setConstant(0.5);
        clf.b = -clf.w.dot(x.pixels) + 0.1 * n(g);
        const int label = predict(clf, x);
        const auto r = deepfool(clf, x, label, DeepFoolParams{50, 0.0});
        df_err = std::max(df_err, std::abs(r.l2 - clf.boundary_distance(x.pixels)));
        box = box && in_box(r);
    }
    while (cw_cases < 20) {
        oracle::Affine clf{Eigen::Vector2d(3.0 * n(g), 3.0 * n(g)), 0.0};
        Image x(2, 1);
        x.pixels << u(g), u(g);
        const double d = 0.05 + 0.1 * std::abs(n(g));
        clf.b = -clf.w.dot(x.pixels) + d * clf.w.norm() * (g() & 1U ? 1.0 : -1.0);
        const Eigen::VectorXd foot = x.pixels - clf.f(x.pixels) / clf.w.squaredNorm() * clf.w;
        if (foot.minCoeff() < 0.01 || foot.maxCoeff() > 0.99) continue; // box-constrained optimum differs
        ++cw_cases;
        const auto r = carlini_wagner_l2(clf, x, predict(clf, x));
        const double analytic = clf.boundary_distance(x.pixels);
        cw_err = std::max(cw_err, r.success ? std::abs(r.l2 - analytic) / analytic : 1.0);
        box = box && in_box(r);
    }
    const BaselineNet net = baseline_train(BaselineConfig{}, train);
    const Dataset sub = test.head(200);
    for (AttackKind kind : {AttackKind::fgsm, AttackKind::deepfool, AttackKind::cw}) {
        AttackSpec spec;
        spec.kind = kind;
        std::vector<AttackResult> results;
        attack_dataset(net, sub, spec, &results);
        for (const auto& r : results) {
            box = box && in_box(r);
            if (kind == AttackKind::fgsm) fgsm_excess = std::max(fgsm_excess, r.linf - spec.fgsm.epsilon);
        }
    }
    // L-inf is measured as max|(x + eps) - x|, which can exceed eps by one ulp.
    return {box && fgsm_excess <= 1e-15 && df_err < 1e-8 && cw_err < 0.05,
            std::string("box ") + (box ? "ok" : "violated") + ", fgsm linf-eps " + fmt(fgsm_excess) +
                ", deepfool abs error " + fmt(df_err) + ", cw relative error " + fmt(cw_err)};
}

// 8. Defence algebra.
Outcome defence_algebra(const Dataset& train, const Dataset& test) {
    std::mt19937_64 g(108);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    bool squeeze_ok = true, smooth_ok = true;
    for (int t = 0; t < 200; ++t) {
        Image x(7, 7);
        for (auto& p : x.pixels) p = u(g);
        for (int bits = 1; bits <= 8; ++bits) {
            const Image s = feature_squeeze(x, bits);
            squeeze_ok = squeeze_ok && feature_squeeze(s, bits) == s;
        }
        smooth_ok = smooth_ok && spatial_smooth(x, 1) == x;
    }
    BaselineConfig cfg;
    cfg.epochs = 5;
    const Dataset small = train.head(500);
    AttackSpec fg;
    const auto adv = adversarial_training(small, fg, cfg, 0.0);
    const BaselineNet plain = baseline_train(cfg, small);
    bool same = adv.defended.layers().size() == plain.layers().size();
    for (std::size_t l = 0; same && l < plain.layers().size(); ++l)
        same = adv.defended.layers()[l].weights == plain.layers()[l].weights &&
               adv.defended.layers()[l].bias == plain.layers()[l].bias;
    same = same && accuracy(adv.defended, test) == accuracy(plain, test);
    return {squeeze_ok && smooth_ok && same, std::string("squeeze idempotent ") + (squeeze_ok ? "yes" : "no") +
                                                 ", window-1 identity " + (smooth_ok ? "yes" : "no") +
                                                 ", mix-0 equals plain " + (same ? "yes" : "no")};
}

const std::vector<std::string> kBaselines = {"advtrain", "squeeze", "smooth"};

double cell(const BenchmarkReport& r, const std::string& a, const std::string& d, const std::string& mode) {
    const BenchCell* c = r.find(a, d, mode);
    return c && !c->failed() ? c->accuracy : std::numeric_limits<double>::quiet_NaN();
}

// 9. RBM transfer accuracy at least 20 points above every baseline.
Outcome rbm_margin(const BenchmarkReport& r, double seconds) {
    bool ok = seconds <= 1800.0;
    std::ostringstream os;
    for (const char* a : {"fgsm", "deepfool"}) {
        const double rbm = cell(r, a, "rbm", "transfer");
        double best = 0.0;
        std::string who;
        for (const auto& d : kBaselines) {
            const double v = cell(r, a, d, "direct");
            ok = ok && !std::isnan(v) && !std::isnan(rbm) && rbm - v >= 0.20;
            if (v >= best) {
                best = v;
                who = d;
            }
        }
        os << a << ": rbm " << pct(rbm) << "% vs best baseline " << who << " " << pct(best) << "% (margin "
           << pct(rbm - best) << " pts); ";
    }
    os << "matrix " << fmt(seconds, 3) << " s";
    return {ok, os.str()};
}

// 10. Annealer-sim RBM within 5 points of the PCD RBM on every paired cell.
Outcome qrbm_comparable(const BenchmarkReport& r) {
    double worst = 0.0;
    std::string where;
    std::size_t pairs = 0;
    for (const auto& c : r.cells) {
        if (c.defence != "rbm") continue;
        const double q = cell(r, c.attack, "qrbm", c.mode);
        if (std::isnan(q) || c.failed()) return {false, "missing qrbm cell " + c.attack + "/" + c.mode};
        ++pairs;
        if (std::abs(q - c.accuracy) >= worst) {
            worst = std::abs(q - c.accuracy);
            where = c.attack + "/" + c.mode;
        }
    }
    return {pairs > 0 && worst <= 0.05,
            "largest gap " + pct(worst) + " pts at " + where + " over " + std::to_string(pairs) + " cells"};
}

// 11. CW: every baseline below the RBM.
Outcome cw_ordering(const BenchmarkReport& r) {
    const double rbm = cell(r, "cw", "rbm", "transfer");
    bool ok = !std::isnan(rbm);
    std::ostringstream os;
    os << "rbm " << pct(rbm) << "%";
    for (const auto& d : kBaselines) {
        const double v = cell(r, "cw", d, "direct");
        ok = ok && !std::isnan(v) && v < rbm;
        os << ", " << d << " " << pct(v) << "%";
    }
    return {ok, os.str()};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    std::string out = "acceptance-run";
    bool skip_desk = false;
    app.add_option("--out", out, "directory for the desk-scale report");
    app.add_flag("--skip-desk", skip_desk, "run only the property criteria");
    CLI11_PARSE(app, argc, argv);

    int failures = 0;
    auto emit = [&](int id, const std::string& name, const Outcome& o, double seconds, double limit = 0.0) {
        bool pass = o.pass;
        std::string detail = o.detail;
        if (limit > 0.0 && seconds >= limit) {
            pass = false;
            detail += ", runtime over " + fmt(limit, 3) + " s";
        }
        const char* tag = o.skipped ? "SKIPPED" : (pass ? "PASS" : "FAIL");
        if (!o.skipped && !pass) ++failures;
        std::cout << tag << " [" << id << "] " << name << ": " << detail << " (" << fmt(seconds, 3) << " s)"
                  << std::endl;
    };
    auto timed = [&](int id, const std::string& name, const std::function<Outcome()>& f, double limit = 0.0) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = f();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        emit(id, name, o, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), limit);
    };

    BenchmarkConfig cfg = default_bench_config();
    cfg.idx_dir = BOLTZDEF_DATA_DIR;
    const BenchData data = load_bench_data(cfg);

    timed(1, "free-energy identity", free_energy_identity, 10.0);
    timed(2, "gradient exactness", gradient_exactness, 30.0);
    timed(3, "partition cross-check", partition_cross_check);
    timed(4, "sampler convergence", sampler_convergence);
    timed(5, "gauge invariance", gauge_invariance);
    timed(6, "ising mapping", ising_mapping);
    timed(7, "attack validity", [&] { return attack_validity(data.train, data.test); });
    timed(8, "defence algebra", [&] { return defence_algebra(data.train, data.test); });

    if (skip_desk) {
        for (int id : {9, 10, 11}) emit(id, "desk-scale matrix", {false, "not run (--skip-desk)", true}, 0.0);
    } else {
        const auto t0 = std::chrono::steady_clock::now();
        BenchArtifacts art;
        BenchmarkReport report;
        std::string failure;
        try {
            report = run_matrix(cfg, {}, &art);
            write_bench_outputs(cfg, report, out, &art);
        } catch (const std::exception& e) {
            failure = e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (!failure.empty()) {
            for (int id : {9, 10, 11}) emit(id, "desk-scale matrix", {false, "exception: " + failure}, secs);
        } else {
            emit(9, "RBM beats baselines by 20 points (fgsm, deepfool; transfer)", rbm_margin(report, secs), secs);
            emit(10, "annealer-sim RBM within 5 points of PCD RBM", qrbm_comparable(report), 0.0);
            emit(11, "CW ordering: baselines below RBM", cw_ordering(report), 0.0);
            std::cout << "report written to " << fs::absolute(out).string() << "\n";
            std::cout << "info: re-binarized transfer, fgsm rbm " << pct(cell(report, "fgsm", "rbm", "transfer_bin"))
                      << "%, deepfool rbm " << pct(cell(report, "deepfool", "rbm", "transfer_bin"))
                      << "%; baselines on re-binarized adversarials: advtrain "
                      << pct(cell(report, "fgsm", "advtrain", "direct_bin")) << "%, squeeze "
                      << pct(cell(report, "fgsm", "squeeze", "direct_bin")) << "%, smooth "
                      << pct(cell(report, "fgsm", "smooth", "direct_bin")) << "% (fgsm)\n";
            for (const auto& w : report.warnings) std::cout << "warning: " << w << "\n";
        }
    }
    emit(12, "full-scale reference run", {false, "needs the full MNIST training set, not available offline", true},
         0.0);
    std::cout << (failures ? "FAILED " : "ALL PASSED ") << failures << " criteria failed" << std::endl;
    return failures ? 1 : 0;
}
