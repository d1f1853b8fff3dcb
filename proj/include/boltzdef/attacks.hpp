#pragma once

// Non-targeted white-box attacks against any DifferentiableClassifier.
//
// Success convention: an attack succeeds when the returned image is not
// classified as the true label. For correctly classified inputs this is the
// usual "prediction changed" contract; inputs that are already misclassified
// are flagged `already_adversarial` and (for DeepFool and CW) returned
// unperturbed.

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include <Eigen/Dense>

#include "boltzdef/classifiers.hpp"
#include "boltzdef/data.hpp"
#include "boltzdef/error.hpp"
#include "boltzdef/trainer.hpp"

namespace boltzdef {

struct AttackResult {
    Image adversarial;
    bool success = false;
    bool already_adversarial = false;
    double l0 = 0.0;
    double l2 = 0.0;
    double linf = 0.0;
    std::size_t queries = 0; // gradient evaluations
    std::string diagnostic;
};

struct FgsmParams {
    double epsilon = 0.3;
};

struct DeepFoolParams {
    std::size_t max_iter = 50;
    double overshoot = 0.02;
};

struct CarliniWagnerParams {
    std::size_t binary_search_steps = 9;
    std::size_t max_iterations = 1000;
    double initial_c = 1e-3;
    double learning_rate = 0.01;
    double confidence = 0.0;
    double c_growth = 2.0;     // multiplier on failure while no upper bound is known
    bool abort_early = true;   // stop a c-step once the objective stalls
    double box_shrink = 1e-6;  // pixels are mapped into [d, 1-d] before arctanh
};

namespace detail {

inline Eigen::VectorXd clip_unit(const Eigen::VectorXd& x) { return x.cwiseMax(0.0).cwiseMin(1.0); }

inline void finish(AttackResult& r, const Image& clean, Eigen::VectorXd adv) {
    const Eigen::VectorXd d = adv - clean.pixels;
    r.l0 = static_cast<double>((d.array() != 0.0).count());
    r.l2 = d.norm();
    r.linf = d.size() ? d.cwiseAbs().maxCoeff() : 0.0;
    r.adversarial = clean.with_pixels(std::move(adv));
}

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

} // namespace detail

/// x* = clip(x + eps * sign(grad_x L(x, y)))
template <DifferentiableClassifier C>
AttackResult fgsm(const C& clf, const Image& img, int label, const FgsmParams& p = {}) {
    detail::require_arg(p.epsilon >= 0.0, "fgsm epsilon must be non-negative");
    detail::require_dim(img.size() == clf.input_dim(), "image dimension mismatch");
    AttackResult r;
    r.already_adversarial = predict(clf, img.pixels) != label;
    const Eigen::VectorXd g = clf.loss_input_gradient(img.pixels, label);
    r.queries = 1;
    Eigen::VectorXd adv = detail::clip_unit(img.pixels + p.epsilon * g.unaryExpr([](double v) { return detail::sign(v); }));
    r.success = predict(clf, adv) != label;
    detail::finish(r, img, std::move(adv));
    return r;
}

/// Multiclass DeepFool (L2). Each iteration linearises every logit gap
/// f_k - f_k0 around the current point and steps onto the nearest linearised
/// boundary; the accumulated step is scaled by (1 + overshoot).
template <DifferentiableClassifier C>
AttackResult deepfool(const C& clf, const Image& img, int label, const DeepFoolParams& p = {}) {
    detail::require_arg(p.max_iter >= 1, "deepfool max_iter must be at least 1");
    detail::require_dim(img.size() == clf.input_dim(), "image dimension mismatch");
    AttackResult r;
    const Eigen::VectorXd& x0 = img.pixels;
    const int k0 = predict(clf, x0);
    if (k0 != label) {
        r.success = true;
        r.already_adversarial = true;
        r.diagnostic = "already adversarial";
        detail::finish(r, img, x0);
        return r;
    }
    const int n_classes = clf.num_classes();
    Eigen::VectorXd total = Eigen::VectorXd::Zero(x0.size());
    Eigen::VectorXd x = x0;
    for (std::size_t it = 0; it < p.max_iter; ++it) {
        const Eigen::VectorXd f = clf.logits(x);
        if (predict(f) != k0) break;
        double best = std::numeric_limits<double>::infinity();
        Eigen::VectorXd step;
        for (int k = 0; k < n_classes; ++k) {
            if (k == k0) continue;
            Eigen::VectorXd e = Eigen::VectorXd::Zero(n_classes);
            e[k] = 1.0;
            e[k0] = -1.0;
            const Eigen::VectorXd w = clf.logit_vjp(x, e);
            ++r.queries;
            const double wn = w.norm();
            if (wn == 0.0) continue;
            const double gap = std::abs(f[k] - f[k0]);
            if (gap / wn < best) {
                best = gap / wn;
                step = (gap / (wn * wn)) * w;
            }
        }
        if (!std::isfinite(best)) {
            r.diagnostic = "zero gradient difference for every class";
            detail::finish(r, img, x);
            r.success = predict(clf, r.adversarial.pixels) != label;
            return r;
        }
        total += step;
        x = detail::clip_unit(x0 + (1.0 + p.overshoot) * total);
    }
    r.success = predict(clf, x) != label;
    if (!r.success) r.diagnostic = "no label flip within max_iter";
    detail::finish(r, img, std::move(x));
    return r;
}

namespace detail {

/// Box-constrained variable change used by CW: x = (tanh(w) + 1) / 2.
inline Eigen::VectorXd tanh_to_box(const Eigen::VectorXd& w) {
    return ((w.array().tanh() + 1.0) / 2.0).matrix();
}

inline Eigen::VectorXd box_to_tanh(const Eigen::VectorXd& x, double shrink) {
    const Eigen::ArrayXd s = shrink + (1.0 - 2.0 * shrink) * x.array();
    return (2.0 * s - 1.0).atanh().matrix();
}

/// (true-label logit) - (best other logit), and the index of that other.
inline std::pair<double, int> logit_margin(const Eigen::VectorXd& z, int label) {
    int other = label == 0 ? 1 : 0;
    for (Eigen::Index k = 0; k < z.size(); ++k)
        if (k != label && z[k] > z[other]) other = static_cast<int>(k);
    return {z[label] - z[other], other};
}

} // namespace detail

/// Carlini-Wagner L2: minimise |x - x0|^2 + c * max(Z_y - max_{k!=y} Z_k + kappa, 0)
/// over the tanh-reparameterised image with Adam, binary-searching c.
template <DifferentiableClassifier C>
AttackResult carlini_wagner_l2(const C& clf, const Image& img, int label, const CarliniWagnerParams& p = {}) {
    detail::require_arg(p.binary_search_steps >= 1 && p.max_iterations >= 1, "cw needs at least one step");
    detail::require_arg(p.initial_c > 0.0 && p.learning_rate > 0.0, "cw c and learning rate must be positive");
    detail::require_arg(p.box_shrink > 0.0 && p.box_shrink < 0.5, "cw box shrink must lie in (0, 0.5)");
    detail::require_dim(img.size() == clf.input_dim(), "image dimension mismatch");
    detail::require_arg(clf.num_classes() >= 2, "cw needs at least two classes");
    AttackResult r;
    const Eigen::VectorXd& x0 = img.pixels;
    const auto n_classes = static_cast<Eigen::Index>(clf.num_classes());

    {
        const Eigen::VectorXd z0 = clf.logits(x0);
        if (predict(z0) != label && detail::logit_margin(z0, label).first <= -p.confidence) {
            r.success = true;
            r.already_adversarial = true;
            r.diagnostic = "already adversarial";
            detail::finish(r, img, x0);
            return r;
        }
    }

    const Eigen::VectorXd w0 = detail::box_to_tanh(x0, p.box_shrink);
    const std::size_t check_every = std::max<std::size_t>(1, p.max_iterations / 10);
    double lower = 0.0;
    double upper = std::numeric_limits<double>::infinity();
    double c = p.initial_c;
    double best_l2 = std::numeric_limits<double>::infinity();
    Eigen::VectorXd best;
    Eigen::VectorXd last;

    for (std::size_t step = 0; step < p.binary_search_steps; ++step) {
        Eigen::VectorXd w = w0;
        AdamState adam(w.size());
        double previous = std::numeric_limits<double>::infinity();
        bool found = false;
        Eigen::VectorXd x;
        for (std::size_t it = 0; it < p.max_iterations; ++it) {
            const Eigen::ArrayXd t = w.array().tanh();
            x = ((t + 1.0) / 2.0).matrix();
            const Eigen::VectorXd z = clf.logits(x);
            const auto [margin, other] = detail::logit_margin(z, label);
            const double dist = (x - x0).squaredNorm();
            const double hinge = std::max(margin + p.confidence, 0.0);
            const double loss = dist + c * hinge;

            if (predict(z) != label && margin <= -p.confidence) {
                found = true;
                const double l2 = std::sqrt(dist);
                if (l2 < best_l2) {
                    best_l2 = l2;
                    best = x;
                }
            }

            Eigen::VectorXd gx = 2.0 * (x - x0);
            if (hinge > 0.0) {
                Eigen::VectorXd e = Eigen::VectorXd::Zero(n_classes);
                e[label] = 1.0;
                e[other] = -1.0;
                gx += c * clf.logit_vjp(x, e);
                ++r.queries;
            }
            const Eigen::VectorXd gw = (gx.array() * (1.0 - t.square()) / 2.0).matrix();
            w += adam_update(adam, gw, p.learning_rate);

            if (p.abort_early && it % check_every == 0) {
                if (loss > previous * 0.9999) break;
                previous = loss;
            }
        }
        last = x;
        if (found) {
            upper = std::min(upper, c);
            c = (lower + upper) / 2.0;
        } else {
            lower = std::max(lower, c);
            c = std::isfinite(upper) ? (lower + upper) / 2.0 : c * p.c_growth;
        }
    }

    if (std::isfinite(best_l2)) {
        r.success = true;
        detail::finish(r, img, std::move(best));
    } else {
        r.success = false;
        r.diagnostic = "no adversarial found at any c";
        detail::finish(r, img, std::move(last));
    }
    return r;
}

enum class AttackKind { fgsm, deepfool, cw };

inline std::string to_string(AttackKind k) {
    switch (k) {
    case AttackKind::fgsm: return "fgsm";
    case AttackKind::deepfool: return "deepfool";
    case AttackKind::cw: return "cw";
    }
    return "unknown";
}

inline AttackKind parse_attack_kind(const std::string& s) {
    if (s == "fgsm") return AttackKind::fgsm;
    if (s == "deepfool") return AttackKind::deepfool;
    if (s == "cw" || s == "carlini_wagner") return AttackKind::cw;
    throw ConfigError("unknown attack '" + s + "'");
}

struct AttackSpec {
    AttackKind kind = AttackKind::fgsm;
    FgsmParams fgsm;
    DeepFoolParams deepfool;
    CarliniWagnerParams cw;

    std::string name() const { return to_string(kind); }
};

template <DifferentiableClassifier C>
AttackResult run_attack(const C& clf, const Image& img, int label, const AttackSpec& spec) {
    switch (spec.kind) {
    case AttackKind::fgsm: return fgsm(clf, img, label, spec.fgsm);
    case AttackKind::deepfool: return deepfool(clf, img, label, spec.deepfool);
    case AttackKind::cw: return carlini_wagner_l2(clf, img, label, spec.cw);
    }
    throw ConfigError("unhandled attack kind");
}

/// The attacked copy of a dataset, 1:1 with the input.
template <DifferentiableClassifier C>
Dataset attack_dataset(const C& clf, const Dataset& ds, const AttackSpec& spec, std::vector<AttackResult>* results = nullptr) {
    Dataset out;
    out.num_classes = ds.num_classes;
    out.labels = ds.labels;
    out.images.reserve(ds.size());
    if (results) results->clear();
    for (std::size_t i = 0; i < ds.size(); ++i) {
        auto r = run_attack(clf, ds.images[i], ds.labels[i], spec);
        out.images.push_back(r.adversarial);
        if (results) results->push_back(std::move(r));
    }
    return out;
}

} // namespace boltzdef
