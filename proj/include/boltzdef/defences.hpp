#pragma once

// Baseline defences: feature squeezing (bit-depth reduction), spatial
// smoothing (median filter) and adversarial training. Random resize/pad is
// available as an extra dataset transform.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "boltzdef/attacks.hpp"
#include "boltzdef/classifiers.hpp"
#include "boltzdef/data.hpp"
#include "boltzdef/error.hpp"

namespace boltzdef {

/// p -> floor(p * L + 1/2) / L with L = 2^bits - 1.
inline Image feature_squeeze(const Image& img, int bits) {
    detail::require_arg(bits >= 1 && bits <= 8, "bit depth must lie in [1, 8]");
    const double levels = static_cast<double>((1 << bits) - 1);
    return img.with_pixels(img.pixels.unaryExpr([levels](double p) { return std::floor(p * levels + 0.5) / levels; }));
}

/// Median over a window x window neighbourhood, edges replicated.
inline Image spatial_smooth(const Image& img, int window) {
    detail::require_arg(window >= 1 && window % 2 == 1, "median window must be odd and positive");
    if (window == 1) return img;
    const auto h = static_cast<long>(img.height);
    const auto w = static_cast<long>(img.width);
    const long r = window / 2;
    Image out(img.width, img.height);
    std::vector<double> block;
    block.reserve(static_cast<std::size_t>(window * window));
    for (long y = 0; y < h; ++y) {
        for (long x = 0; x < w; ++x) {
            block.clear();
            for (long dy = -r; dy <= r; ++dy)
                for (long dx = -r; dx <= r; ++dx)
                    block.push_back(img.at(static_cast<std::size_t>(std::clamp(y + dy, 0L, h - 1)),
                                           static_cast<std::size_t>(std::clamp(x + dx, 0L, w - 1))));
            const auto mid = block.begin() + static_cast<std::ptrdiff_t>(block.size() / 2);
            std::nth_element(block.begin(), mid, block.end());
            out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = *mid;
        }
    }
    return out;
}

/// Shrinks the image by a random 0..max_shrink pixels (nearest neighbour)
/// and zero-pads it back to full size at a random offset.
template <typename R>
Image random_resize_pad(const Image& img, std::size_t max_shrink, R& rng) {
    detail::require_arg(max_shrink < std::min(img.width, img.height), "shrink leaves an empty image");
    std::uniform_int_distribution<std::size_t> shrink(0, max_shrink);
    const std::size_t s = shrink(rng);
    const std::size_t nw = img.width - s;
    const std::size_t nh = img.height - s;
    std::uniform_int_distribution<std::size_t> offset(0, s);
    const std::size_t ox = offset(rng);
    const std::size_t oy = offset(rng);
    Image out(img.width, img.height);
    for (std::size_t y = 0; y < nh; ++y)
        for (std::size_t x = 0; x < nw; ++x)
            out.at(y + oy, x + ox) = img.at(y * img.height / nh, x * img.width / nw);
    return out;
}

enum class DefenceKind { none, adversarial_training, feature_squeezing, spatial_smoothing, random_resize_pad };

inline std::string to_string(DefenceKind k) {
    switch (k) {
    case DefenceKind::none: return "none";
    case DefenceKind::adversarial_training: return "advtrain";
    case DefenceKind::feature_squeezing: return "squeeze";
    case DefenceKind::spatial_smoothing: return "smooth";
    case DefenceKind::random_resize_pad: return "resizepad";
    }
    return "unknown";
}

inline DefenceKind parse_defence_kind(const std::string& s) {
    if (s == "none" || s == "rbm") return DefenceKind::none;
    if (s == "advtrain" || s == "adversarial_training") return DefenceKind::adversarial_training;
    if (s == "squeeze" || s == "feature_squeezing") return DefenceKind::feature_squeezing;
    if (s == "smooth" || s == "spatial_smoothing") return DefenceKind::spatial_smoothing;
    if (s == "resizepad" || s == "random_resize_pad") return DefenceKind::random_resize_pad;
    throw ConfigError("unknown defence '" + s + "'");
}

struct DefenceSpec {
    DefenceKind kind = DefenceKind::none;
    int bits = 1;
    int window = 3;
    double mix = 0.5;
    std::size_t max_shrink = 1;
    std::uint64_t seed = 11;
    AttackSpec attack; // crafting attack for adversarial training

    void validate() const {
        if (bits < 1 || bits > 8) throw ConfigError("squeeze bits must lie in [1, 8]");
        if (window < 1 || window % 2 == 0) throw ConfigError("smooth window must be odd and >= 1");
        if (!(mix >= 0.0 && mix <= 1.0)) throw ConfigError("advtrain mix must lie in [0, 1]");
    }

    std::string name() const { return to_string(kind); }
};

/// Per-image transform for squeezing/smoothing/resize-pad; adversarial
/// training and the RBM defence pass the data through unchanged.
inline Dataset apply_defence(const Dataset& ds, const DefenceSpec& spec) {
    spec.validate();
    Dataset out = ds;
    switch (spec.kind) {
    case DefenceKind::none:
    case DefenceKind::adversarial_training: return out;
    case DefenceKind::feature_squeezing:
        for (auto& img : out.images) img = feature_squeeze(img, spec.bits);
        return out;
    case DefenceKind::spatial_smoothing:
        for (auto& img : out.images) img = spatial_smooth(img, spec.window);
        return out;
    case DefenceKind::random_resize_pad: {
        std::mt19937_64 rng(spec.seed);
        for (auto& img : out.images) img = random_resize_pad(img, spec.max_shrink, rng);
        return out;
    }
    }
    return out;
}

struct AdversarialTrainingResult {
    BaselineNet defended;
    BaselineNet undefended;
    double attack_success_rate = 0.0;
    std::vector<std::string> warnings;
};

/// Trains an undefended net, attacks every training image with `attack`,
/// then retrains from scratch on clean ∪ adversarial with example weights
/// 2(1 - mix) and 2 mix. mix = 0 reproduces plain training exactly.
inline AdversarialTrainingResult adversarial_training(const Dataset& ds, const AttackSpec& attack,
                                                      const BaselineConfig& cfg, double mix,
                                                      const Dataset* test = nullptr) {
    detail::require_arg(mix >= 0.0 && mix <= 1.0, "mix ratio must lie in [0, 1]");
    AdversarialTrainingResult out;
    out.undefended = baseline_train(cfg, ds, {}, test);

    Dataset both = ds;
    std::vector<double> weights(ds.size(), 2.0 * (1.0 - mix));
    std::size_t successes = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto r = run_attack(out.undefended, ds.images[i], ds.labels[i], attack);
        successes += r.success ? 1 : 0;
        both.push_back(r.adversarial, ds.labels[i]);
        weights.push_back(2.0 * mix);
    }
    out.attack_success_rate = ds.empty() ? 0.0 : static_cast<double>(successes) / static_cast<double>(ds.size());
    if (!ds.empty() && successes == 0)
        out.warnings.push_back("degenerate defence: the crafting attack never succeeded on the training set");
    out.defended = baseline_train(cfg, both, weights, test);
    return out;
}

} // namespace boltzdef
