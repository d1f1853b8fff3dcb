#pragma once

// Two classifier families behind one differentiable contract: the RBM
// free-energy classifier and a small ReLU feedforward baseline.

#include <cmath>
#include <concepts>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "boltzdef/binary_io.hpp"
#include "boltzdef/data.hpp"
#include "boltzdef/error.hpp"
#include "boltzdef/rbm.hpp"
#include "boltzdef/trainer.hpp"

namespace boltzdef {

/// logits(x) gives one real per class; logit_vjp(x, g) is the gradient of
/// g . logits(x) with respect to x; loss_input_gradient(x, y) is the gradient
/// of cross-entropy over softmax(logits) for true label y.
template <class C>
concept DifferentiableClassifier = requires(const C& c, const Eigen::VectorXd& x, const Eigen::VectorXd& g, int y) {
    { c.num_classes() } -> std::convertible_to<int>;
    { c.input_dim() } -> std::convertible_to<std::size_t>;
    { c.logits(x) } -> std::convertible_to<Eigen::VectorXd>;
    { c.logit_vjp(x, g) } -> std::convertible_to<Eigen::VectorXd>;
    { c.loss_input_gradient(x, y) } -> std::convertible_to<Eigen::VectorXd>;
};

inline Eigen::VectorXd softmax(const Eigen::VectorXd& z) {
    const Eigen::VectorXd e = (z.array() - z.maxCoeff()).exp().matrix();
    return e / e.sum();
}

/// Cross-entropy of softmax(z) against label y.
inline double cross_entropy(const Eigen::VectorXd& z, int y) {
    const double mx = z.maxCoeff();
    return -(z[y] - mx - std::log((z.array() - mx).exp().sum()));
}

/// Argmax; ties resolve to the smallest index.
inline int predict(const Eigen::VectorXd& logits) {
    detail::require_arg(logits.size() > 0, "empty logit vector");
    int best = 0;
    for (Eigen::Index k = 1; k < logits.size(); ++k)
        if (logits[k] > logits[best]) best = static_cast<int>(k);
    return best;
}

template <DifferentiableClassifier C>
int predict(const C& clf, const Eigen::VectorXd& x) {
    detail::require_dim(static_cast<std::size_t>(x.size()) == clf.input_dim(), "input dimension mismatch");
    return predict(clf.logits(x));
}

template <DifferentiableClassifier C>
int predict(const C& clf, const Image& img) {
    return predict(clf, img.pixels);
}

template <DifferentiableClassifier C>
double accuracy(const C& clf, const Dataset& ds) {
    if (ds.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) correct += predict(clf, ds.images[i]) == ds.labels[i];
    return static_cast<double>(correct) / static_cast<double>(ds.size());
}

namespace detail {

inline Eigen::VectorXd one_hot(int label, Eigen::Index n) {
    require_arg(label >= 0 && label < n, "label out of range");
    Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
    e[label] = 1.0;
    return e;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Free-energy classifier: logit_y = -F(x ⊕ onehot(y)).
// ---------------------------------------------------------------------------
class FreeEnergyClassifier {
public:
    FreeEnergyClassifier(Rbm rbm, int num_classes) : rbm_(std::move(rbm)), num_classes_(num_classes) {
        rbm_.check_shape();
        detail::require_arg(num_classes_ > 0, "num_classes must be positive");
        detail::require_dim(rbm_.num_visible() > static_cast<std::size_t>(num_classes_),
                            "rbm has no room for an image block");
    }

    const Rbm& rbm() const { return rbm_; }
    int num_classes() const { return num_classes_; }
    std::size_t input_dim() const { return rbm_.num_visible() - static_cast<std::size_t>(num_classes_); }

    Eigen::VectorXd logits(const Eigen::VectorXd& x) const {
        check(x);
        const Eigen::VectorXd base = image_preactivation(x);
        const double linear = image_bias().dot(x);
        Eigen::VectorXd z(num_classes_);
        for (int y = 0; y < num_classes_; ++y) {
            const Eigen::VectorXd a = base + label_row(y);
            double s = 0.0;
            for (Eigen::Index j = 0; j < a.size(); ++j) s += math::softplus(a[j]);
            z[y] = linear + rbm_.visible_bias[label_index(y)] + s;
        }
        return z;
    }

    /// sum_y g_y d(-F(x ⊕ y))/dx = (sum g) b_img + W_img sum_y g_y sigmoid(a_y)
    Eigen::VectorXd logit_vjp(const Eigen::VectorXd& x, const Eigen::VectorXd& g) const {
        check(x);
        detail::require_dim(g.size() == num_classes_, "cotangent length mismatch");
        const Eigen::VectorXd base = image_preactivation(x);
        Eigen::VectorXd mix = Eigen::VectorXd::Zero(base.size());
        for (int y = 0; y < num_classes_; ++y)
            if (g[y] != 0.0) mix += g[y] * math::sigmoid(Eigen::VectorXd(base + label_row(y)));
        return g.sum() * image_bias() + image_weights() * mix;
    }

    Eigen::VectorXd loss_input_gradient(const Eigen::VectorXd& x, int label) const {
        return logit_vjp(x, softmax(logits(x)) - detail::one_hot(label, num_classes_));
    }

private:
    void check(const Eigen::VectorXd& x) const {
        detail::require_dim(static_cast<std::size_t>(x.size()) == input_dim(), "image dimension mismatch");
    }
    Eigen::Index image_rows() const { return static_cast<Eigen::Index>(input_dim()); }
    Eigen::Index label_index(int y) const { return image_rows() + y; }
    Eigen::Block<const Eigen::MatrixXd> image_weights() const { return rbm_.weights.topRows(image_rows()); }
    Eigen::VectorBlock<const Eigen::VectorXd> image_bias() const { return rbm_.visible_bias.head(image_rows()); }
    Eigen::VectorXd label_row(int y) const { return rbm_.weights.row(label_index(y)).transpose(); }
    Eigen::VectorXd image_preactivation(const Eigen::VectorXd& x) const {
        return rbm_.hidden_bias + image_weights().transpose() * x;
    }

    Rbm rbm_;
    int num_classes_;
};

inline Eigen::VectorXd fe_logits(const FreeEnergyClassifier& c, const Image& img) { return c.logits(img.pixels); }

inline Eigen::VectorXd fe_loss_input_gradient(const FreeEnergyClassifier& c, const Image& img, int label) {
    return c.loss_input_gradient(img.pixels, label);
}

// ---------------------------------------------------------------------------
// Feedforward baseline: ReLU hidden layers, linear output.
// ---------------------------------------------------------------------------
struct DenseLayer {
    Eigen::MatrixXd weights; // out x in
    Eigen::VectorXd bias;
};

class BaselineNet {
public:
    BaselineNet() = default;

    explicit BaselineNet(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
        detail::require_arg(!layers_.empty(), "network needs at least one layer");
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            detail::require_dim(layers_[l].bias.size() == layers_[l].weights.rows(), "layer bias mismatch");
            if (l > 0)
                detail::require_dim(layers_[l].weights.cols() == layers_[l - 1].weights.rows(),
                                    "consecutive layer sizes do not match");
        }
    }

    /// He-initialised weights for sizes {in, hidden..., classes}.
    template <typename R>
    static BaselineNet random(const std::vector<std::size_t>& sizes, R& rng) {
        detail::require_arg(sizes.size() >= 2, "need at least input and output sizes");
        std::vector<DenseLayer> layers;
        for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
            const auto in = static_cast<Eigen::Index>(sizes[l]);
            const auto out = static_cast<Eigen::Index>(sizes[l + 1]);
            const bool last = l + 2 == sizes.size();
            std::normal_distribution<double> n(0.0, std::sqrt((last ? 1.0 : 2.0) / static_cast<double>(in)));
            DenseLayer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
            for (Eigen::Index i = 0; i < layer.weights.size(); ++i) layer.weights.data()[i] = n(rng);
            layers.push_back(std::move(layer));
        }
        return BaselineNet(std::move(layers));
    }

    const std::vector<DenseLayer>& layers() const { return layers_; }
    std::vector<DenseLayer>& layers() { return layers_; }

    std::vector<std::size_t> sizes() const {
        std::vector<std::size_t> s{input_dim()};
        for (const auto& l : layers_) s.push_back(static_cast<std::size_t>(l.weights.rows()));
        return s;
    }

    int num_classes() const { return static_cast<int>(layers_.back().weights.rows()); }
    std::size_t input_dim() const { return static_cast<std::size_t>(layers_.front().weights.cols()); }

    Eigen::VectorXd logits(const Eigen::VectorXd& x) const { return forward(x).back(); }

    Eigen::VectorXd logit_vjp(const Eigen::VectorXd& x, const Eigen::VectorXd& g) const {
        detail::require_dim(g.size() == num_classes(), "cotangent length mismatch");
        const auto pre = forward(x);
        Eigen::VectorXd delta = g;
        for (std::size_t l = layers_.size(); l-- > 0;) {
            Eigen::VectorXd back = layers_[l].weights.transpose() * delta;
            if (l > 0) back = back.cwiseProduct((pre[l - 1].array() > 0.0).cast<double>().matrix());
            delta = std::move(back);
        }
        return delta;
    }

    Eigen::VectorXd loss_input_gradient(const Eigen::VectorXd& x, int label) const {
        return logit_vjp(x, softmax(logits(x)) - detail::one_hot(label, num_classes()));
    }

    /// Adds weight * d(cross-entropy)/d(params) into `grads` and returns the loss.
    double accumulate_gradient(const Eigen::VectorXd& x, int label, double weight,
                               std::vector<DenseLayer>& grads) const {
        const auto pre = forward(x);
        Eigen::VectorXd delta = softmax(pre.back()) - detail::one_hot(label, num_classes());
        for (std::size_t l = layers_.size(); l-- > 0;) {
            const Eigen::VectorXd input = l == 0 ? x : Eigen::VectorXd(pre[l - 1].cwiseMax(0.0));
            grads[l].weights.noalias() += weight * delta * input.transpose();
            grads[l].bias += weight * delta;
            if (l > 0) {
                delta = (layers_[l].weights.transpose() * delta)
                            .cwiseProduct((pre[l - 1].array() > 0.0).cast<double>().matrix());
            }
        }
        return cross_entropy(pre.back(), label);
    }

    std::vector<DenseLayer> zero_gradients() const {
        std::vector<DenseLayer> g;
        for (const auto& l : layers_)
            g.push_back({Eigen::MatrixXd::Zero(l.weights.rows(), l.weights.cols()), Eigen::VectorXd::Zero(l.bias.size())});
        return g;
    }

    double train_accuracy = std::numeric_limits<double>::quiet_NaN();
    double test_accuracy = std::numeric_limits<double>::quiet_NaN();

private:
    /// Pre-activations of every layer (the last one is the logit vector).
    std::vector<Eigen::VectorXd> forward(const Eigen::VectorXd& x) const {
        detail::require_dim(static_cast<std::size_t>(x.size()) == input_dim(), "input dimension mismatch");
        std::vector<Eigen::VectorXd> pre;
        pre.reserve(layers_.size());
        Eigen::VectorXd a = x;
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            Eigen::VectorXd z = layers_[l].weights * a + layers_[l].bias;
            if (l + 1 < layers_.size()) a = z.cwiseMax(0.0);
            pre.push_back(std::move(z));
        }
        return pre;
    }

    std::vector<DenseLayer> layers_;
};

static_assert(DifferentiableClassifier<BaselineNet>);
static_assert(DifferentiableClassifier<FreeEnergyClassifier>);

namespace detail {

inline Eigen::Index parameter_count(const std::vector<DenseLayer>& layers) {
    Eigen::Index n = 0;
    for (const auto& l : layers) n += l.weights.size() + l.bias.size();
    return n;
}

inline Eigen::VectorXd flatten(const std::vector<DenseLayer>& layers) {
    Eigen::VectorXd out(parameter_count(layers));
    Eigen::Index at = 0;
    for (const auto& l : layers) {
        out.segment(at, l.weights.size()) = Eigen::Map<const Eigen::VectorXd>(l.weights.data(), l.weights.size());
        at += l.weights.size();
        out.segment(at, l.bias.size()) = l.bias;
        at += l.bias.size();
    }
    return out;
}

inline void add_flat(std::vector<DenseLayer>& layers, const Eigen::VectorXd& delta) {
    Eigen::Index at = 0;
    for (auto& l : layers) {
        Eigen::Map<Eigen::VectorXd>(l.weights.data(), l.weights.size()) += delta.segment(at, l.weights.size());
        at += l.weights.size();
        l.bias += delta.segment(at, l.bias.size());
        at += l.bias.size();
    }
}

} // namespace detail

struct BaselineConfig {
    std::vector<std::size_t> hidden{64};
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    double learning_rate = 1e-3;
    std::uint64_t seed = 7;
    AdamConfig adam;

    void validate() const {
        if (!(learning_rate > 0.0)) throw ConfigError("baseline learning rate must be positive");
        if (batch_size < 1) throw ConfigError("baseline batch size must be at least 1");
    }
};

/// Mini-batch Adam on (optionally weighted) cross-entropy with manual
/// backpropagation. Examples with zero weight are dropped before batching.
/// Records train accuracy, and test accuracy when `test` is given.
inline BaselineNet baseline_train(const BaselineConfig& cfg, const Dataset& ds, const std::vector<double>& weights = {},
                                  const Dataset* test = nullptr) {
    cfg.validate();
    if (ds.empty()) throw ConfigError("baseline training set is empty");
    if (!weights.empty() && weights.size() != ds.size()) throw ConfigError("example weight count mismatch");

    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < ds.size(); ++i)
        if (weights.empty() || weights[i] > 0.0) keep.push_back(i);
    auto weight_of = [&](std::size_t i) { return weights.empty() ? 1.0 : weights[i]; };

    Rng rng(cfg.seed);
    std::vector<std::size_t> sizes{ds.image_dim()};
    sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
    sizes.push_back(static_cast<std::size_t>(ds.num_classes));
    BaselineNet net = BaselineNet::random(sizes, rng);
    AdamState adam(detail::parameter_count(net.layers()));

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (const auto& batch : batches(keep.size(), cfg.batch_size, cfg.seed * 0x2545F4914F6CDD1DULL + epoch)) {
            auto grads = net.zero_gradients();
            double total = 0.0;
            for (std::size_t b : batch) {
                const std::size_t i = keep[b];
                net.accumulate_gradient(ds.images[i].pixels, ds.labels[i], weight_of(i), grads);
                total += weight_of(i);
            }
            Eigen::VectorXd g = detail::flatten(grads) / total;
            detail::add_flat(net.layers(), adam_update(adam, g, cfg.learning_rate, cfg.adam));
        }
    }
    net.train_accuracy = accuracy(net, ds);
    if (test) net.test_accuracy = accuracy(net, *test);
    return net;
}

// Baseline container:
//   "BZNT" | version u8 | L u32 | sizes u32[L+1] | per layer: W f64[out*in]
//   row-major, b f64[out]                                     (little-endian)
inline constexpr std::string_view kNetMagic = "BZNT";
inline constexpr std::uint8_t kNetVersion = 1;

inline void save_baseline(const BaselineNet& net, const std::filesystem::path& path) {
    io::Writer w;
    w.magic(kNetMagic);
    w.u8(kNetVersion);
    const auto sizes = net.sizes();
    w.u32(static_cast<std::uint32_t>(net.layers().size()));
    for (auto s : sizes) w.u32(static_cast<std::uint32_t>(s));
    for (const auto& l : net.layers()) {
        for (Eigen::Index r = 0; r < l.weights.rows(); ++r)
            for (Eigen::Index c = 0; c < l.weights.cols(); ++c) w.f64(l.weights(r, c));
        for (Eigen::Index r = 0; r < l.bias.size(); ++r) w.f64(l.bias[r]);
    }
    io::write_file(path, w.bytes());
}

inline BaselineNet load_baseline(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path);
    io::Reader r(bytes, path.string());
    if (!r.magic(kNetMagic)) throw FormatError("not a baseline network container: " + path.string());
    if (const auto v = r.u8(); v != kNetVersion) throw FormatError("unsupported network version " + std::to_string(v));
    const std::size_t n_layers = r.u32();
    std::vector<std::size_t> sizes(n_layers + 1);
    for (auto& s : sizes) s = r.u32();
    std::vector<DenseLayer> layers;
    for (std::size_t l = 0; l < n_layers; ++l) {
        DenseLayer layer{Eigen::MatrixXd(static_cast<Eigen::Index>(sizes[l + 1]), static_cast<Eigen::Index>(sizes[l])),
                         Eigen::VectorXd(static_cast<Eigen::Index>(sizes[l + 1]))};
        for (Eigen::Index rr = 0; rr < layer.weights.rows(); ++rr)
            for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) layer.weights(rr, c) = r.f64();
        for (Eigen::Index rr = 0; rr < layer.bias.size(); ++rr) layer.bias[rr] = r.f64();
        layers.push_back(std::move(layer));
    }
    if (!r.at_end()) throw FormatError("trailing bytes in " + path.string());
    return BaselineNet(std::move(layers));
}

enum class ModelKind { rbm, baseline };

/// Classifier kind from the container header.
inline ModelKind detect_model_kind(const std::filesystem::path& path) {
    const auto magic = io::peek_magic(path);
    if (magic == kRbmMagic) return ModelKind::rbm;
    if (magic == kNetMagic) return ModelKind::baseline;
    throw FormatError("unrecognised model container " + path.string());
}

} // namespace boltzdef
