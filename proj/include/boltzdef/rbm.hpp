#pragma once

// Restricted Boltzmann machine parameters and the analytic quantities built
// on them: energy, free energy, conditionals, the negative log-likelihood and
// its gradient, plus the versioned model container.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "boltzdef/binary_io.hpp"
#include "boltzdef/error.hpp"

namespace boltzdef {

namespace math {

/// log(1 + e^z) without overflow.
inline double softplus(double z) { return z < 0.0 ? std::log1p(std::exp(z)) : z + std::log1p(std::exp(-z)); }

inline double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

inline Eigen::VectorXd sigmoid(const Eigen::VectorXd& z) { return z.unaryExpr([](double v) { return sigmoid(v); }); }
inline Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& z) { return z.unaryExpr([](double v) { return sigmoid(v); }); }

/// Streaming log-sum-exp accumulator.
class LogSumExp {
public:
    void add(double v) {
        if (v == -std::numeric_limits<double>::infinity()) return;
        if (v <= max_) {
            sum_ += std::exp(v - max_);
        } else {
            sum_ = sum_ * std::exp(max_ - v) + 1.0;
            max_ = v;
        }
    }
    double value() const {
        return sum_ == 0.0 ? -std::numeric_limits<double>::infinity() : max_ + std::log(sum_);
    }

private:
    double max_ = -std::numeric_limits<double>::infinity();
    double sum_ = 0.0;
};

} // namespace math

/// Bipartite binary model; w(i, j) couples visible unit i to hidden unit j.
struct Rbm {
    Eigen::MatrixXd weights;
    Eigen::VectorXd visible_bias;
    Eigen::VectorXd hidden_bias;

    Rbm() = default;
    Rbm(std::size_t num_visible, std::size_t num_hidden)
        : weights(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(num_visible), static_cast<Eigen::Index>(num_hidden))),
          visible_bias(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(num_visible))),
          hidden_bias(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(num_hidden))) {}

    /// Gaussian weights N(0, std^2), zero biases.
    template <typename Rng>
    static Rbm random(std::size_t num_visible, std::size_t num_hidden, Rng& rng, double std = 0.01) {
        Rbm m(num_visible, num_hidden);
        std::normal_distribution<double> n(0.0, std);
        for (Eigen::Index i = 0; i < m.weights.size(); ++i) m.weights.data()[i] = n(rng);
        return m;
    }

    std::size_t num_visible() const { return static_cast<std::size_t>(visible_bias.size()); }
    std::size_t num_hidden() const { return static_cast<std::size_t>(hidden_bias.size()); }

    bool finite() const {
        return weights.allFinite() && visible_bias.allFinite() && hidden_bias.allFinite();
    }

    void check_shape() const {
        detail::require_dim(weights.rows() == visible_bias.size() && weights.cols() == hidden_bias.size(),
                            "rbm weight matrix does not match bias lengths");
    }
};

/// First and second moments <x_i>, <h_j>, <x_i h_j> over `count` samples.
struct Moments {
    Eigen::VectorXd v;
    Eigen::VectorXd h;
    Eigen::MatrixXd vh;
    std::size_t count = 0;
};

/// Positive (data) and negative (model) phase statistics.
struct GradientEstimate {
    Moments positive;
    Moments negative;
};

/// Gradient of the loss with the same shape as the model.
struct RbmGradient {
    Eigen::MatrixXd weights;
    Eigen::VectorXd visible_bias;
    Eigen::VectorXd hidden_bias;
};

namespace detail {

inline void check_visible(const Rbm& m, const Eigen::VectorXd& x) {
    require_dim(static_cast<std::size_t>(x.size()) == m.num_visible(), "visible vector length mismatch");
}

inline void check_hidden(const Rbm& m, const Eigen::VectorXd& h) {
    require_dim(static_cast<std::size_t>(h.size()) == m.num_hidden(), "hidden vector length mismatch");
}

} // namespace detail

/// E(x,h) = -b.x - c.h - x^T W h
inline double energy(const Rbm& m, const Eigen::VectorXd& x, const Eigen::VectorXd& h) {
    detail::check_visible(m, x);
    detail::check_hidden(m, h);
    return -m.visible_bias.dot(x) - m.hidden_bias.dot(h) - x.dot(m.weights * h);
}

/// F(x) = -b.x - sum_j softplus(c_j + (W^T x)_j); x may be continuous.
inline double free_energy(const Rbm& m, const Eigen::VectorXd& x) {
    detail::check_visible(m, x);
    const Eigen::VectorXd pre = m.hidden_bias + m.weights.transpose() * x;
    double f = -m.visible_bias.dot(x);
    for (Eigen::Index j = 0; j < pre.size(); ++j) f -= math::softplus(pre[j]);
    return f;
}

/// p(h_j = 1 | x)
inline Eigen::VectorXd hidden_conditional(const Rbm& m, const Eigen::VectorXd& x) {
    detail::check_visible(m, x);
    return math::sigmoid(Eigen::VectorXd(m.hidden_bias + m.weights.transpose() * x));
}

/// p(x_i = 1 | h)
inline Eigen::VectorXd visible_conditional(const Rbm& m, const Eigen::VectorXd& h) {
    detail::check_hidden(m, h);
    return math::sigmoid(Eigen::VectorXd(m.visible_bias + m.weights * h));
}

/// dF/dx_i = -b_i - sum_j w_ij sigmoid(c_j + sum_k w_kj x_k)
inline Eigen::VectorXd free_energy_input_gradient(const Rbm& m, const Eigen::VectorXd& x) {
    return -m.visible_bias - m.weights * hidden_conditional(m, x);
}

inline constexpr std::size_t kMaxEnumerableVisible = 20;

/// log Z, summing hidden units out analytically and enumerating all 2^V
/// visible configurations. Test-oracle sized models only.
inline double log_partition_function(const Rbm& m) {
    m.check_shape();
    const std::size_t nv = m.num_visible();
    if (nv > kMaxEnumerableVisible)
        throw CapacityError("partition function enumeration limited to " + std::to_string(kMaxEnumerableVisible) +
                            " visible units");
    math::LogSumExp lse;
    Eigen::VectorXd x(static_cast<Eigen::Index>(nv));
    for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << nv); ++mask) {
        for (std::size_t i = 0; i < nv; ++i) x[static_cast<Eigen::Index>(i)] = (mask >> i) & 1U;
        lse.add(-free_energy(m, x));
    }
    return lse.value();
}

inline double partition_function(const Rbm& m) { return std::exp(log_partition_function(m)); }

/// log Z + mean free energy of `data` (rows are visible vectors).
inline double nll_loss(const Rbm& m, const Eigen::MatrixXd& data, double z) {
    detail::require_arg(z > 0.0 && std::isfinite(z), "partition value must be positive and finite");
    detail::require_arg(data.rows() > 0, "empty data set");
    double mean_f = 0.0;
    for (Eigen::Index r = 0; r < data.rows(); ++r) mean_f += free_energy(m, data.row(r).transpose());
    return std::log(z) + mean_f / static_cast<double>(data.rows());
}

/// Positive phase for a batch: data means for x and mean-field hidden
/// probabilities for h and x h.
inline Moments data_moments(const Rbm& m, const Eigen::MatrixXd& batch) {
    detail::require_arg(batch.rows() > 0, "empty batch");
    detail::require_dim(static_cast<std::size_t>(batch.cols()) == m.num_visible(), "batch width mismatch");
    const double n = static_cast<double>(batch.rows());
    const Eigen::MatrixXd ph = math::sigmoid(Eigen::MatrixXd((batch * m.weights).rowwise() + m.hidden_bias.transpose()));
    Moments out;
    out.v = batch.colwise().sum().transpose() / n;
    out.h = ph.colwise().sum().transpose() / n;
    out.vh = batch.transpose() * ph / n;
    out.count = static_cast<std::size_t>(batch.rows());
    return out;
}

/// dL/dtheta = -(positive - negative) for every parameter.
inline RbmGradient loss_gradient(const Rbm& m, const GradientEstimate& stats) {
    const auto& p = stats.positive;
    const auto& q = stats.negative;
    const auto nv = static_cast<Eigen::Index>(m.num_visible());
    const auto nh = static_cast<Eigen::Index>(m.num_hidden());
    for (const Moments* s : {&p, &q}) {
        detail::require_dim(s->v.size() == nv && s->h.size() == nh && s->vh.rows() == nv && s->vh.cols() == nh,
                            "gradient statistics do not match the model shape");
    }
    return RbmGradient{-(p.vh - q.vh), -(p.v - q.v), -(p.h - q.h)};
}

// ---------------------------------------------------------------------------
// Model container:
//   "BZRM" | version u8 | V u32 | H u32 | w f64[V*H] row-major | b f64[V] |
//   c f64[H]                                                  (little-endian)
// plus a JSON sidecar `<file>.json` with hyperparameters and history digest.
// ---------------------------------------------------------------------------
inline constexpr std::string_view kRbmMagic = "BZRM";
inline constexpr std::uint8_t kRbmVersion = 1;

inline std::vector<unsigned char> encode_rbm(const Rbm& m) {
    m.check_shape();
    io::Writer w;
    w.magic(kRbmMagic);
    w.u8(kRbmVersion);
    w.u32(static_cast<std::uint32_t>(m.num_visible()));
    w.u32(static_cast<std::uint32_t>(m.num_hidden()));
    for (Eigen::Index i = 0; i < m.weights.rows(); ++i)
        for (Eigen::Index j = 0; j < m.weights.cols(); ++j) w.f64(m.weights(i, j));
    for (Eigen::Index i = 0; i < m.visible_bias.size(); ++i) w.f64(m.visible_bias[i]);
    for (Eigen::Index j = 0; j < m.hidden_bias.size(); ++j) w.f64(m.hidden_bias[j]);
    return w.bytes();
}

inline Rbm decode_rbm(const std::vector<unsigned char>& bytes, const std::string& source = "<memory>") {
    io::Reader r(bytes, source);
    if (!r.magic(kRbmMagic)) throw FormatError("not an RBM container: " + source);
    if (const auto v = r.u8(); v != kRbmVersion) throw FormatError("unsupported RBM version " + std::to_string(v));
    const std::size_t nv = r.u32();
    const std::size_t nh = r.u32();
    Rbm m(nv, nh);
    for (Eigen::Index i = 0; i < m.weights.rows(); ++i)
        for (Eigen::Index j = 0; j < m.weights.cols(); ++j) m.weights(i, j) = r.f64();
    for (Eigen::Index i = 0; i < m.visible_bias.size(); ++i) m.visible_bias[i] = r.f64();
    for (Eigen::Index j = 0; j < m.hidden_bias.size(); ++j) m.hidden_bias[j] = r.f64();
    if (!r.at_end()) throw FormatError("trailing bytes in " + source);
    if (!m.finite()) throw FormatError("non-finite parameters in " + source);
    return m;
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& model) {
    auto p = model;
    p += ".json";
    return p;
}

inline void save_rbm(const Rbm& m, const std::filesystem::path& path, const nlohmann::json& metadata = {}) {
    io::write_file(path, encode_rbm(m));
    nlohmann::json meta = metadata.is_object() ? metadata : nlohmann::json::object();
    meta["format"] = "boltzdef-rbm";
    meta["version"] = kRbmVersion;
    meta["visible"] = m.num_visible();
    meta["hidden"] = m.num_hidden();
    std::ofstream out(sidecar_path(path));
    if (!out) throw IoError("cannot write " + sidecar_path(path).string());
    out << meta.dump(2) << '\n';
}

inline Rbm load_rbm(const std::filesystem::path& path) { return decode_rbm(io::read_file(path), path.string()); }

/// Sidecar metadata, or an empty object when the sidecar is absent.
inline nlohmann::json load_model_metadata(const std::filesystem::path& path) {
    std::ifstream in(sidecar_path(path));
    if (!in) return nlohmann::json::object();
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("bad metadata sidecar " + sidecar_path(path).string() + ": " + e.what());
    }
}

} // namespace boltzdef
