#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "boltzdef/data.hpp"
#include "boltzdef/error.hpp"
#include "boltzdef/rbm.hpp"
#include "boltzdef/samplers.hpp"

namespace boltzdef {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Moment accumulators for a flat parameter vector.
struct AdamState {
    Eigen::VectorXd first;
    Eigen::VectorXd second;
    std::int64_t step = 0;

    AdamState() = default;
    explicit AdamState(Eigen::Index n) : first(Eigen::VectorXd::Zero(n)), second(Eigen::VectorXd::Zero(n)) {}
};

/// Advances `state` by one step and returns the parameter delta
/// -lr * m_hat / (sqrt(v_hat) + eps).
inline Eigen::VectorXd adam_update(AdamState& state, const Eigen::VectorXd& grad, double lr,
                                   const AdamConfig& cfg = {}) {
    detail::require_dim(grad.size() == state.first.size() && grad.size() == state.second.size(),
                        "adam state does not match gradient size");
    detail::require_arg(lr > 0.0, "learning rate must be positive");
    ++state.step;
    state.first = cfg.beta1 * state.first + (1.0 - cfg.beta1) * grad;
    state.second = cfg.beta2 * state.second + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    const Eigen::ArrayXd m_hat = state.first.array() / c1;
    const Eigen::ArrayXd v_hat = state.second.array() / c2;
    return (-lr * m_hat / (v_hat.sqrt() + cfg.eps)).matrix();
}

/// Layout: weights (column-major), visible bias, hidden bias.
inline Eigen::VectorXd flatten(const RbmGradient& g) {
    Eigen::VectorXd out(g.weights.size() + g.visible_bias.size() + g.hidden_bias.size());
    out << Eigen::Map<const Eigen::VectorXd>(g.weights.data(), g.weights.size()), g.visible_bias, g.hidden_bias;
    return out;
}

inline void apply_delta(Rbm& m, const Eigen::VectorXd& delta) {
    const Eigen::Index nw = m.weights.size();
    const Eigen::Index nv = m.visible_bias.size();
    const Eigen::Index nh = m.hidden_bias.size();
    detail::require_dim(delta.size() == nw + nv + nh, "parameter delta size mismatch");
    Eigen::Map<Eigen::VectorXd>(m.weights.data(), nw) += delta.head(nw);
    m.visible_bias += delta.segment(nw, nv);
    m.hidden_bias += delta.tail(nh);
}

struct TrainConfig {
    std::size_t epochs = 100;
    std::size_t hidden = 40;
    std::size_t batch_size = 10;
    double learning_rate = 0.01;
    SamplerBackend backend;           // pcd, k = 50
    std::size_t bootstrap_epochs = 0; // epochs on `bootstrap_backend` before switching
    SamplerBackend bootstrap_backend; // pcd, k = 50
    std::size_t bootstrap_batch_size = 10;
    std::uint64_t seed = 1;
    AdamConfig adam;
    double init_std = 0.01;
    std::size_t checkpoint_every = 0;

    void validate() const {
        if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
        if (bootstrap_epochs > epochs) throw ConfigError("bootstrap_epochs exceeds epochs");
        if (batch_size < 1 || bootstrap_batch_size < 1) throw ConfigError("batch sizes must be at least 1");
        if (hidden < 1) throw ConfigError("hidden must be at least 1");
        if (backend.kind == BackendKind::annealer_sim) backend.annealer.validate();
    }

    nlohmann::json to_json() const {
        auto backend_json = [](const SamplerBackend& b) {
            return nlohmann::json{{"backend", b.label()},
                                  {"k", b.k},
                                  {"temperature", b.annealer.temperature},
                                  {"param_range", b.annealer.param_range},
                                  {"num_samples", b.annealer.num_samples},
                                  {"spin_reversals", b.annealer.num_spin_reversals},
                                  {"sweeps", b.annealer.sweeps}};
        };
        return {{"epochs", epochs},
                {"hidden", hidden},
                {"batch_size", batch_size},
                {"learning_rate", learning_rate},
                {"sampler", backend_json(backend)},
                {"bootstrap_epochs", bootstrap_epochs},
                {"bootstrap_sampler", backend_json(bootstrap_backend)},
                {"bootstrap_batch_size", bootstrap_batch_size},
                {"seed", seed},
                {"adam", {{"beta1", adam.beta1}, {"beta2", adam.beta2}, {"eps", adam.eps}}},
                {"init_std", init_std}};
    }
};

struct EpochRecord {
    std::size_t epoch = 0;
    double reconstruction_error = 0.0;
    double free_energy_gap = std::numeric_limits<double>::quiet_NaN(); // held-out minus train mean F
    double wall_seconds = 0.0;
    std::string backend;
    std::size_t sampler_warnings = 0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;

    /// Digest over the deterministic fields (wall time excluded).
    std::string digest() const {
        std::ostringstream os;
        os.precision(17);
        for (const auto& r : epochs) os << r.epoch << ' ' << r.backend << ' ' << r.reconstruction_error << ';';
        std::ostringstream hex;
        hex << std::hex << io::fnv1a(os.str());
        return hex.str();
    }
};

struct TrainResult {
    Rbm model;
    TrainHistory history;
};

struct TrainOptions {
    std::optional<Rbm> initial;                // continue from this model
    const Eigen::MatrixXd* heldout = nullptr;  // rows for the free-energy gap monitor
    std::function<void(const Rbm&, const EpochRecord&)> on_epoch;
};

namespace detail {

inline double reconstruction_error(const Rbm& m, const Eigen::MatrixXd& rows) {
    double err = 0.0;
    for (Eigen::Index r = 0; r < rows.rows(); ++r) {
        const Eigen::VectorXd x = rows.row(r).transpose();
        err += (visible_conditional(m, hidden_conditional(m, x)) - x).squaredNorm();
    }
    return err / static_cast<double>(rows.rows() * rows.cols());
}

inline double mean_free_energy(const Rbm& m, const Eigen::MatrixXd& rows) {
    double f = 0.0;
    for (Eigen::Index r = 0; r < rows.rows(); ++r) f += free_energy(m, rows.row(r).transpose());
    return f / static_cast<double>(rows.rows());
}

} // namespace detail

/// Maximum-likelihood training: per batch the positive phase comes from the
/// data, the negative phase from the active backend, and Adam applies the
/// resulting gradient. The first `bootstrap_epochs` epochs use the bootstrap
/// backend and batch size. Deterministic in cfg.seed.
inline TrainResult train(const TrainConfig& cfg, const Eigen::MatrixXd& data, const TrainOptions& opts = {}) {
    cfg.validate();
    if (data.rows() == 0) throw ConfigError("training set is empty");
    Rng rng(cfg.seed);
    TrainResult out;
    out.model = opts.initial ? *opts.initial
                             : Rbm::random(static_cast<std::size_t>(data.cols()), cfg.hidden, rng, cfg.init_std);
    Rbm& m = out.model;
    if (m.num_visible() != static_cast<std::size_t>(data.cols()))
        throw ConfigError("model visible size " + std::to_string(m.num_visible()) + " does not match data width " +
                          std::to_string(data.cols()));
    if (opts.heldout && opts.heldout->cols() != data.cols()) throw ConfigError("held-out width mismatch");

    const Eigen::MatrixXd monitor = data.topRows(std::min<Eigen::Index>(data.rows(), 500));
    AdamState adam(m.weights.size() + m.visible_bias.size() + m.hidden_bias.size());
    std::optional<NegativePhase> phase;
    bool in_bootstrap = false;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const bool bootstrap = epoch < cfg.bootstrap_epochs;
        if (!phase || bootstrap != in_bootstrap) {
            phase.emplace(bootstrap ? cfg.bootstrap_backend : cfg.backend);
            in_bootstrap = bootstrap;
        }
        const std::size_t bs = bootstrap ? cfg.bootstrap_batch_size : cfg.batch_size;
        std::size_t warnings = 0;
        for (const auto& idx : batches(static_cast<std::size_t>(data.rows()), bs,
                                       cfg.seed * 0x9E3779B97F4A7C15ULL + epoch)) {
            Eigen::MatrixXd batch(static_cast<Eigen::Index>(idx.size()), data.cols());
            for (std::size_t r = 0; r < idx.size(); ++r)
                batch.row(static_cast<Eigen::Index>(r)) = data.row(static_cast<Eigen::Index>(idx[r]));
            GradientEstimate stats{data_moments(m, batch), phase->estimate(m, batch, rng)};
            if (const auto* ar = phase->last_annealer_result(); ar && !ar->faithful()) ++warnings;
            apply_delta(m, adam_update(adam, flatten(loss_gradient(m, stats)), cfg.learning_rate, cfg.adam));
        }
        if (!m.finite()) throw Error("training diverged at epoch " + std::to_string(epoch));

        EpochRecord rec;
        rec.epoch = epoch;
        rec.backend = phase->backend().label();
        rec.sampler_warnings = warnings;
        rec.reconstruction_error = detail::reconstruction_error(m, monitor);
        if (opts.heldout && opts.heldout->rows() > 0)
            rec.free_energy_gap = detail::mean_free_energy(m, *opts.heldout) - detail::mean_free_energy(m, monitor);
        rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        out.history.epochs.push_back(rec);
        if (opts.on_epoch) opts.on_epoch(m, rec);
    }
    return out;
}

inline TrainResult train(const TrainConfig& cfg, const Dataset& ds, const TrainOptions& opts = {}) {
    return train(cfg, visible_matrix(ds), opts);
}

} // namespace boltzdef
