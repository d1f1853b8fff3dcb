#pragma once

// Negative-phase estimators: CD-k, persistent CD, exact enumeration and a
// classical annealer simulation that follows the hardware workflow (Ising
// mapping, temperature scaling with range clipping, spin-reversal gauges,
// one anneal per returned sample).

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "boltzdef/error.hpp"
#include "boltzdef/rbm.hpp"

namespace boltzdef {

using Rng = std::mt19937_64;

inline Eigen::VectorXd sample_bernoulli(const Eigen::VectorXd& p, Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Eigen::VectorXd out(p.size());
    for (Eigen::Index i = 0; i < p.size(); ++i) out[i] = u(rng) < p[i] ? 1.0 : 0.0;
    return out;
}

/// One block-Gibbs sweep: h ~ p(h|x), then x' ~ p(x|h).
inline Eigen::VectorXd gibbs_step(const Rbm& m, const Eigen::VectorXd& x, Rng& rng) {
    const Eigen::VectorXd h = sample_bernoulli(hidden_conditional(m, x), rng);
    return sample_bernoulli(visible_conditional(m, h), rng);
}

/// Persistent Markov chains, one RNG stream per chain.
struct ChainState {
    Eigen::MatrixXd visible; // n_chains x V, entries in {0,1}
    std::vector<Rng> rngs;

    std::size_t num_chains() const { return static_cast<std::size_t>(visible.rows()); }
    bool initialized() const { return visible.rows() > 0 && rngs.size() == num_chains(); }

    /// Chains start at the rows of `batch`; chain i draws from seed master ^ i.
    static ChainState from_batch(const Eigen::MatrixXd& batch, std::uint64_t master_seed) {
        ChainState s;
        s.visible = batch;
        s.rngs.reserve(static_cast<std::size_t>(batch.rows()));
        for (Eigen::Index i = 0; i < batch.rows(); ++i) s.rngs.emplace_back(master_seed ^ static_cast<std::uint64_t>(i));
        return s;
    }
};

namespace detail {

inline void advance_chains(const Rbm& m, ChainState& s, std::size_t k) {
    for (std::size_t c = 0; c < s.num_chains(); ++c) {
        const auto row = static_cast<Eigen::Index>(c);
        Eigen::VectorXd x = s.visible.row(row).transpose();
        for (std::size_t step = 0; step < k; ++step) x = gibbs_step(m, x, s.rngs[c]);
        s.visible.row(row) = x.transpose();
    }
}

} // namespace detail

/// CD-k: chains start at the batch rows; the negative phase is averaged over
/// the k-step endpoints (mean-field hidden statistics on both phases).
inline GradientEstimate cd_k(const Rbm& m, const Eigen::MatrixXd& batch, std::size_t k, Rng& rng) {
    detail::require_arg(batch.rows() > 0, "cd_k needs a nonempty batch");
    detail::require_arg(k >= 1, "cd_k needs k >= 1");
    detail::require_dim(static_cast<std::size_t>(batch.cols()) == m.num_visible(), "batch width mismatch");
    ChainState chains = ChainState::from_batch(batch, rng());
    detail::advance_chains(m, chains, k);
    return GradientEstimate{data_moments(m, batch), data_moments(m, chains.visible)};
}

struct PcdResult {
    Moments negative;
    ChainState state;
};

/// k Gibbs steps from the previous chain endpoints.
inline PcdResult pcd_step(const Rbm& m, ChainState state, std::size_t k) {
    if (!state.initialized()) throw StateError("pcd_step called with uninitialised chains");
    detail::require_arg(k >= 1, "pcd_step needs k >= 1");
    detail::require_dim(static_cast<std::size_t>(state.visible.cols()) == m.num_visible(), "chain width mismatch");
    detail::advance_chains(m, state, k);
    Moments neg = data_moments(m, state.visible);
    return PcdResult{std::move(neg), std::move(state)};
}

/// Exact <x>, <h>, <x h> under the model, enumerating x and summing h out.
inline Moments exact_model_moments(const Rbm& m) {
    m.check_shape();
    const std::size_t nv = m.num_visible();
    if (nv > kMaxEnumerableVisible) throw CapacityError("exact moments limited to 20 visible units");
    const std::uint64_t count = std::uint64_t{1} << nv;
    std::vector<double> neg_f(count);
    math::LogSumExp lse;
    Eigen::VectorXd x(static_cast<Eigen::Index>(nv));
    auto decode = [&](std::uint64_t mask) {
        for (std::size_t i = 0; i < nv; ++i) x[static_cast<Eigen::Index>(i)] = (mask >> i) & 1U;
    };
    for (std::uint64_t mask = 0; mask < count; ++mask) {
        decode(mask);
        neg_f[mask] = -free_energy(m, x);
        lse.add(neg_f[mask]);
    }
    const double log_z = lse.value();
    Moments out;
    out.v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(nv));
    out.h = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.num_hidden()));
    out.vh = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(nv), static_cast<Eigen::Index>(m.num_hidden()));
    for (std::uint64_t mask = 0; mask < count; ++mask) {
        decode(mask);
        const double p = std::exp(neg_f[mask] - log_z);
        const Eigen::VectorXd ph = hidden_conditional(m, x);
        out.v += p * x;
        out.h += p * ph;
        out.vh += p * x * ph.transpose();
    }
    out.count = 1;
    return out;
}

// ---------------------------------------------------------------------------
// Ising form. With x = (1 + s)/2 the binary energy becomes
//   E(x, h) = sum_i f_i s_i + sum_{i<j} J_ij s_i s_j + offset
// where spins [0, num_visible) play the visible role and the rest hidden.
// ---------------------------------------------------------------------------
struct IsingModel {
    std::size_t num_visible = 0;
    Eigen::VectorXd fields;
    std::map<std::pair<std::size_t, std::size_t>, double> couplings; // keys ordered i < j
    double offset = 0.0;

    std::size_t num_spins() const { return static_cast<std::size_t>(fields.size()); }

    void set_coupling(std::size_t i, std::size_t j, double value) {
        if (i > j) std::swap(i, j);
        couplings[{i, j}] = value;
    }

    double coupling(std::size_t i, std::size_t j) const {
        if (i > j) std::swap(i, j);
        const auto it = couplings.find({i, j});
        return it == couplings.end() ? 0.0 : it->second;
    }

    /// Hamiltonian without the constant offset.
    double energy(const Eigen::VectorXd& spins) const {
        detail::require_dim(static_cast<std::size_t>(spins.size()) == num_spins(), "spin vector length mismatch");
        double e = fields.dot(spins);
        for (const auto& [ij, value] : couplings)
            e += value * spins[static_cast<Eigen::Index>(ij.first)] * spins[static_cast<Eigen::Index>(ij.second)];
        return e;
    }
};

inline Eigen::VectorXd binary_to_spin(const Eigen::VectorXd& x) { return (2.0 * x.array() - 1.0).matrix(); }
inline Eigen::VectorXd spin_to_binary(const Eigen::VectorXd& s) { return ((s.array() + 1.0) / 2.0).matrix(); }

inline IsingModel to_ising(const Rbm& m) {
    m.check_shape();
    const auto nv = static_cast<Eigen::Index>(m.num_visible());
    const auto nh = static_cast<Eigen::Index>(m.num_hidden());
    IsingModel im;
    im.num_visible = m.num_visible();
    im.fields.resize(nv + nh);
    im.fields.head(nv) = -m.visible_bias / 2.0 - m.weights.rowwise().sum() / 4.0;
    im.fields.tail(nh) = -m.hidden_bias / 2.0 - m.weights.colwise().sum().transpose() / 4.0;
    for (Eigen::Index i = 0; i < nv; ++i)
        for (Eigen::Index j = 0; j < nh; ++j)
            im.couplings[{static_cast<std::size_t>(i), static_cast<std::size_t>(nv + j)}] = -m.weights(i, j) / 4.0;
    im.offset = -m.visible_bias.sum() / 2.0 - m.hidden_bias.sum() / 2.0 - m.weights.sum() / 4.0;
    return im;
}

inline Rbm from_ising(const IsingModel& im) {
    const std::size_t n = im.num_spins();
    if (im.num_visible > n) throw StructureError("num_visible exceeds spin count");
    const std::size_t nv = im.num_visible;
    Rbm m(nv, n - nv);
    for (const auto& [ij, value] : im.couplings) {
        const auto [i, j] = ij;
        if (i == j) throw StructureError("self-coupling on spin " + std::to_string(i));
        if (j >= n) throw StructureError("coupling references a missing spin");
        if (!(i < nv && j >= nv)) throw StructureError("coupling between two spins of the same layer");
        m.weights(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j - nv)) = -4.0 * value;
    }
    const auto v = static_cast<Eigen::Index>(nv);
    m.visible_bias = -2.0 * im.fields.head(v) - m.weights.rowwise().sum() / 2.0;
    m.hidden_bias = -2.0 * im.fields.tail(static_cast<Eigen::Index>(n - nv)) - m.weights.colwise().sum().transpose() / 2.0;
    return m;
}

/// Gauge transform: flipped spins negate their field and every coupling with
/// exactly one flipped endpoint. An empty mask is the identity.
inline IsingModel spin_reversal_transform(const IsingModel& im, const std::vector<int>& flip_mask) {
    if (flip_mask.empty()) return im;
    detail::require_dim(flip_mask.size() == im.num_spins(), "flip mask length mismatch");
    IsingModel out = im;
    for (std::size_t i = 0; i < flip_mask.size(); ++i)
        if (flip_mask[i]) out.fields[static_cast<Eigen::Index>(i)] = -out.fields[static_cast<Eigen::Index>(i)];
    for (auto& [ij, value] : out.couplings)
        if ((flip_mask[ij.first] != 0) != (flip_mask[ij.second] != 0)) value = -value;
    return out;
}

struct AnnealerConfig {
    double temperature = 1.0;       // parameters are multiplied by 1/temperature
    double param_range = 1.0;       // post-scaling clip bound [-r, r]
    std::size_t num_samples = 500;
    std::size_t num_spin_reversals = 5;
    std::size_t sweeps = 10;        // Gibbs sweeps per temperature rung
    std::size_t rungs = 20;
    double hot_temperature = 10.0;

    void validate() const {
        if (!(temperature > 0.0)) throw ConfigError("annealer temperature must be positive");
        if (!(param_range > 0.0)) throw ConfigError("annealer param_range must be positive");
        if (num_samples < 1) throw ConfigError("annealer num_samples must be at least 1");
        if (num_spin_reversals < 1) throw ConfigError("annealer spin_reversals must be at least 1");
        if (sweeps < 1 || rungs < 1) throw ConfigError("annealer sweeps and rungs must be at least 1");
        if (!(hot_temperature >= 1.0)) throw ConfigError("annealer hot temperature must be >= 1");
    }
};

struct AnnealerResult {
    Eigen::MatrixXd visible;      // num_samples x V, binary
    Eigen::MatrixXd hidden;       // num_samples x H, binary
    Moments moments;              // raw sample averages
    double scale = 1.0;           // multiplier applied before clipping
    std::size_t clipped = 0;      // parameters touched by clipping
    double max_clip_fraction = 0; // largest relative change due to clipping
    std::vector<std::string> warnings;

    bool faithful() const { return warnings.empty(); }
};

namespace detail {

/// Dense bipartite view of an Ising model, used by the sweep kernel.
struct DenseIsing {
    Eigen::VectorXd fv, fh;
    Eigen::MatrixXd j; // V x H

    explicit DenseIsing(const IsingModel& im) {
        const auto nv = static_cast<Eigen::Index>(im.num_visible);
        const auto nh = static_cast<Eigen::Index>(im.num_spins()) - nv;
        fv = im.fields.head(nv);
        fh = im.fields.tail(nh);
        j = Eigen::MatrixXd::Zero(nv, nh);
        for (const auto& [ij, value] : im.couplings) {
            if (!(ij.first < im.num_visible && ij.second >= im.num_visible))
                throw StructureError("annealer requires a bipartite Ising model");
            j(static_cast<Eigen::Index>(ij.first), static_cast<Eigen::Index>(ij.second) - nv) = value;
        }
    }
};

/// Heat-bath update of one layer at inverse temperature beta:
/// P(s = +1) = sigmoid(-2 beta local_field).
inline void heat_bath(Eigen::VectorXd& spins, const Eigen::VectorXd& local, double beta, Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (Eigen::Index i = 0; i < spins.size(); ++i)
        spins[i] = u(rng) < math::sigmoid(-2.0 * beta * local[i]) ? 1.0 : -1.0;
}

inline std::vector<double> temperature_ladder(const AnnealerConfig& cfg) {
    std::vector<double> ladder(cfg.rungs);
    for (std::size_t r = 0; r < cfg.rungs; ++r) {
        const double t = cfg.rungs == 1 ? 1.0 : static_cast<double>(r) / static_cast<double>(cfg.rungs - 1);
        ladder[r] = cfg.hot_temperature * std::pow(1.0 / cfg.hot_temperature, t);
    }
    ladder.back() = 1.0;
    return ladder;
}

} // namespace detail

/// Samples the thermal distribution of `m` through its Ising form. The
/// parameters are scaled by 1/T and clipped to the configured range (clipping
/// is counted, and more than 50% relative change on any parameter produces a
/// warning). Samples are split across spin-reversal gauges; each sample is an
/// independent anneal down a geometric ladder ending at unit temperature,
/// and is pulled back through its gauge before being returned.
inline AnnealerResult annealer_sample(const Rbm& m, const AnnealerConfig& cfg, Rng& rng) {
    cfg.validate();
    AnnealerResult res;
    IsingModel im = to_ising(m);
    res.scale = 1.0 / cfg.temperature;
    auto clip = [&](double& value) {
        value *= res.scale;
        if (std::abs(value) > cfg.param_range) {
            const double clipped = std::copysign(cfg.param_range, value);
            res.max_clip_fraction = std::max(res.max_clip_fraction, std::abs(value - clipped) / std::abs(value));
            value = clipped;
            ++res.clipped;
        }
    };
    for (Eigen::Index i = 0; i < im.fields.size(); ++i) clip(im.fields[i]);
    for (auto& [ij, value] : im.couplings) clip(value);
    im.offset *= res.scale;
    if (res.max_clip_fraction > 0.5) {
        res.warnings.push_back("clipping changed a parameter by " + std::to_string(100.0 * res.max_clip_fraction) +
                               "%; samples no longer follow the model distribution");
    }

    const std::size_t n = im.num_spins();
    const auto nv = static_cast<Eigen::Index>(m.num_visible());
    const auto nh = static_cast<Eigen::Index>(m.num_hidden());
    const auto ladder = detail::temperature_ladder(cfg);
    res.visible.resize(static_cast<Eigen::Index>(cfg.num_samples), nv);
    res.hidden.resize(static_cast<Eigen::Index>(cfg.num_samples), nh);

    std::size_t row = 0;
    for (std::size_t g = 0; g < cfg.num_spin_reversals; ++g) {
        const std::size_t share =
            cfg.num_samples / cfg.num_spin_reversals + (g < cfg.num_samples % cfg.num_spin_reversals ? 1 : 0);
        std::vector<int> mask(n);
        std::bernoulli_distribution coin(0.5);
        for (auto& bit : mask) bit = coin(rng) ? 1 : 0;
        const detail::DenseIsing gauge(spin_reversal_transform(im, mask));
        Rng stream(rng());
        std::bernoulli_distribution start(0.5);
        for (std::size_t s = 0; s < share; ++s, ++row) {
            Eigen::VectorXd sv(nv), sh(nh);
            for (Eigen::Index i = 0; i < nv; ++i) sv[i] = start(stream) ? 1.0 : -1.0;
            for (Eigen::Index j = 0; j < nh; ++j) sh[j] = start(stream) ? 1.0 : -1.0;
            for (double temp : ladder) {
                const double beta = 1.0 / temp;
                for (std::size_t sweep = 0; sweep < cfg.sweeps; ++sweep) {
                    detail::heat_bath(sv, gauge.fv + gauge.j * sh, beta, stream);
                    detail::heat_bath(sh, gauge.fh + gauge.j.transpose() * sv, beta, stream);
                }
            }
            for (Eigen::Index i = 0; i < nv; ++i)
                if (mask[static_cast<std::size_t>(i)]) sv[i] = -sv[i];
            for (Eigen::Index j = 0; j < nh; ++j)
                if (mask[static_cast<std::size_t>(nv + j)]) sh[j] = -sh[j];
            res.visible.row(static_cast<Eigen::Index>(row)) = spin_to_binary(sv).transpose();
            res.hidden.row(static_cast<Eigen::Index>(row)) = spin_to_binary(sh).transpose();
        }
    }

    const double count = static_cast<double>(cfg.num_samples);
    res.moments.v = res.visible.colwise().sum().transpose() / count;
    res.moments.h = res.hidden.colwise().sum().transpose() / count;
    res.moments.vh = res.visible.transpose() * res.hidden / count;
    res.moments.count = cfg.num_samples;
    return res;
}

// ---------------------------------------------------------------------------
// Backend selection (config key `sampler.backend`).
// ---------------------------------------------------------------------------
enum class BackendKind { cd, pcd, exact, annealer_sim };

inline std::string to_string(BackendKind k) {
    switch (k) {
    case BackendKind::cd: return "cd";
    case BackendKind::pcd: return "pcd";
    case BackendKind::exact: return "exact";
    case BackendKind::annealer_sim: return "annealer_sim";
    }
    return "unknown";
}

inline BackendKind parse_backend(const std::string& s) {
    if (s == "cd") return BackendKind::cd;
    if (s == "pcd") return BackendKind::pcd;
    if (s == "exact") return BackendKind::exact;
    if (s == "annealer_sim") return BackendKind::annealer_sim;
    throw ConfigError("unknown sampler backend '" + s + "'");
}

struct SamplerBackend {
    BackendKind kind = BackendKind::pcd;
    std::size_t k = 50;
    AnnealerConfig annealer;

    std::string label() const { return to_string(kind); }
};

/// Stateful negative-phase source for training. Holds the persistent chains
/// for PCD and the clipping diagnostics of the last annealer call.
class NegativePhase {
public:
    explicit NegativePhase(SamplerBackend backend) : backend_(std::move(backend)) {}

    const SamplerBackend& backend() const { return backend_; }
    const AnnealerResult* last_annealer_result() const { return has_annealer_ ? &last_annealer_ : nullptr; }

    Moments estimate(const Rbm& m, const Eigen::MatrixXd& batch, Rng& rng) {
        switch (backend_.kind) {
        case BackendKind::cd: return cd_k(m, batch, backend_.k, rng).negative;
        case BackendKind::pcd: {
            if (!chains_.initialized()) chains_ = ChainState::from_batch(batch, rng());
            auto r = pcd_step(m, std::move(chains_), backend_.k);
            chains_ = std::move(r.state);
            return std::move(r.negative);
        }
        case BackendKind::exact: return exact_model_moments(m);
        case BackendKind::annealer_sim: {
            last_annealer_ = annealer_sample(m, backend_.annealer, rng);
            has_annealer_ = true;
            return last_annealer_.moments;
        }
        }
        throw ConfigError("unhandled sampler backend");
    }

private:
    SamplerBackend backend_;
    ChainState chains_;
    AnnealerResult last_annealer_;
    bool has_annealer_ = false;
};

} // namespace boltzdef
