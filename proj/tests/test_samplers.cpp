#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "boltzdef/samplers.hpp"
#include "oracles.hpp"

using namespace boltzdef;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

Eigen::VectorXd binary(std::uint64_t mask, std::size_t n) { return oracle::to_eigen(oracle::bits(mask, n)); }

double moment_error(const Moments& est, const oracle::JointMoments& exact) {
    double e = 0.0;
    for (Eigen::Index i = 0; i < est.v.size(); ++i) e += std::abs(est.v[i] - exact.v[std::size_t(i)]);
    for (Eigen::Index j = 0; j < est.h.size(); ++j) e += std::abs(est.h[j] - exact.h[std::size_t(j)]);
    for (Eigen::Index i = 0; i < est.vh.rows(); ++i)
        for (Eigen::Index j = 0; j < est.vh.cols(); ++j) e += std::abs(est.vh(i, j) - exact.vh[std::size_t(i)][std::size_t(j)]);
    return e / double(est.v.size() + est.h.size() + est.vh.size());
}

/// |estimate - p| within `k` binomial standard errors for n samples.
bool within_se(double estimate, double p, double n, double k = 3.0) {
    const double se = std::sqrt(std::max(p * (1.0 - p), 1e-12) / n);
    return std::abs(estimate - p) <= k * se;
}

Rbm model_4x2() {
    Rbm m(4, 2);
    m.weights << 0.9, -0.6, -0.4, 0.8, 0.5, 0.3, -0.7, -0.2;
    m.visible_bias << -0.3, 0.2, 0.1, -0.1;
    m.hidden_bias << 0.25, -0.4;
    return m;
}

SamplerBackend backend(BackendKind kind, std::size_t k = 50) {
    SamplerBackend b;
    b.kind = kind;
    b.k = k;
    return b;
}

} // namespace

TEST_CASE("gibbs step", "[samplers]") {
    Rng rng(1);
    SECTION("uniform law on the zero model") {
        const Rbm zero(6, 3);
        Eigen::VectorXd x = Eigen::VectorXd::Zero(6), sum = Eigen::VectorXd::Zero(6);
        for (int t = 0; t < 10000; ++t) sum += (x = gibbs_step(zero, x, rng));
        sum /= 10000.0;
        CHECK(sum.minCoeff() >= 0.48);
        CHECK(sum.maxCoeff() <= 0.52);
    }
    SECTION("saturated biases") {
        Rbm m(5, 2);
        m.visible_bias.setConstant(30.0);
        for (int t = 0; t < 100; ++t) CHECK(gibbs_step(m, Eigen::VectorXd::Zero(5), rng) == Eigen::VectorXd::Ones(5));
    }
    SECTION("endpoint marginals match enumeration") {
        const Rbm m = model_4x2();
        const auto exact = oracle::joint_moments(oracle::plain(m));
        const int chains = 8000;
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(4);
        for (int c = 0; c < chains; ++c) {
            Eigen::VectorXd x = Eigen::VectorXd::Zero(4);
            for (int t = 0; t < 30; ++t) x = gibbs_step(m, x, rng);
            sum += x;
        }
        for (int i = 0; i < 4; ++i) CHECK(within_se(sum[i] / chains, exact.v[std::size_t(i)], chains));
    }
    CHECK_THROWS_AS(gibbs_step(Rbm(3, 2), Eigen::VectorXd::Zero(2), rng), DimensionError);
}

TEST_CASE("cd_k", "[samplers]") {
    Rng rng(2);
    SECTION("zero model negative phase is centred on one half") {
        const Rbm zero(8, 3);
        Eigen::MatrixXd batch = Eigen::MatrixXd::Ones(50, 8);
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(8);
        for (int t = 0; t < 100; ++t) sum += cd_k(zero, batch, 1, rng).negative.v;
        sum /= 100.0;
        CHECK(sum.minCoeff() >= 0.48);
        CHECK(sum.maxCoeff() <= 0.52);
    }
    SECTION("positive visible moments are the batch column means") {
        std::mt19937_64 g(3);
        const Rbm m = oracle::random_rbm(5, 3, g);
        Eigen::MatrixXd batch(4, 5);
        batch << 1, 0, 1, 1, 0, 0, 0, 1, 1, 1, 1, 1, 1, 0, 0, 0, 1, 0, 1, 0;
        const auto est = cd_k(m, batch, 3, rng);
        CHECK(est.positive.v == Eigen::VectorXd(batch.colwise().mean().transpose()));
        CHECK(est.positive.count == 4);
    }
    SECTION("negative moments converge as k grows") {
        Rbm m = model_4x2();
        m.weights *= 2.5;
        const auto exact = oracle::joint_moments(oracle::plain(m));
        const Eigen::MatrixXd batch = Eigen::MatrixXd::Zero(400, 4);
        double err[3] = {0, 0, 0};
        const std::size_t ks[3] = {1, 10, 100};
        for (int seed = 0; seed < 50; ++seed) {
            for (int a = 0; a < 3; ++a) {
                Rng r(std::uint64_t(seed * 7 + a));
                err[a] += moment_error(cd_k(m, batch, ks[a], r).negative, exact) / 50.0;
            }
        }
        CHECK(err[0] > err[1]);
        CHECK(err[1] > err[2]);
    }
    CHECK_THROWS_AS(cd_k(Rbm(3, 2), Eigen::MatrixXd(0, 3), 1, rng), ArgumentError);
    CHECK_THROWS_AS(cd_k(Rbm(3, 2), Eigen::MatrixXd::Zero(2, 3), 0, rng), ArgumentError);
}

TEST_CASE("pcd_step", "[samplers]") {
    const Rbm zero(6, 3);
    ChainState uninit;
    CHECK_THROWS_AS(pcd_step(zero, uninit, 1), StateError);

    ChainState s = ChainState::from_batch(Eigen::MatrixXd::Zero(10, 6), 42);
    CHECK_THROWS_AS(pcd_step(zero, s, 0), ArgumentError);

    Eigen::VectorXd sum = Eigen::VectorXd::Zero(6);
    for (int t = 0; t < 1000; ++t) {
        auto r = pcd_step(zero, std::move(s), 1);
        s = std::move(r.state);
        CHECK(s.num_chains() == 10);
        sum += s.visible.colwise().mean().transpose();
    }
    sum /= 1000.0;
    CHECK(sum.minCoeff() >= 0.48);
    CHECK(sum.maxCoeff() <= 0.52);
    CHECK(((s.visible.array() == 0.0) || (s.visible.array() == 1.0)).all());
}

TEST_CASE("pcd chains persist across calls", "[samplers]") {
    const Rbm m = model_4x2();
    const ChainState start = ChainState::from_batch(Eigen::MatrixXd::Zero(10, 4), 42);
    const auto twice = pcd_step(m, pcd_step(m, start, 3).state, 4);
    const auto once = pcd_step(m, start, 7);
    CHECK(twice.state.visible == once.state.visible);
    CHECK(twice.negative.v == once.negative.v);
}

TEST_CASE("exact model moments", "[samplers]") {
    const auto z = exact_model_moments(Rbm(4, 3));
    CHECK((z.v.array() - 0.5).abs().maxCoeff() < 1e-15);
    CHECK((z.h.array() - 0.5).abs().maxCoeff() < 1e-15);
    CHECK((z.vh.array() - 0.25).abs().maxCoeff() < 1e-15);

    Rbm unit(1, 1);
    unit.visible_bias[0] = 1.0;
    unit.weights(0, 0) = 1.0;
    const double e = std::exp(1.0);
    CHECK_THAT(exact_model_moments(unit).v[0], WithinRel((e + e * e) / (2 + e + e * e), 1e-13));
    CHECK_THAT(exact_model_moments(unit).v[0], WithinAbs(0.8348, 1e-4));

    std::mt19937_64 g(4);
    for (int t = 0; t < 3; ++t) {
        const Rbm m = oracle::random_rbm(5, 3, g);
        const auto got = exact_model_moments(m);
        const auto want = oracle::joint_moments(oracle::plain(m));
        CHECK(moment_error(got, want) < 1e-12);
    }
    CHECK_THROWS_AS(exact_model_moments(Rbm(21, 1)), CapacityError);
}

TEST_CASE("ising mapping", "[samplers][ising]") {
    SECTION("zero model") {
        const auto im = to_ising(Rbm(3, 2));
        CHECK(im.fields.isZero());
        for (const auto& [ij, v] : im.couplings) CHECK(v == 0.0);
        CHECK(im.offset == 0.0);
    }
    SECTION("round trip") {
        std::mt19937_64 g(5);
        const Rbm m = oracle::random_rbm(6, 4, g);
        const Rbm back = from_ising(to_ising(m));
        CHECK((back.weights - m.weights).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((back.visible_bias - m.visible_bias).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((back.hidden_bias - m.hidden_bias).cwiseAbs().maxCoeff() < 1e-12);
    }
    SECTION("energies and gaps agree on every configuration") {
        std::mt19937_64 g(6);
        const Rbm m = oracle::random_rbm(4, 3, g);
        const auto im = to_ising(m);
        const auto p = oracle::plain(m);
        std::vector<double> e(128), hs(128);
        for (std::uint64_t c = 0; c < 128; ++c) {
            const auto x = oracle::bits(c & 15U, 4), h = oracle::bits(c >> 4, 3);
            e[c] = oracle::energy(p, x, h);
            Eigen::VectorXd s(7);
            for (int i = 0; i < 4; ++i) s[i] = 2.0 * x[std::size_t(i)] - 1.0;
            for (int j = 0; j < 3; ++j) s[4 + j] = 2.0 * h[std::size_t(j)] - 1.0;
            hs[c] = im.energy(s);
            CHECK_THAT(hs[c] + im.offset, WithinAbs(e[c], 1e-10));
        }
        for (std::size_t a = 0; a < 128; ++a)
            for (std::size_t b = 0; b < 128; ++b) CHECK(std::abs((e[a] - e[b]) - (hs[a] - hs[b])) < 1e-10);
    }
    SECTION("couplings are bipartite") {
        const auto im = to_ising(Rbm(3, 2));
        for (const auto& [ij, v] : im.couplings) {
            CHECK(ij.first < 3);
            CHECK(ij.second >= 3);
        }
    }
    SECTION("structure errors") {
        IsingModel im = to_ising(Rbm(2, 2));
        IsingModel same = im;
        same.set_coupling(0, 1, 0.3);
        CHECK_THROWS_AS(from_ising(same), StructureError);
        IsingModel self = im;
        self.couplings[{2, 2}] = 0.1;
        CHECK_THROWS_AS(from_ising(self), StructureError);
    }
    CHECK(binary_to_spin(binary(5, 3)) == Eigen::Vector3d(1, -1, 1));
    CHECK(spin_to_binary(Eigen::Vector3d(1, -1, 1)) == binary(5, 3));
}

TEST_CASE("spin reversal transform", "[samplers][ising]") {
    std::mt19937_64 g(7);
    const Rbm m = oracle::random_rbm(3, 3, g);
    const IsingModel im = to_ising(m);
    const auto same = [](const IsingModel& a, const IsingModel& b) {
        return a.fields == b.fields && a.couplings == b.couplings && a.offset == b.offset;
    };
    CHECK(same(spin_reversal_transform(im, {}), im));
    const std::vector<int> mask{1, 0, 1, 1, 0, 0};
    CHECK(same(spin_reversal_transform(spin_reversal_transform(im, mask), mask), im));
    CHECK_THROWS_AS(spin_reversal_transform(im, {1, 0}), DimensionError);

    const IsingModel gauged = spin_reversal_transform(im, mask);
    const auto original = oracle::spin_distribution(6, [&](const Eigen::VectorXd& s) { return im.energy(s); });
    const auto transformed = oracle::spin_distribution(6, [&](const Eigen::VectorXd& s) { return gauged.energy(s); });
    for (std::uint64_t c = 0; c < 64; ++c) {
        std::uint64_t pulled = c;
        for (std::size_t i = 0; i < 6; ++i)
            if (mask[i]) pulled ^= (std::uint64_t{1} << i);
        CHECK_THAT(transformed[pulled], WithinRel(original[c], 1e-12));
    }

    // Every mask on a 10-spin model is an involution that preserves energies
    // of correspondingly flipped configurations.
    const IsingModel big = to_ising(oracle::random_rbm(5, 5, g));
    for (int t = 0; t < 20; ++t) {
        std::vector<int> mk(10);
        for (auto& b : mk) b = int(g() & 1U);
        const IsingModel tr = spin_reversal_transform(big, mk);
        CHECK(same(spin_reversal_transform(tr, mk), big));
        Eigen::VectorXd s(10);
        for (auto& v : s) v = (g() & 1U) ? 1.0 : -1.0;
        Eigen::VectorXd flipped = s;
        for (int i = 0; i < 10; ++i)
            if (mk[std::size_t(i)]) flipped[i] = -flipped[i];
        CHECK_THAT(tr.energy(flipped), WithinAbs(big.energy(s), 1e-12));
    }
}

TEST_CASE("scaling by 1/T equals sampling at temperature T", "[samplers][ising]") {
    std::mt19937_64 g(8);
    const Rbm m = oracle::random_rbm(4, 4, g);
    const IsingModel im = to_ising(m);
    for (double temp : {0.5, 2.0, 5.0}) {
        IsingModel scaled = im;
        scaled.fields /= temp;
        for (auto& [ij, v] : scaled.couplings) v /= temp;
        const auto a = oracle::spin_distribution(8, [&](const Eigen::VectorXd& s) { return scaled.energy(s); }, 1.0);
        const auto b = oracle::spin_distribution(8, [&](const Eigen::VectorXd& s) { return im.energy(s); }, 1.0 / temp);
        for (std::size_t c = 0; c < a.size(); ++c) CHECK_THAT(a[c], WithinRel(b[c], 1e-10));
    }
}

TEST_CASE("annealer_sample", "[samplers][annealer]") {
    Rng rng(9);
    SECTION("zero model is uniform") {
        AnnealerConfig cfg;
        cfg.num_samples = 10000;
        const auto r = annealer_sample(Rbm(6, 3), cfg, rng);
        CHECK(r.visible.rows() == 10000);
        const Eigen::VectorXd means = r.visible.colwise().mean().transpose();
        CHECK(means.minCoeff() >= 0.48);
        CHECK(means.maxCoeff() <= 0.52);
        CHECK(r.faithful());
        CHECK(r.clipped == 0);
    }
    SECTION("moments within three standard errors of the exact law") {
        const Rbm m = model_4x2();
        const auto exact = oracle::joint_moments(oracle::plain(m));
        AnnealerConfig cfg;
        cfg.num_samples = 20000;
        cfg.param_range = 10.0;
        const auto r = annealer_sample(m, cfg, rng);
        CHECK(r.faithful());
        const double n = double(cfg.num_samples);
        for (int i = 0; i < 4; ++i) CHECK(within_se(r.moments.v[i], exact.v[std::size_t(i)], n));
        for (int j = 0; j < 2; ++j) CHECK(within_se(r.moments.h[j], exact.h[std::size_t(j)], n));
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 2; ++j) CHECK(within_se(r.moments.vh(i, j), exact.vh[std::size_t(i)][std::size_t(j)], n));
        CHECK(((r.visible.array() == 0.0) || (r.visible.array() == 1.0)).all());
    }
    SECTION("temperature rescales the sampled law") {
        const Rbm m = model_4x2();
        Rbm cooled = m;
        cooled.weights /= 2.0;
        cooled.visible_bias /= 2.0;
        cooled.hidden_bias /= 2.0;
        const auto exact = oracle::joint_moments(oracle::plain(cooled));
        AnnealerConfig cfg;
        cfg.temperature = 2.0;
        cfg.num_samples = 20000;
        cfg.param_range = 10.0;
        const auto r = annealer_sample(m, cfg, rng);
        CHECK(r.scale == 0.5);
        for (int i = 0; i < 4; ++i) CHECK(within_se(r.moments.v[i], exact.v[std::size_t(i)], 20000.0));
    }
    SECTION("gauge count does not change the law") {
        const Rbm m = model_4x2();
        AnnealerConfig one, five;
        one.num_spin_reversals = 1;
        one.num_samples = five.num_samples = 10000;
        one.param_range = five.param_range = 10.0;
        const auto a = annealer_sample(m, one, rng);
        const auto b = annealer_sample(m, five, rng);
        for (int i = 0; i < 4; ++i) {
            const double pa = a.moments.v[i], pb = b.moments.v[i];
            const double pooled = (pa + pb) / 2.0;
            const double z = (pa - pb) / std::sqrt(pooled * (1 - pooled) * (2.0 / 10000.0));
            CHECK(std::abs(z) < 2.5758); // two-sided alpha = 0.01
        }
    }
    SECTION("heavy clipping is reported") {
        Rbm m(3, 2);
        m.weights.setConstant(12.0);
        const auto r = annealer_sample(m, AnnealerConfig{.num_samples = 20}, rng);
        CHECK(r.clipped > 0);
        CHECK(r.max_clip_fraction > 0.5);
        CHECK_FALSE(r.faithful());
        Rbm mild(3, 2);
        mild.weights.setConstant(5.0); // couplings 1.25 clip by 20%, fields cancel to 0
        mild.visible_bias.setConstant(-5.0);
        mild.hidden_bias.setConstant(-7.5);
        const auto q = annealer_sample(mild, AnnealerConfig{.num_samples = 20}, rng);
        CHECK(q.clipped > 0);
        CHECK(q.faithful());
    }
    SECTION("invalid configs") {
        CHECK_THROWS_AS(annealer_sample(Rbm(2, 2), AnnealerConfig{.temperature = 0.0}, rng), ConfigError);
        CHECK_THROWS_AS(annealer_sample(Rbm(2, 2), AnnealerConfig{.param_range = -1.0}, rng), ConfigError);
        CHECK_THROWS_AS(annealer_sample(Rbm(2, 2), AnnealerConfig{.num_samples = 0}, rng), ConfigError);
    }
}

TEST_CASE("annealer error follows Monte Carlo scaling", "[samplers][annealer][property]") {
    const Rbm m = model_4x2();
    const auto exact = oracle::joint_moments(oracle::plain(m));
    const auto err_at = [&](std::size_t n) {
        double e = 0.0;
        for (int seed = 0; seed < 20; ++seed) {
            Rng r(std::uint64_t(100 + seed));
            AnnealerConfig cfg;
            cfg.num_samples = n;
            cfg.param_range = 10.0;
            e += moment_error(annealer_sample(m, cfg, r).moments, exact) / 20.0;
        }
        return e;
    };
    // 16x more samples should cut the error by about 4x.
    const double ratio = err_at(250) / err_at(4000);
    CHECK(ratio > 2.5);
    CHECK(ratio < 6.5);
}

TEST_CASE("negative phase backends", "[samplers]") {
    CHECK(parse_backend("pcd") == BackendKind::pcd);
    CHECK(parse_backend("annealer_sim") == BackendKind::annealer_sim);
    CHECK(to_string(BackendKind::exact) == "exact");
    CHECK_THROWS_AS(parse_backend("quantum"), ConfigError);

    const Rbm m = model_4x2();
    Rng rng(10);
    const Eigen::MatrixXd batch = Eigen::MatrixXd::Zero(10, 4);
    NegativePhase exact(backend(BackendKind::exact));
    const auto want = oracle::joint_moments(oracle::plain(m));
    CHECK(moment_error(exact.estimate(m, batch, rng), want) < 1e-12);
    CHECK(exact.last_annealer_result() == nullptr);

    NegativePhase ann(SamplerBackend{BackendKind::annealer_sim, 1, AnnealerConfig{.num_samples = 50}});
    CHECK(ann.estimate(m, batch, rng).count == 50);
    REQUIRE(ann.last_annealer_result() != nullptr);
    CHECK(ann.last_annealer_result()->visible.rows() == 50);

    NegativePhase cd(backend(BackendKind::cd, 1));
    CHECK(cd.estimate(m, batch, rng).count == 10);
    NegativePhase pcd(backend(BackendKind::pcd, 2));
    CHECK(pcd.estimate(m, batch, rng).count == 10);
    CHECK(pcd.estimate(m, Eigen::MatrixXd::Ones(3, 4), rng).count == 10); // chains persist at batch-size 10
}
