#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "lifelong/ifa.hpp"
#include "oracles.hpp"

using namespace lifelong;
using namespace lifelong::ifa;

namespace {

Embedding vec(std::initializer_list<float> xs) {
    Embedding v(static_cast<Eigen::Index>(xs.size()));
    Eigen::Index i = 0;
    for (float x : xs) v(i++) = x;
    return v;
}

std::map<int, TaskModalityLatents> random_latents(const std::vector<int>& ids, int dim, std::mt19937_64& rng) {
    std::map<int, TaskModalityLatents> out;
    std::uniform_int_distribution<int> count(1, 5);
    for (int id : ids) {
        auto& t = out[id];
        for (int i = count(rng); i > 0; --i) t.agent_view.push_back(oracle::gaussian(dim, rng));
        t.language.push_back(oracle::gaussian(dim, rng));
    }
    return out;
}

Eigen::MatrixXd as_matrix(std::initializer_list<Embedding> cols) {
    Eigen::MatrixXd m(cols.begin()->size(), static_cast<Eigen::Index>(cols.size()));
    Eigen::Index j = 0;
    for (const auto& c : cols) m.col(j++) = c.cast<double>();
    return m;
}

}  // namespace

TEST(ModalitySimilarity, WorkedValues) {
    const std::vector<Embedding> a = {vec({1, 0})}, b = {vec({0, 1})};
    EXPECT_DOUBLE_EQ(modality_similarity(a, a), 1.0);
    EXPECT_DOUBLE_EQ(modality_similarity(a, b), 0.0);
    EXPECT_THROW(modality_similarity(a, std::vector<Embedding>{}), DomainError);
}

TEST(ModalitySimilarity, MatchesBruteForce) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<Embedding> a, b;
        for (int i = 0; i < 3; ++i) a.push_back(oracle::gaussian(16, rng));
        for (int i = 0; i < 4; ++i) b.push_back(oracle::gaussian(16, rng));
        const double got = modality_similarity(a, b);
        const double want = static_cast<double>(oracle::modality_similarity(a, b));
        EXPECT_NEAR(got, want, 1e-12 * std::max(1.0, std::abs(want)));
    }
}

TEST(Subsample, CapsAndIsDeterministic) {
    std::mt19937_64 rng(1);
    std::vector<Embedding> xs;
    for (int i = 0; i < 1000; ++i) xs.push_back(oracle::gaussian(4, rng));
    const auto a = subsample_latents(xs, 9);
    const auto b = subsample_latents(xs, 9);
    ASSERT_EQ(a.size(), kSimilarityCap);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
    EXPECT_EQ(subsample_latents(std::span(xs).first(10), 9).size(), 10u);
}

TEST(SelectPairs, TrivialCases) {
    std::mt19937_64 rng(2);
    const auto lat = random_latents({0, 1}, 8, rng);
    EXPECT_TRUE(select_pairs({}, {1}, lat).empty());
    const auto single = select_pairs({0}, {1}, lat);
    ASSERT_EQ(single.size(), 1u);
    EXPECT_EQ(*single.begin(), (TaskPair{0, 1}));
    EXPECT_THROW(select_pairs({0}, {2}, lat), DomainError);
}

TEST(SelectPairs, CraftedFourOldTwoNew) {
    // Agent-view and language latents built so both rankings are known in advance.
    std::map<int, TaskModalityLatents> lat;
    const int dim = 8;
    for (int id = 0; id < 6; ++id) {
        Embedding v = Embedding::Zero(dim);
        v(id) = 1.0f;
        v(7) = 0.1f * static_cast<float>(id);  // shared component grows with id
        lat[id].agent_view = {v};
        lat[id].language = {v};
    }
    const std::set<int> old_t = {0, 1, 2, 3}, new_t = {4, 5};
    EXPECT_EQ(select_pairs(old_t, new_t, lat), oracle::select_pairs(old_t, new_t, lat, 0.5));
}

TEST(SelectPairs, MatchesExhaustiveOracle) {
    std::mt19937_64 rng(42);
    std::uniform_int_distribution<int> n_tasks(2, 12);
    const double fractions[] = {0.333, 0.5, 0.666, 1.0};
    for (int trial = 0; trial < 100; ++trial) {
        const int n = n_tasks(rng);
        std::uniform_int_distribution<int> n_old(1, n - 1);
        const int k = n_old(rng);
        std::vector<int> ids(static_cast<std::size_t>(n));
        std::iota(ids.begin(), ids.end(), 0);
        std::set<int> old_t(ids.begin(), ids.begin() + k), new_t(ids.begin() + k, ids.end());
        const auto lat = random_latents(ids, 6, rng);
        const double f = fractions[trial % 4];
        EXPECT_EQ(select_pairs(old_t, new_t, lat, f), oracle::select_pairs(old_t, new_t, lat, f)) << "trial " << trial;
    }
}

TEST(SelectPairs, TiesBrokenByTaskIds) {
    std::map<int, TaskModalityLatents> lat;
    for (int id = 0; id < 4; ++id) lat[id] = {{vec({1, 1})}, {vec({1, 1})}};
    // All six pairs tie; top ceil(0.5 * 6) = 3 are (0,1), (0,2), (0,3).
    const auto got = select_pairs({0, 1}, {2, 3}, lat);
    const PairSet want = {{0, 2}, {0, 3}};
    EXPECT_EQ(got, want);
    EXPECT_EQ(got, oracle::select_pairs({0, 1}, {2, 3}, lat, 0.5));
}

TEST(SelectPairs, ScaleInvariant) {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const std::vector<int> ids = {0, 1, 2, 3, 4, 5, 6};
        auto lat = random_latents(ids, 6, rng);
        const auto before = select_pairs({0, 1, 2, 3}, {4, 5, 6}, lat);
        for (auto& x : lat[trial % 7].agent_view) x *= 37.5f;
        for (auto& x : lat[(trial + 3) % 7].language) x *= 0.01f;
        EXPECT_EQ(before, select_pairs({0, 1, 2, 3}, {4, 5, 6}, lat));
    }
}

TEST(SelectPairs, PairsCrossOldAndNew) {
    std::mt19937_64 rng(9);
    const auto lat = random_latents({0, 1, 2, 3, 4, 5, 6, 7}, 6, rng);
    const std::set<int> old_t = {0, 1, 2, 3, 4}, new_t = {5, 6, 7};
    for (const auto& p : select_pairs(old_t, new_t, lat, 1.0)) {
        EXPECT_TRUE(old_t.contains(p.old_task));
        EXPECT_TRUE(new_t.contains(p.new_task));
    }
    EXPECT_EQ(select_pairs(old_t, new_t, lat, 1.0).size(), 15u);
}

TEST(Registry, NormalizesAndRejectsDuplicates) {
    ReferenceRegistry refs;
    refs.register_task(3, vec({3, 4}), 0);
    EXPECT_NEAR(refs.at(3).h_ref.cast<double>().norm(), 1.0, 1e-7);
    EXPECT_THROW(refs.register_task(3, vec({1, 0}), 1), DomainError);
    EXPECT_THROW(refs.at(4), DomainError);
    EXPECT_THROW(refs.register_task(5, vec({0, 0}), 1), DomainError);
}

TEST(IfaLoss, EmptyPairSet) {
    ReferenceRegistry refs;
    refs.register_task(0, vec({1, 0}), 0);
    const std::vector<int> ids = {0};
    const auto r = ifa_loss<double>(as_matrix({vec({0.3f, 0.4f})}), ids, refs, {}, {});
    EXPECT_EQ(r.loss, 0.0);
    EXPECT_TRUE(r.grad.isZero(0.0));
}

TEST(IfaLoss, WorkedEquidistantCase) {
    ReferenceRegistry refs;
    refs.register_task(0, vec({0, 1}), 0);  // j
    refs.register_task(1, vec({1, 0}), 1);  // k
    const float s = static_cast<float>(std::sqrt(2.0) / 2.0);
    const std::vector<int> ids = {1};
    IfaConfig cfg;
    cfg.alpha = 0.3;
    const auto r = ifa_loss<double>(as_matrix({vec({s, s})}), ids, refs, {{0, 1}}, cfg);
    const long double oracle = 0.3L * std::acos(0.0L);
    EXPECT_NEAR(r.loss, static_cast<double>(oracle), 1e-9);
    EXPECT_NEAR(r.loss, 0.47123889803, 1e-9);
}

TEST(IfaLoss, OwnReferenceGivesZero) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        ReferenceRegistry refs;
        const int n = 6;
        for (int id = 0; id < n; ++id) refs.register_task(id, oracle::gaussian(16, rng), id < 3 ? 0 : 1);
        PairSet pairs;
        for (int j = 0; j < 3; ++j)
            for (int k = 3; k < n; ++k)
                if ((rng() & 1u) != 0u) pairs.insert({j, k});
        std::vector<int> ids = {3, 4, 5, 3};
        Eigen::MatrixXd g(16, 4);
        for (int c = 0; c < 4; ++c) g.col(c) = refs.at(ids[static_cast<std::size_t>(c)]).h_ref.cast<double>();
        IfaConfig cfg;
        cfg.alpha = 0.3;
        const auto r = ifa_loss<double>(g, ids, refs, pairs, cfg);
        EXPECT_EQ(r.loss, 0.0);
        EXPECT_TRUE(r.grad.isZero(0.0));
    }
}

TEST(IfaLoss, RejectsUnregisteredTask) {
    ReferenceRegistry refs;
    refs.register_task(0, vec({1, 0}), 0);
    const std::vector<int> ids = {7};
    EXPECT_THROW(ifa_loss<double>(as_matrix({vec({1, 1})}), ids, refs, {{0, 7}}, {}), DomainError);
}

TEST(IfaLoss, PairsWithoutBatchSamplesAreExcluded) {
    ReferenceRegistry refs;
    refs.register_task(0, vec({0, 1}), 0);
    refs.register_task(1, vec({1, 0}), 1);
    refs.register_task(2, vec({-1, 0}), 1);
    const float s = static_cast<float>(std::sqrt(2.0) / 2.0);
    const std::vector<int> ids = {1};
    IfaConfig cfg;
    const auto one = ifa_loss<double>(as_matrix({vec({s, s})}), ids, refs, {{0, 1}}, cfg);
    const auto two = ifa_loss<double>(as_matrix({vec({s, s})}), ids, refs, {{0, 1}, {0, 2}}, cfg);
    EXPECT_EQ(two.active_pairs, 1u);
    EXPECT_DOUBLE_EQ(one.loss, two.loss);
}

TEST(IfaLoss, GradientsMatchFiniteDifferences) {
    std::mt19937_64 rng(21);
    int checked = 0;
    for (int trial = 0; checked < 100; ++trial) {
        ASSERT_LT(trial, 2000);
        const DistanceMode mode = trial % 2 ? DistanceMode::cosine : DistanceMode::angle;
        ReferenceRegistry refs;
        for (int id = 0; id < 4; ++id) refs.register_task(id, oracle::gaussian(5, rng), id < 2 ? 0 : 1);
        const PairSet pairs = {{0, 2}, {1, 2}, {0, 3}, {1, 3}};
        const std::vector<int> ids = {2, 3, 2, 3, 2};
        Eigen::MatrixXd g(5, 5);
        for (int c = 0; c < 5; ++c) g.col(c) = oracle::gaussian(5, rng).cast<double>();
        IfaConfig cfg;
        cfg.alpha = 0.3;
        cfg.distance_mode = mode;

        // Keep away from hinge kinks and arccos saturation.
        bool degenerate = false;
        for (int c = 0; c < 5 && !degenerate; ++c) {
            for (const auto& p : pairs) {
                if (p.new_task != ids[static_cast<std::size_t>(c)]) continue;
                const Eigen::VectorXd hk = refs.at(p.new_task).h_ref.cast<double>();
                const Eigen::VectorXd hj = refs.at(p.old_task).h_ref.cast<double>();
                const Eigen::VectorXd gc = g.col(c);
                const double h = detail::distance(gc, hk, mode) - detail::distance(gc, hj, mode) +
                                 cfg.alpha * detail::distance(hk, hj, mode);
                if (std::abs(h) < 1e-3 || std::abs(geometry::cosine_similarity(gc, hk)) > 0.99 ||
                    std::abs(geometry::cosine_similarity(gc, hj)) > 0.99)
                    degenerate = true;
            }
        }
        if (degenerate) continue;
        ++checked;
        const auto r = ifa_loss<double>(g, ids, refs, pairs, cfg);
        for (Eigen::Index i = 0; i < g.size(); ++i) {
            Eigen::MatrixXd gp = g, gm = g;
            gp.data()[i] += 1e-5;
            gm.data()[i] -= 1e-5;
            const double num = (ifa_loss<double>(gp, ids, refs, pairs, cfg).loss -
                                ifa_loss<double>(gm, ids, refs, pairs, cfg).loss) / 2e-5;
            const double ana = r.grad.data()[i];
            EXPECT_LT(std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-6}), 1e-4);
        }
    }
}

TEST(IfaLoss, InactiveHingeHasZeroGradient) {
    ReferenceRegistry refs;
    refs.register_task(0, vec({0, 1}), 0);
    refs.register_task(1, vec({1, 0}), 1);
    const std::vector<int> ids = {1};
    const auto r = ifa_loss<double>(as_matrix({vec({1.0f, 0.05f})}), ids, refs, {{0, 1}}, {});
    EXPECT_EQ(r.loss, 0.0);
    EXPECT_TRUE(r.grad.isZero(0.0));
}

TEST(IfaConfig, Validation) {
    IfaConfig c;
    EXPECT_EQ(c.lambda_ifa, 0.1);
    EXPECT_EQ(c.selection_fraction, 0.5);
    c.alpha = 1.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c.alpha = 0.3;
    c.selection_fraction = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_THROW(distance_mode_from_string("euclid"), ConfigError);
}
