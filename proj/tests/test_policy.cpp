#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "lifelong/checkpoint.hpp"
#include "lifelong/policy.hpp"
#include "oracles.hpp"

using namespace lifelong;
using namespace lifelong::policy;

namespace {

struct Fixture {
    PolicyDims dims;
    PolicyParams<float> params;
    std::vector<Observation> window;
};

Fixture make_fixture(std::uint64_t seed, HeadMode head = HeadMode::mse) {
    std::mt19937_64 rng(seed);
    Fixture f;
    f.dims = oracle::small_dims(head);
    std::vector<Embedding> lang = {oracle::gaussian(f.dims.embed, rng), oracle::gaussian(f.dims.embed, rng)};
    f.params = init_params(f.dims, {5, 9}, lang, seed);
    for (int t = 0; t < f.dims.window; ++t) {
        Observation o;
        o.agent_view = oracle::gaussian(f.dims.image_size(), rng);
        o.eye_in_hand = oracle::gaussian(f.dims.image_size(), rng);
        o.state = oracle::gaussian(f.dims.state_dim, rng);
        o.task_language_id = 9;
        f.window.push_back(o);
    }
    return f;
}

}  // namespace

TEST(Encode, FilmIdentityPassesProjectionsThrough) {
    auto f = make_fixture(1);
    for (int s = 0; s < kFilmSlots; ++s)
        for (int w = 0; w < 4; ++w) f.params[film_block(s, w)].setZero();
    const auto lat = encode(f.window, f.params);
    const auto shape = f.dims.latent_shape();
    for (int t = 0; t < f.dims.window; ++t) {
        const auto& o = f.window[static_cast<std::size_t>(t)];
        const Eigen::VectorXf agent = f.params[kVisionAgent] * o.agent_view;
        const Eigen::VectorXf eye = f.params[kVisionEye] * o.eye_in_hand;
        const Eigen::VectorXf state = state_encoder<float>(f.params, o.state);
        EXPECT_EQ(Eigen::VectorXf(lat.row(shape, Modality::agent_view, t)), agent);
        EXPECT_EQ(Eigen::VectorXf(lat.row(shape, Modality::eye_in_hand, t)), eye);
        EXPECT_EQ(Eigen::VectorXf(lat.row(shape, Modality::state, t)), state);
        EXPECT_EQ(Eigen::VectorXf(lat.row(shape, Modality::language, t)), Eigen::VectorXf(f.params[kLanguage].col(1)));
    }
}

TEST(Encode, Deterministic) {
    auto f = make_fixture(2);
    EXPECT_EQ(encode(f.window, f.params, 3).data, encode(f.window, f.params, 3).data);
}

TEST(Encode, PaddedWindowRepeatsLanguageRow) {
    auto f = make_fixture(3);
    const std::vector<Observation> padded(static_cast<std::size_t>(f.dims.window), f.window.front());
    const auto lat = encode(padded, f.params);
    const auto shape = f.dims.latent_shape();
    for (int t = 0; t < f.dims.window; ++t) {
        EXPECT_EQ(Eigen::VectorXf(lat.row(shape, Modality::language, t)), Eigen::VectorXf(f.params[kLanguage].col(1)));
        EXPECT_EQ(Eigen::VectorXf(lat.row(shape, Modality::agent_view, t)),
                  Eigen::VectorXf(lat.row(shape, Modality::agent_view, 0)));
    }
}

TEST(Encode, RejectsWrongWindowLength) {
    auto f = make_fixture(4);
    f.window.pop_back();
    EXPECT_THROW(encode(f.window, f.params), DomainError);
}

TEST(ForwardGlobal, ZeroLatentZeroBiases) {
    auto f = make_fixture(5);
    LatentSequence z{Eigen::VectorXf::Zero(f.dims.latent_size()), 9, 0};
    EXPECT_TRUE(forward_global(z, f.params).isZero(0.0f));
}

TEST(ForwardGlobal, MatchesNaiveMatmul) {
    auto f = make_fixture(6);
    std::mt19937_64 rng(6);
    for (int b = kDecB1; b <= kDecB2; b += 2) f.params[b] = oracle::gaussian(static_cast<int>(f.params[b].rows()), rng, 0.3);
    const LatentSequence lat{oracle::gaussian(f.dims.latent_size(), rng), 9, 0};
    const auto g = forward_global(lat, f.params);
    const auto& W1 = f.params[kDecW1];
    const auto& W2 = f.params[kDecW2];
    for (int e = 0; e < f.dims.embed; ++e) {
        long double acc = f.params[kDecB2](e, 0);
        for (int h = 0; h < f.dims.hidden; ++h) {
            long double z = f.params[kDecB1](h, 0);
            for (int d = 0; d < f.dims.latent_size(); ++d) z += static_cast<long double>(W1(h, d)) * lat.data(d);
            acc += static_cast<long double>(W2(e, h)) * std::tanh(z);
        }
        EXPECT_NEAR(g(e), static_cast<double>(acc), 1e-6);
    }
    EXPECT_THROW(forward_global(LatentSequence{Eigen::VectorXf::Zero(3), 9, 0}, f.params), DomainError);
}

TEST(Head, MsePerfectPredictionAndOracle) {
    auto f = make_fixture(7);
    std::mt19937_64 rng(7);
    const Embedding g = oracle::gaussian(f.dims.embed, rng);
    const Eigen::VectorXf pred = f.params[kHeadW] * g + f.params[kHeadB];
    EXPECT_EQ(head_forward_and_bc_loss(g, pred, f.params).loss, 0.0);
    const Eigen::VectorXf a = oracle::gaussian(f.dims.action_dim, rng);
    double want = 0.0;
    for (int i = 0; i < f.dims.action_dim; ++i) {
        double z = f.params[kHeadB](i, 0);
        for (int e = 0; e < f.dims.embed; ++e) z += static_cast<double>(f.params[kHeadW](i, e)) * g(e);
        want += (z - a(i)) * (z - a(i));
    }
    want /= f.dims.action_dim;
    EXPECT_NEAR(head_forward_and_bc_loss(g, a, f.params).loss, want, 1e-7 * std::max(1.0, want));
}

TEST(Head, GmmStandardNormalAtMean) {
    for (int K : {1, 5}) {
        PolicyDims d = oracle::small_dims(HeadMode::gmm);
        d.gmm_components = K;
        const int A = d.action_dim;
        Mat<double> O = Mat<double>::Zero(d.head_outputs(), 1);
        Mat<double> target(A, 1);
        target << 0.25, -1.5;
        for (int k = 0; k < K; ++k) O.block(K + k * A, 0, A, 1) = target;
        const auto r = bc_loss<double>(d, O, target);
        EXPECT_NEAR(r.loss, 0.5 * A * std::log(2.0 * std::numbers::pi), 1e-12) << "K " << K;
        EXPECT_TRUE(r.actions.isApprox(target));
    }
}

TEST(Head, GmmWeightsAndClamp) {
    PolicyDims d = oracle::small_dims(HeadMode::gmm);
    std::mt19937_64 rng(8);
    Vec<double> o = oracle::gaussian(d.head_outputs(), rng, 4.0).cast<double>();
    const auto g = unpack_gmm<double>(d, o);
    EXPECT_NEAR(g.weights.sum(), 1.0, 1e-6);
    EXPECT_GE(g.log_stds.minCoeff(), kLogStdMin);
    EXPECT_LE(g.log_stds.maxCoeff(), kLogStdMax);
}

TEST(Backward, MissingCacheIsInternalError) {
    auto f = make_fixture(9);
    auto grads = zero_grads(f.params);
    ForwardCache<float> empty;
    EXPECT_THROW(backward_decoder<float>(f.params, empty, Mat<float>::Zero(f.dims.action_dim, 1), nullptr, grads),
                 InternalError);
}

TEST(Backward, FrozenBlocksReceiveNoGradient) {
    auto fx = oracle::make_grad_fixture(HeadMode::mse, 3);
    const auto r = trainer::lifelong_objective<double>(fx.params, fx.latents(), fx.targets, fx.current_ids, fx.refs,
                                                       fx.pairs, fx.ifa_cfg, fx.lambda);
    for (int b = 0; b < kNumBlocks; ++b) {
        if (block_info(b).role == BlockRole::lifelong) continue;
        EXPECT_TRUE(r.grads[static_cast<std::size_t>(b)].isZero(0.0)) << block_info(b).name;
    }
}

class GradientCheck : public ::testing::TestWithParam<HeadMode> {};

TEST_P(GradientCheck, LifelongObjectiveMatchesFiniteDifferences) {
    int done = 0;
    for (std::uint64_t seed = 100; done < 20; ++seed) {
        ASSERT_LT(seed, 400u);
        auto fx = oracle::make_grad_fixture(GetParam(), seed);
        const auto cache = forward_batch<double>(fx.params, fx.latents());
        if (oracle::min_abs_hinge(fx, cache.G) < 1e-3 || oracle::min_logstd_margin(fx.params.dims, cache.O) < 1e-3)
            continue;
        ++done;
        const auto r = trainer::lifelong_objective<double>(fx.params, fx.latents(), fx.targets, fx.current_ids,
                                                           fx.refs, fx.pairs, fx.ifa_cfg, fx.lambda);
        const auto check = oracle::finite_difference_check(
            fx.params, r.grads, [&](const PolicyParams<double>& p) { return oracle::lifelong_loss(fx, p); },
            [](int b) { return trainable_in(b, Phase::lifelong); });
        EXPECT_LT(check.max_rel_error, 1e-4) << "seed " << seed;
        EXPECT_GT(check.checked, 0u);
    }
}

TEST_P(GradientCheck, PretrainObjectiveMatchesFiniteDifferences) {
    int done = 0;
    for (std::uint64_t seed = 500; done < 5; ++seed) {
        ASSERT_LT(seed, 700u);
        auto fx = oracle::make_grad_fixture(GetParam(), seed);
        const auto cache = forward_batch<double>(fx.params, fx.latents());
        if (oracle::min_logstd_margin(fx.params.dims, cache.O) < 1e-3) continue;
        ++done;
        const auto r = trainer::pretrain_objective<double>(fx.params, fx.pool, fx.windows, fx.targets);
        const auto check = oracle::finite_difference_check(
            fx.params, r.grads, [&](const PolicyParams<double>& p) { return oracle::pretrain_loss(fx, p); },
            [](int b) { return trainable_in(b, Phase::pretrain); });
        EXPECT_LT(check.max_rel_error, 1e-4) << "seed " << seed;
    }
}

INSTANTIATE_TEST_SUITE_P(Heads, GradientCheck, ::testing::Values(HeadMode::mse, HeadMode::gmm),
                         [](const auto& info) { return to_string(info.param); });

TEST(Backward, ZeroLambdaEqualsPureBc) {
    auto fx = oracle::make_grad_fixture(HeadMode::mse, 11);
    const auto with = trainer::lifelong_objective<double>(fx.params, fx.latents(), fx.targets, fx.current_ids,
                                                          fx.refs, fx.pairs, fx.ifa_cfg, 0.0);
    const auto bare = trainer::lifelong_objective<double>(fx.params, fx.latents(), fx.targets, fx.current_ids,
                                                          fx.refs, {}, fx.ifa_cfg, 0.0);
    for (int b = 0; b < kNumBlocks; ++b) EXPECT_EQ(with.grads[static_cast<std::size_t>(b)], bare.grads[static_cast<std::size_t>(b)]);
    EXPECT_EQ(with.loss.total, bare.loss.bc);
}

TEST(Params, CountAndFrozenHash) {
    auto f = make_fixture(12);
    auto g = make_fixture(12);
    EXPECT_EQ(f.params.parameter_count(), g.params.parameter_count());
    EXPECT_EQ(f.params.frozen_hash(), g.params.frozen_hash());
    g.params[kDecW1](0, 0) += 1.0f;
    EXPECT_EQ(f.params.frozen_hash(), g.params.frozen_hash());
    g.params[film_block(1, kBetaB)](0, 0) += 1.0f;
    EXPECT_NE(f.params.frozen_hash(), g.params.frozen_hash());

    PolicyDims d;
    const int D = d.latent_size();
    const std::size_t lifelong = static_cast<std::size_t>(d.hidden) * D + d.hidden + 64 * d.hidden + 64 + 4 * 64 + 4;
    const auto full = init_params(d, {0}, {Embedding::Ones(64)}, 0);
    EXPECT_EQ(full.parameter_count(true), lifelong);
}

TEST(Checkpoint, RoundTripIsBitExact) {
    for (auto head : {HeadMode::mse, HeadMode::gmm}) {
        auto f = make_fixture(13, head);
        const auto bytes = serialize_params(f.params, 13);
        const auto back = deserialize_params(bytes);
        for (int b = 0; b < kNumBlocks; ++b) EXPECT_EQ(back[b], f.params[b]);
        EXPECT_EQ(back.dims.head, head);
        EXPECT_EQ(back.language_ids, f.params.language_ids);
        EXPECT_EQ(serialize_params(back, 13), bytes);
        EXPECT_EQ(params_header(bytes).at("seed").get<std::uint64_t>(), 13u);
    }
}

TEST(Checkpoint, DetectsCorruptedFrozenBlock) {
    auto f = make_fixture(14);
    auto bytes = serialize_params(f.params, 14);
    bytes[bytes.size() - 4 * static_cast<std::size_t>(f.params.parameter_count()) + 2] ^= 0x40;
    EXPECT_THROW(deserialize_params(bytes), DomainError);
}
