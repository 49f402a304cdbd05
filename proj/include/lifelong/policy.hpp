#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lifelong/error.hpp"
#include "lifelong/geometry.hpp"
#include "lifelong/io.hpp"
#include "lifelong/replay_buffer.hpp"
#include "lifelong/rng.hpp"

namespace lifelong::policy {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

enum class HeadMode { mse, gmm };

inline std::string to_string(HeadMode m) { return m == HeadMode::mse ? "mse" : "gmm"; }

inline HeadMode head_mode_from_string(const std::string& s) {
    if (s == "mse") return HeadMode::mse;
    if (s == "gmm") return HeadMode::gmm;
    throw ConfigError("unknown head mode '" + s + "'");
}

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

struct PolicyDims {
    int image_side = 32;
    int state_dim = 8;
    int embed = 64;
    int window = 8;
    int action_dim = 4;
    int hidden = 256;
    int gmm_components = 5;
    HeadMode head = HeadMode::mse;

    LatentShape latent_shape() const { return {kNumModalities, window, embed}; }
    int image_size() const { return image_side * image_side; }
    int latent_size() const { return kNumModalities * window * embed; }
    int head_outputs() const {
        return head == HeadMode::mse ? action_dim : gmm_components * (1 + 2 * action_dim);
    }

    void validate() const {
        require_config(image_side >= 1 && state_dim >= 1 && embed >= 1 && window >= 1 &&
                           action_dim >= 1 && hidden >= 1 && gmm_components >= 1,
                       "policy dimensions must be positive");
    }
};

struct Observation {
    Eigen::VectorXf agent_view;   // image_side^2, row-major grid
    Eigen::VectorXf eye_in_hand;  // image_side^2
    Eigen::VectorXf state;        // state_dim
    int task_language_id = 0;
};

// fixed: never trained (stand-ins for pretrained vision/text encoders).
// pretrain: trained jointly in pretraining, frozen afterwards.
// lifelong: temporal decoder and head, trained in every stage.
enum class BlockRole { fixed, pretrain, lifelong };

enum Block : int {
    kVisionAgent,
    kVisionEye,
    kLanguage,
    kStateW1,
    kStateB1,
    kStateW2,
    kStateB2,
    kFilmBase,                       // 3 modulated modalities x {gamma_w, gamma_b, beta_w, beta_b}
    kDecW1 = kFilmBase + 12,
    kDecB1,
    kDecW2,
    kDecB2,
    kHeadW,
    kHeadB,
    kNumBlocks
};

// FiLM slots: agent view, eye in hand, state.
inline constexpr int kFilmSlots = 3;
inline constexpr int film_block(int slot, int which) { return kFilmBase + 4 * slot + which; }
inline constexpr int kGammaW = 0, kGammaB = 1, kBetaW = 2, kBetaB = 3;

struct BlockInfo {
    const char* name;
    BlockRole role;
};

inline const BlockInfo& block_info(int b) {
    static const std::array<BlockInfo, kNumBlocks> table = {{
        {"vision_agent", BlockRole::fixed},
        {"vision_eye", BlockRole::fixed},
        {"language", BlockRole::fixed},
        {"state_w1", BlockRole::pretrain},
        {"state_b1", BlockRole::pretrain},
        {"state_w2", BlockRole::pretrain},
        {"state_b2", BlockRole::pretrain},
        {"film_agent_gamma_w", BlockRole::pretrain},
        {"film_agent_gamma_b", BlockRole::pretrain},
        {"film_agent_beta_w", BlockRole::pretrain},
        {"film_agent_beta_b", BlockRole::pretrain},
        {"film_eye_gamma_w", BlockRole::pretrain},
        {"film_eye_gamma_b", BlockRole::pretrain},
        {"film_eye_beta_w", BlockRole::pretrain},
        {"film_eye_beta_b", BlockRole::pretrain},
        {"film_state_gamma_w", BlockRole::pretrain},
        {"film_state_gamma_b", BlockRole::pretrain},
        {"film_state_beta_w", BlockRole::pretrain},
        {"film_state_beta_b", BlockRole::pretrain},
        {"decoder_w1", BlockRole::lifelong},
        {"decoder_b1", BlockRole::lifelong},
        {"decoder_w2", BlockRole::lifelong},
        {"decoder_b2", BlockRole::lifelong},
        {"head_w", BlockRole::lifelong},
        {"head_b", BlockRole::lifelong},
    }};
    return table.at(static_cast<std::size_t>(b));
}

// Which blocks an optimizer may touch in a given phase.
enum class Phase { pretrain, lifelong };

inline bool trainable_in(int b, Phase phase) {
    const auto role = block_info(b).role;
    if (role == BlockRole::fixed) return false;
    return phase == Phase::pretrain || role == BlockRole::lifelong;
}

template <typename T>
using Grads = std::array<Mat<T>, kNumBlocks>;

template <typename T>
struct PolicyParams {
    PolicyDims dims;
    std::vector<int> language_ids;  // language column j holds task language_ids[j]
    std::array<Mat<T>, kNumBlocks> blocks;

    Mat<T>& operator[](int b) { return blocks[static_cast<std::size_t>(b)]; }
    const Mat<T>& operator[](int b) const { return blocks[static_cast<std::size_t>(b)]; }

    Eigen::Index language_column(int task_id) const {
        for (std::size_t j = 0; j < language_ids.size(); ++j)
            if (language_ids[j] == task_id) return static_cast<Eigen::Index>(j);
        throw DomainError("no language embedding for task " + std::to_string(task_id));
    }

    template <typename U>
    PolicyParams<U> cast() const {
        PolicyParams<U> out;
        out.dims = dims;
        out.language_ids = language_ids;
        for (int b = 0; b < kNumBlocks; ++b) out[b] = (*this)[b].template cast<U>();
        return out;
    }

    std::size_t parameter_count(bool trainable_only = false) const {
        std::size_t n = 0;
        for (int b = 0; b < kNumBlocks; ++b)
            if (!trainable_only || block_info(b).role == BlockRole::lifelong)
                n += static_cast<std::size_t>((*this)[b].size());
        return n;
    }

    // FNV-1a over the float32 bytes of every block outside the lifelong set.
    std::uint64_t frozen_hash() const {
        std::uint64_t h = fnv1a("frozen");
        for (int b = 0; b < kNumBlocks; ++b) {
            if (block_info(b).role == BlockRole::lifelong) continue;
            const Eigen::MatrixXf m = (*this)[b].template cast<float>();
            h = fnv1a(block_info(b).name, h);
            h = fnv1a_bytes(m.data(), static_cast<std::size_t>(m.size()) * sizeof(float), h);
        }
        return h;
    }
};

template <typename T>
Grads<T> zero_grads(const PolicyParams<T>& p) {
    Grads<T> g;
    for (int b = 0; b < kNumBlocks; ++b) g[b] = Mat<T>::Zero(p[b].rows(), p[b].cols());
    return g;
}

// Seeded initialisation. `language` holds one embedding per task id; it
// becomes the fixed language table.
inline PolicyParams<float> init_params(const PolicyDims& dims, const std::vector<int>& task_ids,
                                       const std::vector<Embedding>& language, std::uint64_t seed) {
    dims.validate();
    require(task_ids.size() == language.size(), "one language embedding per task id");
    Rng rng(seed);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    auto gaussian = [&](int r, int c, double scale) {
        Mat<float> m(r, c);
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            for (Eigen::Index i = 0; i < m.rows(); ++i)
                m(i, j) = static_cast<float>(scale) * normal(rng);
        return m;
    };
    const int E = dims.embed;
    PolicyParams<float> p;
    p.dims = dims;
    p.language_ids = task_ids;
    p[kVisionAgent] = gaussian(E, dims.image_size(), 1.0 / std::sqrt(dims.image_size()));
    p[kVisionEye] = gaussian(E, dims.image_size(), 1.0 / std::sqrt(dims.image_size()));
    p[kLanguage] = Mat<float>(E, static_cast<Eigen::Index>(language.size()));
    for (std::size_t j = 0; j < language.size(); ++j) {
        require(language[j].size() == E, "language embedding has wrong dimension");
        p[kLanguage].col(static_cast<Eigen::Index>(j)) = language[j];
    }
    p[kStateW1] = gaussian(E, dims.state_dim, 1.0 / std::sqrt(dims.state_dim));
    p[kStateB1] = Mat<float>::Zero(E, 1);
    p[kStateW2] = gaussian(E, E, 1.0 / std::sqrt(E));
    p[kStateB2] = Mat<float>::Zero(E, 1);
    for (int slot = 0; slot < kFilmSlots; ++slot) {
        p[film_block(slot, kGammaW)] = gaussian(E, E, 0.5 / std::sqrt(E));
        p[film_block(slot, kGammaB)] = Mat<float>::Zero(E, 1);
        p[film_block(slot, kBetaW)] = gaussian(E, E, 0.5 / std::sqrt(E));
        p[film_block(slot, kBetaB)] = Mat<float>::Zero(E, 1);
    }
    const int D = dims.latent_size();
    p[kDecW1] = gaussian(dims.hidden, D, 1.0 / std::sqrt(D));
    p[kDecB1] = Mat<float>::Zero(dims.hidden, 1);
    p[kDecW2] = gaussian(E, dims.hidden, 1.0 / std::sqrt(dims.hidden));
    p[kDecB2] = Mat<float>::Zero(E, 1);
    p[kHeadW] = gaussian(dims.head_outputs(), E, 1.0 / std::sqrt(E));
    p[kHeadB] = Mat<float>::Zero(dims.head_outputs(), 1);
    return p;
}

// ---------------------------------------------------------------------------
// Encoders and FiLM

template <typename T>
struct FilmCoefficients {
    Mat<T> gamma;  // E x 3 (agent, eye, state)
    Mat<T> beta;
};

template <typename T>
FilmCoefficients<T> film_coefficients(const PolicyParams<T>& p, int task_id) {
    const Vec<T> h_l = p[kLanguage].col(p.language_column(task_id));
    const int E = p.dims.embed;
    FilmCoefficients<T> f{Mat<T>(E, kFilmSlots), Mat<T>(E, kFilmSlots)};
    for (int s = 0; s < kFilmSlots; ++s) {
        f.gamma.col(s) = Vec<T>::Ones(E) + p[film_block(s, kGammaW)] * h_l + p[film_block(s, kGammaB)];
        f.beta.col(s) = p[film_block(s, kBetaW)] * h_l + p[film_block(s, kBetaB)];
    }
    return f;
}

// Output of the fixed vision projections plus raw state for one observation.
template <typename T>
struct ProjectedObservation {
    Vec<T> agent;  // E
    Vec<T> eye;    // E
    Vec<T> state;  // S
    int task_language_id = 0;
};

template <typename T>
ProjectedObservation<T> project(const PolicyParams<T>& p, const Observation& o) {
    require(o.agent_view.size() == p.dims.image_size() && o.eye_in_hand.size() == p.dims.image_size(),
            "observation image has wrong size");
    require(o.state.size() == p.dims.state_dim, "observation state has wrong size");
    return {p[kVisionAgent] * o.agent_view.cast<T>(), p[kVisionEye] * o.eye_in_hand.cast<T>(),
            o.state.cast<T>(), o.task_language_id};
}

template <typename T>
Vec<T> state_encoder(const PolicyParams<T>& p, const Vec<T>& s) {
    const Vec<T> hidden = (p[kStateW1] * s + p[kStateB1]).array().tanh().matrix();
    return p[kStateW2] * hidden + p[kStateB2];
}

// Modulated features of one timestep, E x 4 in modality storage order.
template <typename T>
Mat<T> encode_step(const PolicyParams<T>& p, const ProjectedObservation<T>& o,
                   const FilmCoefficients<T>& film) {
    const int E = p.dims.embed;
    Mat<T> out(E, kNumModalities);
    out.col(static_cast<int>(Modality::agent_view)) =
        film.gamma.col(0).cwiseProduct(o.agent) + film.beta.col(0);
    out.col(static_cast<int>(Modality::eye_in_hand)) =
        film.gamma.col(1).cwiseProduct(o.eye) + film.beta.col(1);
    out.col(static_cast<int>(Modality::language)) = p[kLanguage].col(p.language_column(o.task_language_id));
    out.col(static_cast<int>(Modality::state)) =
        film.gamma.col(2).cwiseProduct(state_encoder(p, o.state)) + film.beta.col(2);
    return out;
}

// Stacks per-timestep features (oldest first) into the flattened (M, L, E) layout.
template <typename T>
Vec<T> stack_window(const PolicyDims& dims, std::span<const Mat<T>> steps) {
    require(static_cast<int>(steps.size()) == dims.window, "window must hold exactly L timesteps");
    const LatentShape shape = dims.latent_shape();
    Vec<T> out(shape.size());
    for (int t = 0; t < dims.window; ++t)
        for (int m = 0; m < kNumModalities; ++m)
            out.segment(shape.offset(m, t), dims.embed) = steps[static_cast<std::size_t>(t)].col(m);
    return out;
}

// Frozen encoders + FiLM over a window of exactly L observations.
inline LatentSequence encode(std::span<const Observation> window, const PolicyParams<float>& p,
                             int timestep_index = 0) {
    require(static_cast<int>(window.size()) == p.dims.window,
            "encode: window length must equal L = " + std::to_string(p.dims.window));
    const int task = window.front().task_language_id;
    const auto film = film_coefficients(p, task);
    std::vector<Mat<float>> steps;
    steps.reserve(window.size());
    for (const auto& o : window) {
        require(o.task_language_id == task, "window mixes task language ids");
        steps.push_back(encode_step(p, project(p, o), film));
    }
    return {stack_window<float>(p.dims, steps), task, timestep_index};
}

// ---------------------------------------------------------------------------
// Temporal decoder and head

template <typename T>
struct ForwardCache {
    Mat<T> X;   // D x B latent windows
    Mat<T> A1;  // H x B hidden activations
    Mat<T> G;   // E x B global latents
    Mat<T> O;   // head outputs x B
};

template <typename T>
ForwardCache<T> forward_batch(const PolicyParams<T>& p, Mat<T> X) {
    require(X.rows() == p[kDecW1].cols(), "latent batch does not match decoder input size");
    ForwardCache<T> c;
    c.X = std::move(X);
    c.A1.noalias() = p[kDecW1] * c.X;
    c.A1.colwise() += p[kDecB1].col(0);
    c.A1 = c.A1.array().tanh().matrix();
    c.G.noalias() = p[kDecW2] * c.A1;
    c.G.colwise() += p[kDecB2].col(0);
    c.O.noalias() = p[kHeadW] * c.G;
    c.O.colwise() += p[kHeadB].col(0);
    return c;
}

inline Embedding forward_global(const LatentSequence& latent, const PolicyParams<float>& p) {
    require(latent.data.size() == p.dims.latent_size(), "latent shape does not match params");
    return forward_batch<float>(p, latent.data).G.col(0);
}

struct GmmComponents {
    Eigen::VectorXd weights;     // K, softmax of logits
    Eigen::MatrixXd means;       // A x K
    Eigen::MatrixXd log_stds;    // A x K, clamped
};

// Output layout per column: [K logits][K*A means][K*A log-stds], component-major.
template <typename T>
GmmComponents unpack_gmm(const PolicyDims& d, const Eigen::Ref<const Vec<T>>& o) {
    const int K = d.gmm_components;
    const int A = d.action_dim;
    GmmComponents g;
    const Eigen::VectorXd logits = o.head(K).template cast<double>();
    const double mx = logits.maxCoeff();
    g.weights = (logits.array() - mx).exp().matrix();
    g.weights /= g.weights.sum();
    g.means = Eigen::Map<const Mat<T>>(o.data() + K, A, K).template cast<double>();
    g.log_stds = Eigen::Map<const Mat<T>>(o.data() + K + K * A, A, K)
                     .template cast<double>()
                     .array()
                     .max(kLogStdMin)
                     .min(kLogStdMax)
                     .matrix();
    return g;
}

struct HeadOutput {
    Eigen::VectorXf action;              // mse prediction, or mixture mean in gmm mode
    std::optional<GmmComponents> mixture;
    double loss = 0.0;
};

template <typename T>
struct BcResult {
    double loss = 0.0;  // mean over batch
    Mat<T> dO;          // d loss / d head outputs
    Mat<T> actions;     // A x B point predictions
};

// Behaviour-cloning loss averaged over the batch columns, with its gradient
// on the head outputs.
template <typename T>
BcResult<T> bc_loss(const PolicyDims& d, const Mat<T>& O, const Mat<T>& targets) {
    require(targets.cols() == O.cols() && targets.rows() == d.action_dim, "target batch shape mismatch");
    require(targets.allFinite(), "non-finite target action");
    const auto B = O.cols();
    const double inv_b = 1.0 / static_cast<double>(B);
    BcResult<T> r;
    r.dO = Mat<T>::Zero(O.rows(), B);
    r.actions = Mat<T>(d.action_dim, B);
    if (d.head == HeadMode::mse) {
        const Mat<T> diff = O - targets;
        r.loss = diff.template cast<double>().squaredNorm() / d.action_dim * inv_b;
        r.dO = diff * static_cast<T>(2.0 / d.action_dim * inv_b);
        r.actions = O;
        return r;
    }
    const int K = d.gmm_components;
    const int A = d.action_dim;
    const double log_2pi = std::log(2.0 * std::numbers::pi);
    for (Eigen::Index b = 0; b < B; ++b) {
        const Vec<T> o = O.col(b);
        const GmmComponents g = unpack_gmm<T>(d, o);
        const Eigen::VectorXd a = targets.col(b).template cast<double>();
        Eigen::VectorXd logp(K);
        for (int k = 0; k < K; ++k) {
            const Eigen::ArrayXd z = (a - g.means.col(k)).array() / g.log_stds.col(k).array().exp();
            logp(k) = std::log(g.weights(k)) - 0.5 * z.square().sum() - g.log_stds.col(k).sum() -
                      0.5 * A * log_2pi;
        }
        const double mx = logp.maxCoeff();
        const double lse = mx + std::log((logp.array() - mx).exp().sum());
        r.loss += -lse * inv_b;
        const Eigen::VectorXd resp = (logp.array() - lse).exp().matrix();
        for (int k = 0; k < K; ++k) {
            r.dO(k, b) = static_cast<T>((g.weights(k) - resp(k)) * inv_b);
            for (int i = 0; i < A; ++i) {
                const double ls_raw = static_cast<double>(o(K + K * A + k * A + i));
                const double sigma = std::exp(g.log_stds(i, k));
                const double z = (a(i) - g.means(i, k)) / sigma;
                r.dO(K + k * A + i, b) = static_cast<T>(-resp(k) * z / sigma * inv_b);
                const bool inside = ls_raw > kLogStdMin && ls_raw < kLogStdMax;
                r.dO(K + K * A + k * A + i, b) =
                    inside ? static_cast<T>(resp(k) * (1.0 - z * z) * inv_b) : T(0);
            }
        }
        r.actions.col(b) = (g.means * g.weights).template cast<T>();
    }
    return r;
}

inline HeadOutput head_forward_and_bc_loss(const Embedding& g, const Eigen::VectorXf& target,
                                           const PolicyParams<float>& p) {
    require(g.size() == p.dims.embed, "global latent has wrong dimension");
    require(target.size() == p.dims.action_dim, "target has wrong dimension");
    const Mat<float> O = p[kHeadW] * g + p[kHeadB];
    const auto r = bc_loss<float>(p.dims, O, target);
    HeadOutput out;
    out.action = r.actions.col(0);
    out.loss = r.loss;
    if (p.dims.head == HeadMode::gmm) out.mixture = unpack_gmm<float>(p.dims, O.col(0));
    return out;
}

// Point action for each column of head outputs.
template <typename T>
Mat<T> head_actions(const PolicyDims& d, const Mat<T>& O) {
    if (d.head == HeadMode::mse) return O;
    Mat<T> out(d.action_dim, O.cols());
    for (Eigen::Index b = 0; b < O.cols(); ++b) {
        const Vec<T> o = O.col(b);
        const GmmComponents g = unpack_gmm<T>(d, o);
        out.col(b) = (g.means * g.weights).template cast<T>();
    }
    return out;
}

// Backpropagates dO (and an optional extra upstream gradient on G) through
// the head and temporal decoder, accumulating into `grads`. Writes the
// gradient on the latent batch to `dX` when requested.
template <typename T>
void backward_decoder(const PolicyParams<T>& p, const ForwardCache<T>& c, const Mat<T>& dO,
                      const Mat<T>* dG_extra, Grads<T>& grads, Mat<T>* dX = nullptr) {
    if (c.X.size() == 0 || c.A1.cols() != dO.cols() || c.G.cols() != dO.cols())
        throw InternalError("backward_decoder: missing or mismatched forward cache");
    grads[kHeadW].noalias() += dO * c.G.transpose();
    grads[kHeadB] += dO.rowwise().sum();
    Mat<T> dG = p[kHeadW].transpose() * dO;
    if (dG_extra != nullptr && dG_extra->size() > 0) dG += *dG_extra;
    grads[kDecW2].noalias() += dG * c.A1.transpose();
    grads[kDecB2] += dG.rowwise().sum();
    Mat<T> dZ1 = p[kDecW2].transpose() * dG;
    dZ1.array() *= (T(1) - c.A1.array().square());
    grads[kDecW1].noalias() += dZ1 * c.X.transpose();
    grads[kDecB1] += dZ1.rowwise().sum();
    if (dX != nullptr) *dX = p[kDecW1].transpose() * dZ1;
}

// ---------------------------------------------------------------------------
// Pretraining path: encode windows of projected observations and
// backpropagate into FiLM generators and the state encoder.

using WindowIndices = std::vector<std::size_t>;  // L indices into an observation pool

template <typename T>
Mat<T> encode_windows(const PolicyParams<T>& p, std::span<const ProjectedObservation<T>> pool,
                      std::span<const WindowIndices> windows) {
    Mat<T> X(p.dims.latent_size(), static_cast<Eigen::Index>(windows.size()));
    std::vector<Mat<T>> steps(static_cast<std::size_t>(p.dims.window));
    for (std::size_t w = 0; w < windows.size(); ++w) {
        require(static_cast<int>(windows[w].size()) == p.dims.window, "window must hold L indices");
        const auto film = film_coefficients(p, pool[windows[w].front()].task_language_id);
        for (int t = 0; t < p.dims.window; ++t)
            steps[static_cast<std::size_t>(t)] = encode_step(p, pool[windows[w][static_cast<std::size_t>(t)]], film);
        X.col(static_cast<Eigen::Index>(w)) = stack_window<T>(p.dims, steps);
    }
    return X;
}

template <typename T>
void backward_encoder(const PolicyParams<T>& p, std::span<const ProjectedObservation<T>> pool,
                      std::span<const WindowIndices> windows, const Mat<T>& dX, Grads<T>& grads) {
    const LatentShape shape = p.dims.latent_shape();
    const int E = p.dims.embed;
    for (std::size_t w = 0; w < windows.size(); ++w) {
        const int task = pool[windows[w].front()].task_language_id;
        const Vec<T> h_l = p[kLanguage].col(p.language_column(task));
        const auto film = film_coefficients(p, task);
        Mat<T> d_gamma = Mat<T>::Zero(E, kFilmSlots);
        Mat<T> d_beta = Mat<T>::Zero(E, kFilmSlots);
        const auto col = dX.col(static_cast<Eigen::Index>(w));
        for (int t = 0; t < p.dims.window; ++t) {
            const auto& o = pool[windows[w][static_cast<std::size_t>(t)]];
            const Vec<T> d_agent = col.segment(shape.offset(static_cast<int>(Modality::agent_view), t), E);
            const Vec<T> d_eye = col.segment(shape.offset(static_cast<int>(Modality::eye_in_hand), t), E);
            const Vec<T> d_state = col.segment(shape.offset(static_cast<int>(Modality::state), t), E);
            d_gamma.col(0) += d_agent.cwiseProduct(o.agent);
            d_beta.col(0) += d_agent;
            d_gamma.col(1) += d_eye.cwiseProduct(o.eye);
            d_beta.col(1) += d_eye;

            const Vec<T> hid = (p[kStateW1] * o.state + p[kStateB1]).array().tanh().matrix();
            const Vec<T> h_s = p[kStateW2] * hid + p[kStateB2];
            d_gamma.col(2) += d_state.cwiseProduct(h_s);
            d_beta.col(2) += d_state;
            const Vec<T> d_hs = d_state.cwiseProduct(film.gamma.col(2));
            grads[kStateW2].noalias() += d_hs * hid.transpose();
            grads[kStateB2] += d_hs;
            const Vec<T> d_pre = (p[kStateW2].transpose() * d_hs).cwiseProduct(
                (Vec<T>::Ones(E) - hid.cwiseProduct(hid)));
            grads[kStateW1].noalias() += d_pre * o.state.transpose();
            grads[kStateB1] += d_pre;
        }
        for (int s = 0; s < kFilmSlots; ++s) {
            grads[film_block(s, kGammaW)].noalias() += d_gamma.col(s) * h_l.transpose();
            grads[film_block(s, kGammaB)] += d_gamma.col(s);
            grads[film_block(s, kBetaW)].noalias() += d_beta.col(s) * h_l.transpose();
            grads[film_block(s, kBetaB)] += d_beta.col(s);
        }
    }
}

}  // namespace lifelong::policy
