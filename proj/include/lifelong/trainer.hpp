#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "lifelong/bench.hpp"
#include "lifelong/error.hpp"
#include "lifelong/ifa.hpp"
#include "lifelong/optimizer.hpp"
#include "lifelong/policy.hpp"
#include "lifelong/replay_buffer.hpp"
#include "lifelong/rng.hpp"

namespace lifelong::trainer {

using policy::Mat;
using policy::PolicyParams;

enum class Method { sequential, mlr, mlr_ifa };

inline std::string to_string(Method m) {
    switch (m) {
        case Method::sequential: return "sequential";
        case Method::mlr: return "mlr";
        case Method::mlr_ifa: return "mlr_ifa";
    }
    return "?";
}

inline Method method_from_string(const std::string& s) {
    if (s == "sequential") return Method::sequential;
    if (s == "mlr") return Method::mlr;
    if (s == "mlr_ifa") return Method::mlr_ifa;
    throw ConfigError("unknown method '" + s + "'");
}

struct TrainConfig {
    int epochs = 100;
    int batch_size = 10;
    double lr_init = 1e-4;
    double weight_decay = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double replay_ratio = 0.5;
    std::uint64_t seed = 0;
    ifa::IfaConfig ifa;

    optim::AdamWConfig adamw() const { return {beta1, beta2, eps, weight_decay}; }

    // Replayed windows appended to each batch of `batch_size` current windows,
    // so that replay makes up `replay_ratio` of the combined batch.
    int replay_per_batch() const {
        if (replay_ratio <= 0.0) return 0;
        return static_cast<int>(std::lround(batch_size * replay_ratio / (1.0 - replay_ratio)));
    }

    void validate() const {
        require_config(epochs >= 1, "epochs must be >= 1");
        require_config(batch_size >= 1, "batch_size must be >= 1");
        require_config(lr_init >= 0.0, "lr_init must be >= 0");
        require_config(weight_decay >= 0.0, "weight_decay must be >= 0");
        require_config(replay_ratio >= 0.0 && replay_ratio < 1.0, "replay_ratio must lie in [0, 1)");
        ifa.validate();
    }
};

struct StepRecord {
    int stage = 0;  // -1 for pretraining
    int epoch = 0;
    long step = 0;
    double lr = 0.0;
    double loss_bc = 0.0;
    double loss_ifa = 0.0;
    double loss_total = 0.0;
    std::uint64_t buffer_bytes = 0;
};

using StepLogger = std::function<void(const StepRecord&)>;

struct StageReport {
    int stage_index = 0;
    std::vector<int> tasks_introduced;
    double final_loss_bc = 0.0;   // mean over the last epoch
    double final_loss_ifa = 0.0;
    mlr::MemoryStats buffer_stats;
    double wall_seconds = 0.0;
    long steps = 0;
    ifa::PairSet pairs;
    std::vector<ifa::PairScore> pair_scores;
};

// ---------------------------------------------------------------------------
// Objectives shared by training and gradient checks

struct LossBreakdown {
    double bc = 0.0;
    double ifa = 0.0;
    double total = 0.0;
};

template <typename T>
struct ObjectiveResult {
    LossBreakdown loss;
    policy::Grads<T> grads;
};

// L = L_BC(all columns) + lambda * L_IFA(first n_current columns).
// Columns [0, n_current) are current-task windows labelled by task_ids;
// the rest are replayed windows that only enter the BC term.
template <typename T>
ObjectiveResult<T> lifelong_objective(const PolicyParams<T>& p, Mat<T> X, const Mat<T>& targets,
                                      std::span<const int> current_task_ids,
                                      const ifa::ReferenceRegistry& refs, const ifa::PairSet& pairs,
                                      const ifa::IfaConfig& ifa_cfg, double lambda) {
    const auto n_current = static_cast<Eigen::Index>(current_task_ids.size());
    require(n_current <= X.cols(), "more task ids than batch columns");
    const auto cache = policy::forward_batch<T>(p, std::move(X));
    const auto bc = policy::bc_loss<T>(p.dims, cache.O, targets);
    ObjectiveResult<T> out;
    out.grads = policy::zero_grads(p);
    out.loss.bc = bc.loss;
    Mat<T> dG;
    if (lambda > 0.0 && !pairs.empty() && n_current > 0) {
        const Mat<T> g_cur = cache.G.leftCols(n_current);
        const auto r = ifa::ifa_loss<T>(g_cur, current_task_ids, refs, pairs, ifa_cfg);
        out.loss.ifa = r.loss;
        dG = Mat<T>::Zero(cache.G.rows(), cache.G.cols());
        dG.leftCols(n_current) = r.grad * static_cast<T>(lambda);
    } else if (!pairs.empty() && n_current > 0) {
        const Mat<T> g_cur = cache.G.leftCols(n_current);
        out.loss.ifa = ifa::ifa_loss<T>(g_cur, current_task_ids, refs, pairs, ifa_cfg).loss;
    }
    out.loss.total = out.loss.bc + lambda * out.loss.ifa;
    policy::backward_decoder<T>(p, cache, bc.dO, dG.size() ? &dG : nullptr, out.grads);
    return out;
}

// BC objective of pretraining, backpropagated into FiLM and the state encoder.
template <typename T>
ObjectiveResult<T> pretrain_objective(const PolicyParams<T>& p,
                                      std::span<const policy::ProjectedObservation<T>> pool,
                                      std::span<const policy::WindowIndices> windows,
                                      const Mat<T>& targets) {
    const auto cache = policy::forward_batch<T>(p, policy::encode_windows<T>(p, pool, windows));
    const auto bc = policy::bc_loss<T>(p.dims, cache.O, targets);
    ObjectiveResult<T> out;
    out.grads = policy::zero_grads(p);
    out.loss.bc = out.loss.total = bc.loss;
    Mat<T> dX;
    policy::backward_decoder<T>(p, cache, bc.dO, nullptr, out.grads, &dX);
    policy::backward_encoder<T>(p, pool, windows, dX, out.grads);
    return out;
}

// ---------------------------------------------------------------------------
// Optimizer plumbing

class PolicyOptimizer {
public:
    PolicyOptimizer(const optim::AdamWConfig& cfg, policy::Phase phase) : adam_(cfg) {
        for (int b = 0; b < policy::kNumBlocks; ++b) {
            mask_[static_cast<std::size_t>(b)] = policy::trainable_in(b, phase);
            names_[static_cast<std::size_t>(b)] = policy::block_info(b).name;
        }
    }

    void step(PolicyParams<float>& p, const policy::Grads<float>& g, double lr) {
        adam_.step(std::span(p.blocks), std::span(g), std::span<const bool>(mask_.data(), mask_.size()),
                   lr, std::span<const std::string>(names_));
    }

private:
    optim::AdamW<float> adam_;
    std::array<bool, policy::kNumBlocks> mask_{};
    std::array<std::string, policy::kNumBlocks> names_;
};

inline long steps_per_epoch(std::size_t n_windows, int batch_size) {
    return static_cast<long>((n_windows + static_cast<std::size_t>(batch_size) - 1) /
                             static_cast<std::size_t>(batch_size));
}

inline void check_finite_loss(double v, int stage, long step) {
    if (!std::isfinite(v))
        throw NumericalError("non-finite loss at stage " + std::to_string(stage) + ", step " +
                             std::to_string(step));
}

// ---------------------------------------------------------------------------
// Pretraining

struct DemoWindows {
    std::vector<policy::ProjectedObservation<float>> pool;
    std::vector<policy::WindowIndices> windows;
    Mat<float> targets;  // A x n_windows
    std::vector<int> task_ids;
    std::vector<int> timesteps;
};

// Every (demo, t) window of the given tasks, front-padded at trajectory start.
inline DemoWindows collect_windows(const bench::Suite& s, const PolicyParams<float>& p,
                                   const std::vector<int>& tasks) {
    DemoWindows d;
    std::vector<Eigen::VectorXf> targets;
    for (int id : tasks) {
        for (const auto& tr : s.demos_of(id)) {
            const std::size_t base = d.pool.size();
            for (Eigen::Index t = 0; t < tr.states.cols(); ++t)
                d.pool.push_back(policy::project(p, s.render(id, tr.states.col(t))));
            for (Eigen::Index t = 0; t < tr.states.cols(); ++t) {
                auto w = bench::window_steps(static_cast<int>(t), p.dims.window);
                for (auto& i : w) i += base;
                d.windows.push_back(std::move(w));
                targets.push_back(tr.actions.col(t));
                d.task_ids.push_back(id);
                d.timesteps.push_back(static_cast<int>(t));
            }
        }
    }
    d.targets.resize(p.dims.action_dim, static_cast<Eigen::Index>(targets.size()));
    for (std::size_t i = 0; i < targets.size(); ++i) d.targets.col(static_cast<Eigen::Index>(i)) = targets[i];
    return d;
}

struct PretrainResult {
    std::uint64_t frozen_hash = 0;
    double initial_loss = 0.0;  // mean BC loss of the first epoch
    double final_loss = 0.0;    // mean BC loss of the last epoch
    long steps = 0;
};

// Multi-task BC over the pooled base-task demonstrations, training every
// non-fixed block. On return everything but decoder + head counts as frozen.
inline PretrainResult pretrain(const bench::Suite& s, const std::vector<int>& base_tasks,
                               PolicyParams<float>& p, const TrainConfig& cfg,
                               const StepLogger& log = {}) {
    cfg.validate();
    require_config(!base_tasks.empty(), "pretraining needs at least one base task");
    const DemoWindows data = collect_windows(s, p, base_tasks);
    const std::size_t n = data.windows.size();
    require_config(n > 0, "base tasks have no demonstrations");

    PolicyOptimizer opt(cfg.adamw(), policy::Phase::pretrain);
    Rng shuffle = make_stream(cfg.seed, "pretrain_shuffle");
    const long per_epoch = steps_per_epoch(n, cfg.batch_size);
    const long total = per_epoch * cfg.epochs;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});

    PretrainResult res;
    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<policy::WindowIndices> wins;
            Mat<float> targets(p.dims.action_dim, static_cast<Eigen::Index>(end - start));
            for (std::size_t i = start; i < end; ++i) {
                wins.push_back(data.windows[order[i]]);
                targets.col(static_cast<Eigen::Index>(i - start)) = data.targets.col(static_cast<Eigen::Index>(order[i]));
            }
            const auto obj = pretrain_objective<float>(p, data.pool, wins, targets);
            check_finite_loss(obj.loss.total, -1, step);
            const double lr = optim::learning_rate_at(step, total, cfg.lr_init);
            opt.step(p, obj.grads, lr);
            epoch_loss += obj.loss.bc * static_cast<double>(end - start);
            if (log) log({-1, epoch, step, lr, obj.loss.bc, 0.0, obj.loss.total, 0});
            ++step;
        }
        epoch_loss /= static_cast<double>(n);
        if (epoch == 0) res.initial_loss = epoch_loss;
        res.final_loss = epoch_loss;
    }
    res.steps = step;
    res.frozen_hash = p.frozen_hash();
    return res;
}

// ---------------------------------------------------------------------------
// Lifelong stage

struct EncodedTaskData {
    std::vector<LatentSequence> latents;
    Mat<float> X;        // D x n
    Mat<float> targets;  // A x n
    std::vector<int> task_ids;
};

// Frozen-encoder latents for every demonstration window of `tasks`.
inline EncodedTaskData encode_task_windows(const bench::Suite& s, const PolicyParams<float>& p,
                                           const std::vector<int>& tasks) {
    const DemoWindows d = collect_windows(s, p, tasks);
    EncodedTaskData out;
    out.X = policy::encode_windows<float>(p, d.pool, d.windows);
    out.targets = d.targets;
    out.task_ids = d.task_ids;
    out.latents.reserve(d.windows.size());
    for (std::size_t i = 0; i < d.windows.size(); ++i)
        out.latents.push_back({out.X.col(static_cast<Eigen::Index>(i)), d.task_ids[i], d.timesteps[i]});
    return out;
}

// Agent-view feature of the newest timestep in a window.
inline Embedding newest_agent_view(const LatentSequence& l, const LatentShape& shape) {
    return l.row(shape, Modality::agent_view, shape.window - 1);
}

inline std::map<int, ifa::TaskModalityLatents> pair_selection_latents(
    const EncodedTaskData& current, const mlr::ReplayBuffer& buffer,
    const ifa::ReferenceRegistry& refs, const LatentShape& shape, std::uint64_t seed) {
    std::map<int, std::vector<Embedding>> agent;
    for (const auto& l : current.latents) agent[l.task_id].push_back(newest_agent_view(l, shape));
    for (const auto& [id, part] : buffer.partitions())
        for (const auto& e : part) agent[id].push_back(newest_agent_view(e.latent, shape));
    std::map<int, ifa::TaskModalityLatents> out;
    for (auto& [id, list] : agent) {
        auto& tm = out[id];
        tm.agent_view = ifa::subsample_latents(list, stream_seed(seed, "similarity_subsample",
                                                                 static_cast<std::uint64_t>(id)));
        if (refs.contains(id)) tm.language = {refs.at(id).h_ref};
    }
    return out;
}

struct StageContext {
    const bench::Suite& suite;
    mlr::ReplayBuffer& buffer;
    ifa::ReferenceRegistry& refs;
    Method method = Method::mlr_ifa;
    int stage_index = 0;
    StepLogger log;
};

inline StageReport lifelong_stage(const std::vector<int>& stage_tasks, PolicyParams<float>& p,
                                  StageContext& ctx, const TrainConfig& cfg) {
    cfg.validate();
    require_config(!stage_tasks.empty(), "a lifelong stage needs at least one task");
    const auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t stage_seed = stream_seed(cfg.seed, "stage", static_cast<std::uint64_t>(ctx.stage_index));

    StageReport rep;
    rep.stage_index = ctx.stage_index;
    rep.tasks_introduced = stage_tasks;

    const EncodedTaskData cur = encode_task_windows(ctx.suite, p, stage_tasks);
    const std::size_t n = cur.latents.size();
    require_config(n > 0, "stage tasks have no demonstrations");

    for (int id : stage_tasks)
        ctx.refs.register_task(id, ctx.suite.task(id).language_embedding, ctx.stage_index);

    const bool replay = ctx.method != Method::sequential;
    const double lambda = ctx.method == Method::mlr_ifa ? cfg.ifa.lambda_ifa : 0.0;

    // Pairs are fixed for the whole stage.
    if (replay && !ctx.buffer.empty()) {
        std::set<int> old_tasks;
        for (const auto& [id, part] : ctx.buffer.partitions())
            if (!part.empty()) old_tasks.insert(id);
        const std::set<int> new_tasks(stage_tasks.begin(), stage_tasks.end());
        const auto latents = pair_selection_latents(cur, ctx.buffer, ctx.refs, p.dims.latent_shape(), stage_seed);
        rep.pair_scores = ifa::score_pairs(old_tasks, new_tasks, latents, cfg.ifa.selection_fraction);
        rep.pairs = ifa::select_pairs(old_tasks, new_tasks, latents, cfg.ifa.selection_fraction);
    }

    PolicyOptimizer opt(cfg.adamw(), policy::Phase::lifelong);
    Rng shuffle = make_stream(stage_seed, "shuffle");
    Rng replay_rng = make_stream(stage_seed, "replay");
    const long per_epoch = steps_per_epoch(n, cfg.batch_size);
    const long total = per_epoch * cfg.epochs;
    const int n_replay = replay ? cfg.replay_per_batch() : 0;
    const auto D = static_cast<Eigen::Index>(p.dims.latent_size());
    const std::uint64_t buffer_bytes = ctx.buffer.memory_stats().total_bytes_latent;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle);
        double sum_bc = 0.0, sum_ifa = 0.0;
        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
            const auto nc = static_cast<Eigen::Index>(end - start);
            const auto replayed = mlr::sample_replay_batch(ctx.buffer, static_cast<std::size_t>(n_replay), replay_rng);
            const auto nr = static_cast<Eigen::Index>(replayed.size());
            Mat<float> X(D, nc + nr);
            Mat<float> targets(p.dims.action_dim, nc + nr);
            std::vector<int> ids(static_cast<std::size_t>(nc));
            for (Eigen::Index i = 0; i < nc; ++i) {
                const auto src = static_cast<Eigen::Index>(order[start + static_cast<std::size_t>(i)]);
                X.col(i) = cur.X.col(src);
                targets.col(i) = cur.targets.col(src);
                ids[static_cast<std::size_t>(i)] = cur.task_ids[static_cast<std::size_t>(src)];
            }
            for (Eigen::Index i = 0; i < nr; ++i) {
                X.col(nc + i) = replayed[static_cast<std::size_t>(i)]->latent.data;
                targets.col(nc + i) = replayed[static_cast<std::size_t>(i)]->action;
            }
            const auto obj = lifelong_objective<float>(p, std::move(X), targets, ids, ctx.refs, rep.pairs,
                                                       cfg.ifa, lambda);
            check_finite_loss(obj.loss.total, ctx.stage_index, step);
            const double lr = optim::learning_rate_at(step, total, cfg.lr_init);
            opt.step(p, obj.grads, lr);
            sum_bc += obj.loss.bc;
            sum_ifa += obj.loss.ifa;
            if (ctx.log)
                ctx.log({ctx.stage_index, epoch, step, lr, obj.loss.bc, obj.loss.ifa, obj.loss.total, buffer_bytes});
            ++step;
        }
        rep.final_loss_bc = sum_bc / static_cast<double>(per_epoch);
        rep.final_loss_ifa = sum_ifa / static_cast<double>(per_epoch);
    }
    rep.steps = step;

    if (replay) {
        for (std::size_t i = 0; i < n; ++i) {
            BufferEntry e{cur.latents[i], cur.targets.col(static_cast<Eigen::Index>(i)), cur.task_ids[i]};
            ctx.buffer.offer(std::move(e));
        }
    }
    rep.buffer_stats = ctx.buffer.memory_stats({ctx.suite.cfg.image_side, ctx.suite.cfg.state_dim});
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

}  // namespace lifelong::trainer
