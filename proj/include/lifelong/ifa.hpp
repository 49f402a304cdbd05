#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "lifelong/error.hpp"
#include "lifelong/geometry.hpp"
#include "lifelong/rng.hpp"

namespace lifelong::ifa {

enum class DistanceMode { angle, cosine };

inline std::string to_string(DistanceMode m) {
    return m == DistanceMode::angle ? "angle" : "cosine";
}

inline DistanceMode distance_mode_from_string(const std::string& s) {
    if (s == "angle") return DistanceMode::angle;
    if (s == "cosine") return DistanceMode::cosine;
    throw ConfigError("unknown distance_mode '" + s + "'");
}

struct IfaConfig {
    double alpha = 0.3;
    double lambda_ifa = 0.1;
    double selection_fraction = 0.5;
    DistanceMode distance_mode = DistanceMode::angle;

    void validate() const {
        require_config(alpha >= 0.0 && alpha < 1.0, "alpha must lie in [0, 1)");
        require_config(lambda_ifa >= 0.0, "lambda_ifa must be >= 0");
        require_config(selection_fraction > 0.0 && selection_fraction <= 1.0,
                       "selection_fraction must lie in (0, 1]");
    }
};

struct TaskReference {
    int task_id = 0;
    Embedding h_ref;  // unit norm
    int introduced_at_stage = 0;
};

// Append-only map task id -> fixed reference embedding.
class ReferenceRegistry {
public:
    const TaskReference& register_task(int task_id, const Embedding& language_embedding,
                                       int stage) {
        require(!refs_.contains(task_id),
                "task " + std::to_string(task_id) + " already has a reference");
        const double n = geometry::norm(language_embedding);
        require(n > 0.0 && std::isfinite(n), "reference embedding must have finite nonzero norm");
        TaskReference ref{task_id, (language_embedding.cast<double>() / n).cast<float>(), stage};
        return refs_.emplace(task_id, std::move(ref)).first->second;
    }

    bool contains(int task_id) const { return refs_.contains(task_id); }

    const TaskReference& at(int task_id) const {
        auto it = refs_.find(task_id);
        require(it != refs_.end(), "task " + std::to_string(task_id) + " has no registered reference");
        return it->second;
    }

    std::size_t size() const { return refs_.size(); }
    const std::map<int, TaskReference>& all() const { return refs_; }

private:
    std::map<int, TaskReference> refs_;
};

// (old_task, new_task): j was learned earlier, k is being learned now.
struct TaskPair {
    int old_task = 0;
    int new_task = 0;
    auto operator<=>(const TaskPair&) const = default;
};

using PairSet = std::set<TaskPair>;

// ---------------------------------------------------------------------------
// Modality similarity

// Mean cosine similarity over the full cross product of two latent lists.
inline double modality_similarity(std::span<const Embedding> a, std::span<const Embedding> b) {
    require(!a.empty() && !b.empty(), "modality_similarity needs nonempty latent lists");
    const auto dim = a.front().size();
    auto normalized = [dim](std::span<const Embedding> xs) {
        Eigen::MatrixXd out(dim, static_cast<Eigen::Index>(xs.size()));
        for (std::size_t i = 0; i < xs.size(); ++i) {
            require(xs[i].size() == dim, "embedding length mismatch");
            const Eigen::VectorXd v = xs[i].cast<double>();
            const double n = v.norm();
            require(n > 0.0, "zero-norm embedding in modality_similarity");
            out.col(static_cast<Eigen::Index>(i)) = v / n;
        }
        return out;
    };
    const Eigen::MatrixXd na = normalized(a);
    const Eigen::MatrixXd nb = normalized(b);
    const Eigen::MatrixXd gram = na.transpose() * nb;
    return gram.sum() / static_cast<double>(gram.size());
}

inline constexpr std::size_t kSimilarityCap = 256;

// At most `cap` latents drawn by a seeded stride over the list.
inline std::vector<Embedding> subsample_latents(std::span<const Embedding> xs, std::uint64_t seed,
                                                std::size_t cap = kSimilarityCap) {
    if (xs.size() <= cap) return {xs.begin(), xs.end()};
    Rng rng(seed);
    const double stride = static_cast<double>(xs.size()) / static_cast<double>(cap);
    const double offset = uniform01(rng) * stride;
    std::vector<Embedding> out;
    out.reserve(cap);
    for (std::size_t i = 0; i < cap; ++i) {
        auto idx = static_cast<std::size_t>(offset + stride * static_cast<double>(i));
        out.push_back(xs[std::min(idx, xs.size() - 1)]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pair selection

struct TaskModalityLatents {
    std::vector<Embedding> agent_view;
    std::vector<Embedding> language;
};

struct PairScore {
    int task_a = 0;  // task_a < task_b
    int task_b = 0;
    double sim_agent_view = 0.0;
    double sim_language = 0.0;
    bool selected = false;
};

namespace detail {

// Indices of the top ceil(fraction * n) scores, descending, ties by (a, b).
inline std::vector<bool> top_fraction(const std::vector<PairScore>& scores,
                                      double PairScore::*field, double fraction) {
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        const double sx = scores[x].*field;
        const double sy = scores[y].*field;
        if (sx != sy) return sx > sy;
        return std::tie(scores[x].task_a, scores[x].task_b) <
               std::tie(scores[y].task_a, scores[y].task_b);
    });
    const auto keep = static_cast<std::size_t>(
        std::ceil(fraction * static_cast<double>(scores.size()) - 1e-12));
    std::vector<bool> in_top(scores.size(), false);
    for (std::size_t r = 0; r < std::min(keep, order.size()); ++r) in_top[order[r]] = true;
    return in_top;
}

}  // namespace detail

// Scores every unordered pair among old ∪ new tasks and marks the
// old/new-crossing pairs that fall in the top fraction of both rankings.
inline std::vector<PairScore> score_pairs(const std::set<int>& old_tasks,
                                          const std::set<int>& new_tasks,
                                          const std::map<int, TaskModalityLatents>& latents,
                                          double selection_fraction) {
    require(selection_fraction > 0.0 && selection_fraction <= 1.0,
            "selection_fraction must lie in (0, 1]");
    std::set<int> all = old_tasks;
    for (int t : new_tasks) {
        require(!old_tasks.contains(t), "task " + std::to_string(t) + " is both old and new");
        all.insert(t);
    }
    for (int t : all) {
        auto it = latents.find(t);
        require(it != latents.end() && !it->second.agent_view.empty() &&
                    !it->second.language.empty(),
                "missing modality latents for task " + std::to_string(t));
    }

    std::vector<PairScore> scores;
    const std::vector<int> ids(all.begin(), all.end());
    for (std::size_t x = 0; x < ids.size(); ++x) {
        for (std::size_t y = x + 1; y < ids.size(); ++y) {
            const auto& la = latents.at(ids[x]);
            const auto& lb = latents.at(ids[y]);
            scores.push_back({ids[x], ids[y], modality_similarity(la.agent_view, lb.agent_view),
                              modality_similarity(la.language, lb.language), false});
        }
    }
    if (scores.empty()) return scores;

    const auto top_a = detail::top_fraction(scores, &PairScore::sim_agent_view, selection_fraction);
    const auto top_l = detail::top_fraction(scores, &PairScore::sim_language, selection_fraction);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool a_old = old_tasks.contains(scores[i].task_a);
        const bool b_old = old_tasks.contains(scores[i].task_b);
        scores[i].selected = top_a[i] && top_l[i] && (a_old != b_old);
    }
    return scores;
}

inline PairSet select_pairs(const std::set<int>& old_tasks, const std::set<int>& new_tasks,
                            const std::map<int, TaskModalityLatents>& latents,
                            double selection_fraction = 0.5) {
    PairSet out;
    if (old_tasks.empty() || new_tasks.empty()) return out;
    for (const auto& s : score_pairs(old_tasks, new_tasks, latents, selection_fraction)) {
        if (!s.selected) continue;
        if (old_tasks.contains(s.task_a))
            out.insert({s.task_a, s.task_b});
        else
            out.insert({s.task_b, s.task_a});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Loss

template <typename T>
struct IfaResult {
    double loss = 0.0;
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> grad;  // d loss / d g, E x n
    std::size_t active_pairs = 0;                           // pairs with samples in the batch
};

namespace detail {

template <typename DA, typename DB>
double distance(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b, DistanceMode m) {
    return m == DistanceMode::angle ? geometry::angular_distance(a, b)
                                    : geometry::cosine_distance(a, b);
}

template <typename DA, typename DB>
Eigen::VectorXd distance_grad(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b,
                              DistanceMode m) {
    return m == DistanceMode::angle ? geometry::angular_distance_grad(a, b)
                                    : geometry::cosine_distance_grad(a, b);
}

}  // namespace detail

// IFA hinge over the current-task globals (columns of `globals`, labelled by
// `task_ids`). Each pair term is the batch mean of
//   max(0, d(g, h_k) - d(g, h_j) + alpha * d(h_k, h_j))
// over the globals of task k; the loss averages the pair terms whose task k
// has at least one global in the batch.
template <typename T>
IfaResult<T> ifa_loss(const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& globals,
                      std::span<const int> task_ids, const ReferenceRegistry& refs,
                      const PairSet& pairs, const IfaConfig& cfg) {
    require(static_cast<std::size_t>(globals.cols()) == task_ids.size(),
            "ifa_loss: one task id per global latent required");
    IfaResult<T> out;
    out.grad = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>::Zero(globals.rows(), globals.cols());
    for (int id : task_ids) (void)refs.at(id);
    if (pairs.empty()) return out;
    cfg.validate();

    std::map<int, std::vector<Eigen::Index>> columns_of;
    for (std::size_t i = 0; i < task_ids.size(); ++i)
        columns_of[task_ids[i]].push_back(static_cast<Eigen::Index>(i));

    struct Term {
        const TaskPair* pair;
        const std::vector<Eigen::Index>* cols;
    };
    std::vector<Term> terms;
    for (const auto& p : pairs) {
        (void)refs.at(p.old_task);
        auto it = columns_of.find(p.new_task);
        if (it != columns_of.end()) terms.push_back({&p, &it->second});
    }
    out.active_pairs = terms.size();
    if (terms.empty()) return out;

    const double pair_weight = 1.0 / static_cast<double>(terms.size());
    Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(globals.rows(), globals.cols());
    double total = 0.0;
    for (const auto& term : terms) {
        const Eigen::VectorXd h_k = refs.at(term.pair->new_task).h_ref.template cast<double>();
        const Eigen::VectorXd h_j = refs.at(term.pair->old_task).h_ref.template cast<double>();
        const double margin = cfg.alpha * detail::distance(h_k, h_j, cfg.distance_mode);
        const double w = pair_weight / static_cast<double>(term.cols->size());
        double pair_sum = 0.0;
        for (Eigen::Index c : *term.cols) {
            const Eigen::VectorXd g = globals.col(c).template cast<double>();
            const double hinge = detail::distance(g, h_k, cfg.distance_mode) -
                                 detail::distance(g, h_j, cfg.distance_mode) + margin;
            if (hinge <= 0.0) continue;
            pair_sum += hinge;
            grad.col(c) += w * (detail::distance_grad(g, h_k, cfg.distance_mode) -
                                detail::distance_grad(g, h_j, cfg.distance_mode));
        }
        total += pair_sum / static_cast<double>(term.cols->size());
    }
    out.loss = total * pair_weight;
    out.grad = grad.cast<T>();
    return out;
}

}  // namespace lifelong::ifa
