#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <concepts>
#include <cstdint>
#include <deque>
#include <iomanip>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "lifelong/error.hpp"
#include "lifelong/geometry.hpp"
#include "lifelong/ifa.hpp"
#include "lifelong/policy.hpp"
#include "lifelong/rng.hpp"

namespace lifelong::bench {

using policy::Observation;

struct SuiteConfig {
    int n_base = 4;
    int n_lifelong = 8;
    int tasks_per_stage = 1;
    double similarity_knob = 0.6;
    int context_dim = 16;
    int traj_len = 40;  // T_syn
    int demos_base = 50;
    int demos_lifelong = 10;
    int image_side = 32;
    int state_dim = 8;
    int embed = 64;
    int action_dim = 4;
    double dynamics_sharing = 0.5;  // fraction of action-map variance shared by all tasks

    int n_tasks() const { return n_base + n_lifelong; }
    int n_stages() const { return (n_lifelong + tasks_per_stage - 1) / tasks_per_stage; }

    void validate() const {
        require_config(n_base >= 1, "n_base must be >= 1");
        require_config(n_lifelong >= 1, "n_lifelong must be >= 1");
        require_config(tasks_per_stage >= 1, "tasks_per_stage must be >= 1");
        require_config(similarity_knob >= 0.0 && similarity_knob <= 1.0,
                       "similarity_knob must lie in [0, 1]");
        require_config(context_dim >= n_tasks() + 1,
                       "context_dim must exceed the task count (orthogonal fresh directions)");
        require_config(embed >= context_dim, "embed must be >= context_dim");
        require_config(traj_len >= 1 && demos_base >= 1 && demos_lifelong >= 1,
                       "trajectory length and demonstration counts must be positive");
        require_config(image_side >= 1 && state_dim >= 1 && action_dim >= 1,
                       "observation dimensions must be positive");
        require_config(dynamics_sharing >= 0.0 && dynamics_sharing <= 1.0,
                       "dynamics_sharing must lie in [0, 1]");
    }
};

struct TaskSpec {
    int task_id = 0;
    bool base = false;
    Eigen::MatrixXf dynamics;  // A x (C + S): a = W [c; s]
    Eigen::VectorXf context;   // C, unit norm
    Embedding language_embedding;
    double similarity_knob = 0.0;  // per-task effective knob
};

struct Trajectory {
    int task_id = 0;
    Eigen::MatrixXf states;   // S x T
    Eigen::MatrixXf actions;  // A x T
};

// Fixed rendering and dynamics shared by every task in a suite.
struct World {
    Eigen::MatrixXf agent_context_fields;  // V^2 x C
    Eigen::MatrixXf agent_state_fields;    // V^2 x S
    Eigen::MatrixXf eye_context_fields;
    Eigen::MatrixXf eye_state_fields;
    Eigen::MatrixXf control;               // S x A
    double state_decay = 0.8;
    double control_gain = 0.3;
};

struct Suite {
    SuiteConfig cfg;
    std::uint64_t seed = 0;
    Eigen::VectorXf anchor;
    World world;
    std::vector<TaskSpec> tasks;                      // base first, then lifelong order
    std::vector<std::vector<Trajectory>> demos;       // parallel to tasks
    std::vector<double> success_threshold;            // tau per task

    const TaskSpec& task(int id) const { return tasks.at(static_cast<std::size_t>(id)); }
    const std::vector<Trajectory>& demos_of(int id) const { return demos.at(static_cast<std::size_t>(id)); }

    std::vector<int> base_ids() const {
        std::vector<int> ids;
        for (const auto& t : tasks)
            if (t.base) ids.push_back(t.task_id);
        return ids;
    }
    std::vector<int> lifelong_ids() const {
        std::vector<int> ids;
        for (const auto& t : tasks)
            if (!t.base) ids.push_back(t.task_id);
        return ids;
    }
    // Lifelong task ids grouped by stage.
    std::vector<std::vector<int>> stages() const {
        std::vector<std::vector<int>> out;
        const auto ids = lifelong_ids();
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (i % static_cast<std::size_t>(cfg.tasks_per_stage) == 0) out.emplace_back();
            out.back().push_back(ids[i]);
        }
        return out;
    }
    std::vector<Embedding> language_table() const {
        std::vector<Embedding> out;
        for (const auto& t : tasks) out.push_back(t.language_embedding);
        return out;
    }
    std::vector<int> task_ids() const {
        std::vector<int> out;
        for (const auto& t : tasks) out.push_back(t.task_id);
        return out;
    }
    policy::PolicyDims policy_dims(policy::PolicyDims d = {}) const {
        d.image_side = cfg.image_side;
        d.state_dim = cfg.state_dim;
        d.embed = cfg.embed;
        d.action_dim = cfg.action_dim;
        return d;
    }

    Observation render(int task_id, const Eigen::VectorXf& state) const {
        const auto& t = task(task_id);
        Observation o;
        o.agent_view = world.agent_context_fields * t.context + 0.5f * (world.agent_state_fields * state);
        o.eye_in_hand = 0.5f * (world.eye_context_fields * t.context) + world.eye_state_fields * state;
        o.state = state;
        o.task_language_id = task_id;
        return o;
    }

    Eigen::VectorXf expert_action(int task_id, const Eigen::VectorXf& state) const {
        const auto& t = task(task_id);
        const int C = cfg.context_dim;
        return t.dynamics.leftCols(C) * t.context + t.dynamics.rightCols(cfg.state_dim) * state;
    }

    Eigen::VectorXf step(const Eigen::VectorXf& state, const Eigen::VectorXf& action) const {
        const Eigen::VectorXf drive = (world.control * action).array().tanh().matrix();
        return static_cast<float>(world.state_decay) * state +
               static_cast<float>(world.control_gain) * drive;
    }

    Eigen::VectorXf initial_state(Rng& rng) const {
        std::normal_distribution<float> normal(0.0f, 0.5f);
        Eigen::VectorXf s(cfg.state_dim);
        for (auto& v : s) v = normal(rng);
        return s;
    }
};

namespace detail {

// Unit-RMS sum of three low-frequency plane waves on a V x V grid.
inline Eigen::VectorXf smooth_field(int side, Rng& rng) {
    std::uniform_int_distribution<int> freq(-3, 3);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    std::normal_distribution<double> amp(0.0, 1.0);
    Eigen::VectorXd f = Eigen::VectorXd::Zero(side * side);
    for (int q = 0; q < 3; ++q) {
        int kx = freq(rng);
        const int ky = freq(rng);
        if (kx == 0 && ky == 0) kx = 1;
        const double ph = phase(rng);
        const double a = amp(rng);
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x)
                f(y * side + x) += a * std::cos(2.0 * std::numbers::pi * (kx * x + ky * y) / side + ph);
    }
    const double rms = std::sqrt(f.squaredNorm() / static_cast<double>(f.size()));
    return (rms > 0 ? f / rms : f).cast<float>();
}

inline Eigen::MatrixXf fields(int side, int count, Rng& rng) {
    Eigen::MatrixXf m(side * side, count);
    for (int i = 0; i < count; ++i) m.col(i) = smooth_field(side, rng);
    return m;
}

inline Eigen::VectorXd gaussian_vector(int n, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd v(n);
    for (auto& x : v) x = normal(rng);
    return v;
}

inline Trajectory roll_expert(const Suite& s, int task_id, Rng& rng) {
    Trajectory tr;
    tr.task_id = task_id;
    const int T = s.cfg.traj_len;
    tr.states.resize(s.cfg.state_dim, T);
    tr.actions.resize(s.cfg.action_dim, T);
    Eigen::VectorXf st = s.initial_state(rng);
    for (int t = 0; t < T; ++t) {
        tr.states.col(t) = st;
        tr.actions.col(t) = s.expert_action(task_id, st);
        st = s.step(st, tr.actions.col(t));
    }
    return tr;
}

}  // namespace detail

// Deterministic suite: shared anchor context, per-task contexts
//   c = k * anchor + sqrt(1 - k^2) * u,   u orthonormal to the anchor and each other,
// with per-task knob k = knob^e (e drawn in [0.5, 2]) so pairwise context
// cosines vary around knob^2. Language embeddings are an isometric lift of
// the context into R^E.
inline Suite generate_suite(const SuiteConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Suite s;
    s.cfg = cfg;
    s.seed = seed;
    Rng rng(seed);
    const int C = cfg.context_dim;
    const int S = cfg.state_dim;
    const int A = cfg.action_dim;
    const int N = cfg.n_tasks();

    // Orthonormal basis: column 0 is the anchor, columns 1..N fresh directions.
    Eigen::MatrixXd raw(C, N + 1);
    for (int i = 0; i <= N; ++i) raw.col(i) = detail::gaussian_vector(C, rng);
    Eigen::MatrixXd basis(C, N + 1);
    for (int i = 0; i <= N; ++i) {
        Eigen::VectorXd v = raw.col(i);
        for (int j = 0; j < i; ++j) v -= basis.col(j).dot(v) * basis.col(j);
        for (int j = 0; j < i; ++j) v -= basis.col(j).dot(v) * basis.col(j);
        basis.col(i) = v / v.norm();
    }
    s.anchor = basis.col(0).cast<float>();

    Eigen::MatrixXd lift_raw(cfg.embed, C);
    for (int i = 0; i < C; ++i) lift_raw.col(i) = detail::gaussian_vector(cfg.embed, rng);
    const Eigen::MatrixXd lift = Eigen::HouseholderQR<Eigen::MatrixXd>(lift_raw).householderQ() *
                                 Eigen::MatrixXd::Identity(cfg.embed, C);

    s.world.agent_context_fields = detail::fields(cfg.image_side, C, rng);
    s.world.agent_state_fields = detail::fields(cfg.image_side, S, rng);
    s.world.eye_context_fields = detail::fields(cfg.image_side, C, rng);
    s.world.eye_state_fields = detail::fields(cfg.image_side, S, rng);
    s.world.control = (detail::gaussian_vector(S * A, rng) / std::sqrt(A)).cast<float>().reshaped(S, A);

    const Eigen::VectorXd shared_map = detail::gaussian_vector(A * (C + S), rng);
    std::uniform_real_distribution<double> exponent(0.5, 2.0);
    for (int i = 0; i < N; ++i) {
        TaskSpec t;
        t.task_id = i;
        t.base = i < cfg.n_base;
        const double k = cfg.similarity_knob == 0.0 || cfg.similarity_knob == 1.0
                             ? cfg.similarity_knob
                             : std::pow(cfg.similarity_knob, exponent(rng));
        t.similarity_knob = k;
        const Eigen::VectorXd c = k * basis.col(0) + std::sqrt(1.0 - k * k) * basis.col(i + 1);
        t.context = c.cast<float>();
        t.language_embedding = (lift * c).cast<float>();
        const Eigen::VectorXd w = 0.7 * (std::sqrt(cfg.dynamics_sharing) * shared_map +
                                         std::sqrt(1.0 - cfg.dynamics_sharing) *
                                             detail::gaussian_vector(A * (C + S), rng));
        t.dynamics = w.cast<float>().reshaped(A, C + S);
        s.tasks.push_back(std::move(t));
    }

    s.demos.resize(static_cast<std::size_t>(N));
    s.success_threshold.resize(static_cast<std::size_t>(N));
    for (int i = 0; i < N; ++i) {
        const int n_demos = s.tasks[static_cast<std::size_t>(i)].base ? cfg.demos_base : cfg.demos_lifelong;
        double sq = 0.0;
        std::size_t steps = 0;
        for (int d = 0; d < n_demos; ++d) {
            auto tr = detail::roll_expert(s, i, rng);
            sq += tr.actions.cast<double>().squaredNorm();
            steps += static_cast<std::size_t>(tr.actions.cols());
            s.demos[static_cast<std::size_t>(i)].push_back(std::move(tr));
        }
        s.success_threshold[static_cast<std::size_t>(i)] = 0.1 * std::sqrt(sq / static_cast<double>(steps));
    }
    return s;
}

// Observation window ending at step t, front-padded by repeating step 0.
inline std::vector<std::size_t> window_steps(int t, int window) {
    std::vector<std::size_t> out(static_cast<std::size_t>(window));
    for (int i = 0; i < window; ++i) out[static_cast<std::size_t>(i)] = static_cast<std::size_t>(std::max(0, t - window + 1 + i));
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation

template <typename A>
concept Actor = requires(A a, const Observation& o) {
    a.begin_trial();
    { a.act(o) } -> std::convertible_to<Eigen::VectorXf>;
};

// Closed-loop policy that keeps its own L-step feature window.
class PolicyActor {
public:
    explicit PolicyActor(const policy::PolicyParams<float>& p, bool record_globals = false)
        : p_(p), record_(record_globals) {}

    void begin_trial() { steps_.clear(); }

    Eigen::VectorXf act(const Observation& o) {
        if (!film_ || film_task_ != o.task_language_id) {
            film_ = policy::film_coefficients(p_, o.task_language_id);
            film_task_ = o.task_language_id;
        }
        auto feat = policy::encode_step(p_, policy::project(p_, o), *film_);
        if (steps_.empty()) steps_.assign(static_cast<std::size_t>(p_.dims.window), feat);
        else {
            steps_.pop_front();
            steps_.push_back(std::move(feat));
        }
        const std::vector<policy::Mat<float>> window(steps_.begin(), steps_.end());
        const auto cache = policy::forward_batch<float>(p_, policy::stack_window<float>(p_.dims, window));
        if (record_) globals_.push_back({cache.G.col(0), o.task_language_id});
        return policy::head_actions<float>(p_.dims, cache.O).col(0);
    }

    struct Recorded {
        Embedding g;
        int task_id;
    };
    const std::vector<Recorded>& globals() const { return globals_; }

private:
    const policy::PolicyParams<float>& p_;
    bool record_;
    std::optional<policy::FilmCoefficients<float>> film_;
    int film_task_ = -1;
    std::deque<policy::Mat<float>> steps_;
    std::vector<Recorded> globals_;
};

class ExpertActor {
public:
    ExpertActor(const Suite& s, int task_id) : s_(s), task_(task_id) {}
    void begin_trial() {}
    Eigen::VectorXf act(const Observation& o) const { return s_.expert_action(task_, o.state); }

private:
    const Suite& s_;
    int task_;
};

class ConstantActor {
public:
    explicit ConstantActor(Eigen::VectorXf a) : a_(std::move(a)) {}
    void begin_trial() {}
    Eigen::VectorXf act(const Observation&) const { return a_; }

private:
    Eigen::VectorXf a_;
};

// Mean per-step action error ‖â_t − a_t‖ over one closed-loop rollout.
template <Actor A>
double rollout_error(A& actor, const Suite& s, int task_id, Eigen::VectorXf state) {
    actor.begin_trial();
    double err = 0.0;
    for (int t = 0; t < s.cfg.traj_len; ++t) {
        const Observation o = s.render(task_id, state);
        const Eigen::VectorXf a_hat = actor.act(o);
        const Eigen::VectorXf a_star = s.expert_action(task_id, state);
        err += (a_hat - a_star).cast<double>().norm();
        state = s.step(state, a_hat);
    }
    return err / s.cfg.traj_len;
}

// Fraction of n_trials rollouts whose mean action error is below the task's
// success threshold. Trial t draws its initial state from stream (seed, task, t).
template <Actor A>
double evaluate_policy(A& actor, const Suite& s, int task_id, int n_trials, std::uint64_t seed) {
    require(n_trials >= 1, "n_trials must be >= 1");
    const double tau = s.success_threshold.at(static_cast<std::size_t>(task_id));
    int successes = 0;
    for (int trial = 0; trial < n_trials; ++trial) {
        Rng rng = make_stream(seed, "trial", static_cast<std::uint64_t>(task_id) * 1000003ULL +
                                                 static_cast<std::uint64_t>(trial));
        if (rollout_error(actor, s, task_id, s.initial_state(rng)) < tau) ++successes;
    }
    return static_cast<double>(successes) / n_trials;
}

inline double evaluate_policy(const policy::PolicyParams<float>& p, const Suite& s, int task_id,
                              int n_trials, std::uint64_t seed) {
    PolicyActor actor(p);
    return evaluate_policy(actor, s, task_id, n_trials, seed);
}

// ---------------------------------------------------------------------------
// Success matrix and lifelong metrics

// r[i][j]: success on lifelong task j after learning through task i. Rows
// are ragged: row i holds columns 0..i.
struct SuccessMatrix {
    std::vector<int> task_ids;
    std::vector<std::vector<double>> r;

    std::size_t size() const { return task_ids.size(); }

    std::string to_csv() const {
        std::ostringstream os;
        os << "learned_through";
        for (int id : task_ids) os << ',' << id;
        os << '\n';
        os << std::setprecision(17);
        for (std::size_t i = 0; i < r.size(); ++i) {
            os << task_ids[i];
            for (std::size_t j = 0; j < task_ids.size(); ++j) {
                os << ',';
                if (j <= i && j < r[i].size()) os << r[i][j];
            }
            os << '\n';
        }
        return os.str();
    }

    static SuccessMatrix from_csv(const std::string& text) {
        SuccessMatrix m;
        std::istringstream in(text);
        std::string line;
        require(static_cast<bool>(std::getline(in, line)), "empty success matrix CSV");
        {
            std::istringstream hs(line);
            std::string cell;
            std::getline(hs, cell, ',');
            while (std::getline(hs, cell, ',')) m.task_ids.push_back(std::stoi(cell));
        }
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::istringstream ls(line);
            std::string cell;
            std::getline(ls, cell, ',');
            std::vector<double> row;
            while (std::getline(ls, cell, ',')) {
                if (cell.empty()) break;
                row.push_back(std::stod(cell));
            }
            m.r.push_back(std::move(row));
        }
        for (std::size_t i = 0; i < m.r.size(); ++i)
            require(m.r[i].size() == i + 1, "success matrix row " + std::to_string(i) + " must hold " +
                                                 std::to_string(i + 1) + " entries");
        require(m.r.size() == m.task_ids.size(), "success matrix must be square lower-triangular");
        return m;
    }
};

struct LifelongMetrics {
    double fwt = 0.0;
    double nbt = 0.0;
    double auc = 0.0;
    std::size_t n_tasks = 0;
    bool nbt_defined = true;  // false when only one task was learned
};

// FWT, NBT and AUC over a lower-triangular success matrix, with the
// 1-indexed normalisers written out (m runs 1..M).
inline LifelongMetrics lifelong_metrics(const std::vector<std::vector<double>>& r) {
    const std::size_t M = r.size();
    require(M >= 1, "success matrix must hold at least one task");
    for (std::size_t i = 0; i < M; ++i)
        require(r[i].size() >= i + 1, "success matrix row " + std::to_string(i) + " is incomplete");
    LifelongMetrics out;
    out.n_tasks = M;
    double fwt = 0.0, nbt = 0.0, auc = 0.0;
    for (std::size_t m = 1; m <= M; ++m) {
        const double diag = r[m - 1][m - 1];
        fwt += diag;
        double later = 0.0, drop = 0.0;
        for (std::size_t q = m + 1; q <= M; ++q) {
            later += r[q - 1][m - 1];
            drop += diag - r[q - 1][m - 1];
        }
        if (m < M) nbt += drop / static_cast<double>(M - m);
        auc += (diag + later) / static_cast<double>(M - m + 1);
    }
    out.fwt = fwt / static_cast<double>(M);
    out.auc = auc / static_cast<double>(M);
    if (M == 1) {
        out.nbt = 0.0;
        out.nbt_defined = false;
    } else {
        out.nbt = nbt / static_cast<double>(M - 1);
    }
    return out;
}

inline LifelongMetrics lifelong_metrics(const SuccessMatrix& m) { return lifelong_metrics(m.r); }

// ---------------------------------------------------------------------------
// Separation diagnostic

struct SeparationReport {
    std::vector<int> task_ids;       // rows
    std::vector<int> reference_ids;  // columns
    Eigen::MatrixXd similarity;      // mean cos(g of row task, reference of column task)
};

// Mean cosine similarity between recorded globals of each row task and the
// reference of each registered task.
inline SeparationReport separation_from_globals(const std::vector<PolicyActor::Recorded>& globals,
                                                const ifa::ReferenceRegistry& refs,
                                                const std::vector<int>& tasks) {
    SeparationReport rep;
    rep.task_ids = tasks;
    for (const auto& [id, ref] : refs.all()) rep.reference_ids.push_back(id);
    rep.similarity = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(tasks.size()),
                                           static_cast<Eigen::Index>(rep.reference_ids.size()));
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        std::size_t count = 0;
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(rep.similarity.cols());
        for (const auto& rec : globals) {
            if (rec.task_id != tasks[i]) continue;
            ++count;
            for (std::size_t j = 0; j < rep.reference_ids.size(); ++j)
                acc(static_cast<Eigen::Index>(j)) +=
                    geometry::cosine_similarity(rec.g, refs.at(rep.reference_ids[j]).h_ref);
        }
        if (count > 0) rep.similarity.row(static_cast<Eigen::Index>(i)) = acc.transpose() / static_cast<double>(count);
    }
    return rep;
}

// Rolls n_trials evaluation episodes per task and reports the mean cosine
// similarity of the recorded globals to every registered reference.
inline SeparationReport separation_report(const policy::PolicyParams<float>& p,
                                          const ifa::ReferenceRegistry& refs, const Suite& s,
                                          const std::vector<int>& tasks, int n_trials,
                                          std::uint64_t seed) {
    PolicyActor actor(p, true);
    for (int id : tasks) (void)evaluate_policy(actor, s, id, n_trials, seed);
    return separation_from_globals(actor.globals(), refs, tasks);
}

}  // namespace lifelong::bench
