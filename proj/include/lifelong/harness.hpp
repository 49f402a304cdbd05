#pragma once

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lifelong/bench.hpp"
#include "lifelong/checkpoint.hpp"
#include "lifelong/error.hpp"
#include "lifelong/ifa.hpp"
#include "lifelong/io.hpp"
#include "lifelong/policy.hpp"
#include "lifelong/replay_buffer.hpp"
#include "lifelong/rng.hpp"
#include "lifelong/trainer.hpp"

namespace lifelong::harness {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kCodeVersion = "lifelong-0.1.0";

struct ExperimentConfig {
    bench::SuiteConfig suite;
    policy::PolicyDims policy;  // image/state/embed/action dims are taken from `suite`
    trainer::TrainConfig pretrain;
    trainer::TrainConfig train;
    double store_probability = 0.5;
    int buffer_demos_per_task = 5;  // per-task capacity in demonstrations
    int eval_trials = 20;
    trainer::Method method = trainer::Method::mlr_ifa;
    std::vector<std::uint64_t> seeds = {0, 1, 2};
    std::string output_dir = "runs/default";
    bool save_checkpoints = true;

    policy::PolicyDims resolved_dims() const {
        policy::PolicyDims d = policy;
        d.image_side = suite.image_side;
        d.state_dim = suite.state_dim;
        d.embed = suite.embed;
        d.action_dim = suite.action_dim;
        return d;
    }
    std::size_t per_task_capacity() const {
        return static_cast<std::size_t>(buffer_demos_per_task) * static_cast<std::size_t>(suite.traj_len);
    }

    void validate() const {
        suite.validate();
        resolved_dims().validate();
        pretrain.validate();
        train.validate();
        require_config(store_probability >= 0.0 && store_probability <= 1.0,
                       "buffer.store_probability must lie in [0, 1]");
        require_config(buffer_demos_per_task >= 1, "buffer.demos_per_task must be >= 1");
        require_config(eval_trials >= 1, "eval.n_trials must be >= 1");
        require_config(!seeds.empty(), "seeds must be nonempty");
        require_config(!output_dir.empty(), "output_dir must be nonempty");
    }
};

// ---------------------------------------------------------------------------
// Config <-> JSON. Every key has a default; unknown keys are rejected.

namespace detail {

class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError("config section '" + path_ + "' must be an object");
    }

    template <typename T>
    void read(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError("config key '" + qualified(key) + "': " + e.what());
        }
    }

    std::optional<Section> sub(const char* key) {
        seen_.insert(key);
        if (!j_.contains(key)) return std::nullopt;
        return Section(j_.at(key), qualified(key));
    }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!seen_.contains(k)) throw ConfigError("unknown config key '" + qualified(k) + "'");
    }

private:
    std::string qualified(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline void read_train(Section& s, trainer::TrainConfig& t, bool full) {
    s.read("epochs", t.epochs);
    s.read("batch_size", t.batch_size);
    s.read("lr_init", t.lr_init);
    s.read("weight_decay", t.weight_decay);
    s.read("beta1", t.beta1);
    s.read("beta2", t.beta2);
    s.read("eps", t.eps);
    if (full) s.read("replay_ratio", t.replay_ratio);
    s.finish();
}

inline json train_json(const trainer::TrainConfig& t, bool full) {
    json j = {{"epochs", t.epochs}, {"batch_size", t.batch_size}, {"lr_init", t.lr_init},
              {"weight_decay", t.weight_decay}, {"beta1", t.beta1}, {"beta2", t.beta2}, {"eps", t.eps}};
    if (full) j["replay_ratio"] = t.replay_ratio;
    return j;
}

}  // namespace detail

inline ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c;
    c.pretrain.epochs = 100;
    detail::Section root(j, "");
    if (auto s = root.sub("suite")) {
        s->read("n_base", c.suite.n_base);
        s->read("n_lifelong", c.suite.n_lifelong);
        s->read("tasks_per_stage", c.suite.tasks_per_stage);
        s->read("similarity_knob", c.suite.similarity_knob);
        s->read("context_dim", c.suite.context_dim);
        s->read("traj_len", c.suite.traj_len);
        s->read("demos_base", c.suite.demos_base);
        s->read("demos_lifelong", c.suite.demos_lifelong);
        s->read("image_side", c.suite.image_side);
        s->read("state_dim", c.suite.state_dim);
        s->read("embed", c.suite.embed);
        s->read("action_dim", c.suite.action_dim);
        s->read("dynamics_sharing", c.suite.dynamics_sharing);
        s->finish();
    }
    if (auto s = root.sub("policy")) {
        std::string head = policy::to_string(c.policy.head);
        s->read("window", c.policy.window);
        s->read("hidden", c.policy.hidden);
        s->read("gmm_components", c.policy.gmm_components);
        s->read("head", head);
        c.policy.head = policy::head_mode_from_string(head);
        s->finish();
    }
    if (auto s = root.sub("pretrain")) detail::read_train(*s, c.pretrain, false);
    if (auto s = root.sub("train")) detail::read_train(*s, c.train, true);
    if (auto s = root.sub("ifa")) {
        std::string mode = ifa::to_string(c.train.ifa.distance_mode);
        s->read("alpha", c.train.ifa.alpha);
        s->read("lambda_ifa", c.train.ifa.lambda_ifa);
        s->read("selection_fraction", c.train.ifa.selection_fraction);
        s->read("distance_mode", mode);
        c.train.ifa.distance_mode = ifa::distance_mode_from_string(mode);
        s->finish();
    }
    if (auto s = root.sub("buffer")) {
        s->read("store_probability", c.store_probability);
        s->read("demos_per_task", c.buffer_demos_per_task);
        s->finish();
    }
    if (auto s = root.sub("eval")) {
        s->read("n_trials", c.eval_trials);
        s->finish();
    }
    std::string method = trainer::to_string(c.method);
    root.read("method", method);
    c.method = trainer::method_from_string(method);
    root.read("seeds", c.seeds);
    root.read("output_dir", c.output_dir);
    root.read("save_checkpoints", c.save_checkpoints);
    root.finish();
    c.pretrain.ifa = c.train.ifa;
    c.validate();
    return c;
}

inline json config_to_json(const ExperimentConfig& c) {
    const auto& s = c.suite;
    return {
        {"suite",
         {{"n_base", s.n_base}, {"n_lifelong", s.n_lifelong}, {"tasks_per_stage", s.tasks_per_stage},
          {"similarity_knob", s.similarity_knob}, {"context_dim", s.context_dim},
          {"traj_len", s.traj_len}, {"demos_base", s.demos_base}, {"demos_lifelong", s.demos_lifelong},
          {"image_side", s.image_side}, {"state_dim", s.state_dim}, {"embed", s.embed},
          {"action_dim", s.action_dim}, {"dynamics_sharing", s.dynamics_sharing}}},
        {"policy",
         {{"window", c.policy.window}, {"hidden", c.policy.hidden},
          {"gmm_components", c.policy.gmm_components}, {"head", policy::to_string(c.policy.head)}}},
        {"pretrain", detail::train_json(c.pretrain, false)},
        {"train", detail::train_json(c.train, true)},
        {"ifa",
         {{"alpha", c.train.ifa.alpha}, {"lambda_ifa", c.train.ifa.lambda_ifa},
          {"selection_fraction", c.train.ifa.selection_fraction},
          {"distance_mode", ifa::to_string(c.train.ifa.distance_mode)}}},
        {"buffer", {{"store_probability", c.store_probability}, {"demos_per_task", c.buffer_demos_per_task}}},
        {"eval", {{"n_trials", c.eval_trials}}},
        {"method", trainer::to_string(c.method)},
        {"seeds", c.seeds},
        {"output_dir", c.output_dir},
        {"save_checkpoints", c.save_checkpoints},
    };
}

inline ExperimentConfig load_config(const fs::path& p) {
    json j;
    try {
        j = json::parse(io::read_text(p));
    } catch (const json::exception& e) {
        throw ConfigError("cannot parse config " + p.string() + ": " + e.what());
    } catch (const DomainError& e) {
        throw ConfigError(e.what());
    }
    return config_from_json(j);
}

// Applies "a.b.c=<json value>" overrides (bare strings allowed) to a config tree.
inline void apply_override(json& tree, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: " + assignment);
    const std::string path = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(text);
    } catch (const json::exception&) {
        value = text;
    }
    json* node = &tree;
    std::stringstream ss(path);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        if (!node->contains(parts[i])) (*node)[parts[i]] = json::object();
        node = &(*node)[parts[i]];
    }
    (*node)[parts.back()] = value;
}

// ---------------------------------------------------------------------------
// Output helpers

inline std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

inline json report_json(const trainer::StageReport& r) {
    json entries = json::object();
    for (const auto& [id, n] : r.buffer_stats.entries_per_task) entries[std::to_string(id)] = n;
    return {{"stage", r.stage_index},
            {"tasks_introduced", r.tasks_introduced},
            {"final_loss_bc", r.final_loss_bc},
            {"final_loss_ifa", r.final_loss_ifa},
            {"steps", r.steps},
            {"buffer",
             {{"entries_per_task", entries},
              {"total_bytes_latent", r.buffer_stats.total_bytes_latent},
              {"equivalent_raw_bytes", r.buffer_stats.equivalent_raw_bytes}}}};
}

inline json pairs_json(const trainer::StageReport& r) {
    json pairs = json::array();
    for (const auto& p : r.pairs) pairs.push_back({p.old_task, p.new_task});
    json scores = json::array();
    for (const auto& s : r.pair_scores)
        scores.push_back({{"tasks", {s.task_a, s.task_b}},
                          {"sim_agent_view", s.sim_agent_view},
                          {"sim_language", s.sim_language},
                          {"selected", s.selected}});
    return {{"stage", r.stage_index}, {"pairs", pairs}, {"scores", scores}};
}

inline json step_json(const trainer::StepRecord& s) {
    return {{"stage", s.stage},     {"epoch", s.epoch},         {"step", s.step},
            {"lr", s.lr},           {"loss_bc", s.loss_bc},     {"loss_ifa", s.loss_ifa},
            {"loss_total", s.loss_total}, {"buffer_bytes", s.buffer_bytes}};
}

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
};

inline MeanStd mean_std(const std::vector<double>& v) {
    MeanStd r;
    if (v.empty()) return r;
    for (double x : v) r.mean += x;
    r.mean /= static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - r.mean) * (x - r.mean);
        r.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return r;
}

inline json metrics_json(const bench::LifelongMetrics& m, const std::vector<std::uint64_t>& seeds) {
    return {{"fwt", m.fwt}, {"nbt", m.nbt}, {"auc", m.auc}, {"n_tasks", m.n_tasks},
            {"nbt_defined", m.nbt_defined}, {"seeds", seeds}};
}

// ---------------------------------------------------------------------------
// Seeds and pretraining

struct SeedStreams {
    std::uint64_t suite, init, train, buffer, eval;
    explicit SeedStreams(std::uint64_t master)
        : suite(stream_seed(master, "suite")),
          init(stream_seed(master, "init")),
          train(stream_seed(master, "train")),
          buffer(stream_seed(master, "buffer")),
          eval(stream_seed(master, "eval")) {}
};

// Pretrained parameters keyed by (suite, policy, pretrain config, seed), so
// runs that differ only in lifelong settings share one pretraining.
class PretrainCache {
public:
    std::optional<policy::PolicyParams<float>> find(const std::string& key) const {
        auto it = cache_.find(key);
        if (it == cache_.end()) return std::nullopt;
        return it->second;
    }
    void put(const std::string& key, const policy::PolicyParams<float>& p) { cache_[key] = p; }

private:
    std::map<std::string, policy::PolicyParams<float>> cache_;
};

inline std::string pretrain_key(const ExperimentConfig& c, std::uint64_t seed) {
    const json j = config_to_json(c);
    return json({{"suite", j["suite"]}, {"policy", j["policy"]}, {"pretrain", j["pretrain"]}, {"seed", seed}}).dump();
}

inline trainer::TrainConfig seeded(trainer::TrainConfig t, std::uint64_t seed) {
    t.seed = seed;
    return t;
}

struct PretrainOutcome {
    policy::PolicyParams<float> params;
    trainer::PretrainResult result;
};

inline PretrainOutcome pretrain_for_seed(const ExperimentConfig& c, const bench::Suite& suite,
                                         std::uint64_t seed, const trainer::StepLogger& log = {}) {
    const SeedStreams st(seed);
    PretrainOutcome out{policy::init_params(c.resolved_dims(), suite.task_ids(), suite.language_table(), st.init), {}};
    out.result = trainer::pretrain(suite, suite.base_ids(), out.params, seeded(c.pretrain, st.train), log);
    return out;
}

// ---------------------------------------------------------------------------
// Experiment

struct SeedOutcome {
    std::uint64_t seed = 0;
    bench::SuccessMatrix success;
    bench::LifelongMetrics metrics;
    std::vector<trainer::StageReport> stages;
    policy::PolicyParams<float> final_params;
    ifa::ReferenceRegistry refs;
    std::uint64_t final_buffer_bytes = 0;
    std::uint64_t frozen_hash = 0;
};

struct RunResult {
    fs::path run_dir;
    std::vector<SeedOutcome> seeds;
    MeanStd fwt, nbt, auc;
    double buffer_bytes_mean = 0.0;
};

inline SeedOutcome run_seed(const ExperimentConfig& c, std::uint64_t seed, const fs::path& dir,
                            PretrainCache* cache) {
    const SeedStreams st(seed);
    const bench::Suite suite = bench::generate_suite(c.suite, st.suite);
    std::ofstream steps(dir / "steps.jsonl", std::ios::trunc);
    const auto log = [&steps](const trainer::StepRecord& r) { steps << step_json(r).dump() << '\n'; };

    policy::PolicyParams<float> params;
    const std::string key = pretrain_key(c, seed);
    if (auto hit = cache ? cache->find(key) : std::nullopt) {
        params = *hit;
    } else {
        auto pre = pretrain_for_seed(c, suite, seed, log);
        params = std::move(pre.params);
        if (cache) cache->put(key, params);
    }
    if (c.save_checkpoints) io::write_file(dir / "params_pretrain.bin", policy::serialize_params(params, seed));

    SeedOutcome out;
    out.seed = seed;
    out.frozen_hash = params.frozen_hash();
    const auto dims = c.resolved_dims();
    mlr::ReplayBuffer buffer({dims.latent_shape(), dims.action_dim, c.per_task_capacity(), c.store_probability, st.buffer});
    trainer::TrainConfig train = seeded(c.train, st.train);
    if (c.method == trainer::Method::sequential) train.ifa.lambda_ifa = 0.0;

    std::ofstream pairs_log(dir / "pairs.jsonl", std::ios::trunc);
    const auto stages = suite.stages();
    for (std::size_t i = 0; i < stages.size(); ++i) {
        trainer::StageContext ctx{suite, buffer, out.refs, c.method, static_cast<int>(i), log};
        auto rep = trainer::lifelong_stage(stages[i], params, ctx, train);
        if (params.frozen_hash() != out.frozen_hash)
            throw InternalError("frozen parameter blocks changed during lifelong stage " + std::to_string(i));
        pairs_log << pairs_json(rep).dump() << '\n';
        io::write_text(dir / ("stage_" + std::to_string(i) + ".json"), report_json(rep).dump(2) + "\n");
        if (c.save_checkpoints) {
            io::write_file(dir / ("params_stage_" + std::to_string(i) + ".bin"), policy::serialize_params(params, seed));
            io::write_file(dir / ("buffer_stage_" + std::to_string(i) + ".bin"), buffer.serialize());
        }
        // Tasks learned jointly in one stage share the post-stage evaluation.
        std::vector<int> seen;
        for (std::size_t s = 0; s <= i; ++s) seen.insert(seen.end(), stages[s].begin(), stages[s].end());
        std::vector<double> evals;
        for (int id : seen) evals.push_back(bench::evaluate_policy(params, suite, id, c.eval_trials, st.eval));
        for (int id : stages[i]) {
            out.success.task_ids.push_back(id);
            out.success.r.emplace_back(evals.begin(), evals.begin() + static_cast<long>(out.success.task_ids.size()));
        }
        out.stages.push_back(std::move(rep));
    }
    out.metrics = bench::lifelong_metrics(out.success);
    out.final_buffer_bytes = buffer.memory_stats({c.suite.image_side, c.suite.state_dim}).total_bytes_latent;
    out.final_params = std::move(params);
    io::write_text(dir / "success_matrix.csv", out.success.to_csv());
    io::write_text(dir / "metrics.json", metrics_json(out.metrics, {seed}).dump(2) + "\n");
    return out;
}

inline RunResult run_experiment(const ExperimentConfig& c, PretrainCache* cache = nullptr) {
    c.validate();
    RunResult res;
    res.run_dir = c.output_dir;
    fs::create_directories(res.run_dir);
    const json cfg_json = config_to_json(c);
    io::write_text(res.run_dir / "config.json", cfg_json.dump(2) + "\n");

    json timing = json::object();
    std::vector<double> fwt, nbt, auc, bytes;
    json per_seed = json::array();
    for (auto seed : c.seeds) {
        const fs::path dir = res.run_dir / ("seed_" + std::to_string(seed));
        fs::create_directories(dir);
        auto outcome = run_seed(c, seed, dir, cache);
        fwt.push_back(outcome.metrics.fwt);
        nbt.push_back(outcome.metrics.nbt);
        auc.push_back(outcome.metrics.auc);
        bytes.push_back(static_cast<double>(outcome.final_buffer_bytes));
        per_seed.push_back(metrics_json(outcome.metrics, {seed}));
        json t = json::array();
        for (const auto& s : outcome.stages) t.push_back(s.wall_seconds);
        timing[std::to_string(seed)] = t;
        res.seeds.push_back(std::move(outcome));
    }
    res.fwt = mean_std(fwt);
    res.nbt = mean_std(nbt);
    res.auc = mean_std(auc);
    res.buffer_bytes_mean = mean_std(bytes).mean;

    const json metrics = {{"fwt", res.fwt.mean}, {"fwt_std", res.fwt.std},
                          {"nbt", res.nbt.mean}, {"nbt_std", res.nbt.std},
                          {"auc", res.auc.mean}, {"auc_std", res.auc.std},
                          {"n_tasks", res.seeds.front().metrics.n_tasks},
                          {"seeds", c.seeds},    {"per_seed", per_seed}};
    io::write_text(res.run_dir / "metrics.json", metrics.dump(2) + "\n");

    const double lambda_eff = c.method == trainer::Method::mlr_ifa ? c.train.ifa.lambda_ifa : 0.0;
    const json manifest = {
        {"code_version", kCodeVersion},
        {"config_hash", policy::hex64(fnv1a(cfg_json.dump()))},
        {"method", trainer::to_string(c.method)},
        {"alpha", c.train.ifa.alpha},
        {"lambda_ifa", c.train.ifa.lambda_ifa},
        {"lambda_ifa_effective", lambda_eff},
        {"store_probability", c.store_probability},
        {"distance_mode", ifa::to_string(c.train.ifa.distance_mode)},
        {"selection_fraction", c.train.ifa.selection_fraction},
        {"seeds", c.seeds},
        {"frozen_hashes", [&] {
             json h = json::object();
             for (const auto& s : res.seeds) h[std::to_string(s.seed)] = policy::hex64(s.frozen_hash);
             return h;
         }()},
        {"nondeterministic_files", {"timing.json"}},
    };
    io::write_text(res.run_dir / "manifest.json", manifest.dump(2) + "\n");
    io::write_text(res.run_dir / "timing.json", timing.dump(2) + "\n");
    return res;
}

// ---------------------------------------------------------------------------
// Ablations

enum class AblationKind { buffer_probability, alpha_sweep, cosine_vs_angle, pair_fraction, reference_mode_stub };

inline AblationKind ablation_from_string(const std::string& s) {
    if (s == "buffer_probability") return AblationKind::buffer_probability;
    if (s == "alpha_sweep") return AblationKind::alpha_sweep;
    if (s == "cosine_vs_angle") return AblationKind::cosine_vs_angle;
    if (s == "pair_fraction") return AblationKind::pair_fraction;
    if (s == "reference_mode_stub") return AblationKind::reference_mode_stub;
    throw ConfigError("unknown ablation kind '" + s + "'");
}

inline std::string to_string(AblationKind k) {
    switch (k) {
        case AblationKind::buffer_probability: return "buffer_probability";
        case AblationKind::alpha_sweep: return "alpha_sweep";
        case AblationKind::cosine_vs_angle: return "cosine_vs_angle";
        case AblationKind::pair_fraction: return "pair_fraction";
        case AblationKind::reference_mode_stub: return "reference_mode_stub";
    }
    return "?";
}

class NotImplemented : public ConfigError {
public:
    using ConfigError::ConfigError;
};

struct AblationRow {
    std::string parameter;
    std::string value;
    MeanStd fwt, nbt, auc;
    double buffer_bytes = 0.0;
    fs::path run_dir;
};

struct AblationTable {
    AblationKind kind;
    std::vector<AblationRow> rows;

    std::string to_csv() const {
        std::ostringstream os;
        os << "parameter,value,fwt_mean,fwt_std,nbt_mean,nbt_std,auc_mean,auc_std,buffer_bytes\n";
        for (const auto& r : rows)
            os << r.parameter << ',' << r.value << ',' << format_double(r.fwt.mean) << ','
               << format_double(r.fwt.std) << ',' << format_double(r.nbt.mean) << ','
               << format_double(r.nbt.std) << ',' << format_double(r.auc.mean) << ','
               << format_double(r.auc.std) << ',' << format_double(r.buffer_bytes) << '\n';
        return os.str();
    }
};

// Grid cells per ablation kind: (parameter label, value label, config mutation).
inline std::vector<std::pair<std::string, ExperimentConfig>> ablation_cells(AblationKind kind,
                                                                            const ExperimentConfig& base) {
    std::vector<std::pair<std::string, ExperimentConfig>> cells;
    auto add = [&](const std::string& label, auto&& mutate) {
        ExperimentConfig c = base;
        mutate(c);
        c.output_dir = (fs::path(base.output_dir) / (to_string(kind) + "_" + label)).string();
        cells.emplace_back(label, std::move(c));
    };
    switch (kind) {
        case AblationKind::buffer_probability:
            for (double p : {0.1, 0.2, 0.5})
                add(format_double(p), [p](ExperimentConfig& c) { c.store_probability = p; });
            break;
        case AblationKind::alpha_sweep:
            for (double a : {0.1, 0.3, 0.5, 0.7})
                add(format_double(a), [a](ExperimentConfig& c) { c.train.ifa.alpha = a; });
            break;
        case AblationKind::cosine_vs_angle:
            for (auto m : {ifa::DistanceMode::angle, ifa::DistanceMode::cosine})
                add(ifa::to_string(m), [m](ExperimentConfig& c) { c.train.ifa.distance_mode = m; });
            break;
        case AblationKind::pair_fraction:
            for (double f : {0.333, 0.5, 0.666})
                add(format_double(f), [f](ExperimentConfig& c) { c.train.ifa.selection_fraction = f; });
            break;
        case AblationKind::reference_mode_stub:
            throw NotImplemented("reference_mode_stub: mean-global reference mode is not implemented");
    }
    return cells;
}

inline std::string ablation_parameter(AblationKind kind) {
    switch (kind) {
        case AblationKind::buffer_probability: return "store_probability";
        case AblationKind::alpha_sweep: return "alpha";
        case AblationKind::cosine_vs_angle: return "distance_mode";
        case AblationKind::pair_fraction: return "selection_fraction";
        default: return "reference_mode";
    }
}

inline AblationTable run_ablation(AblationKind kind, const ExperimentConfig& base, PretrainCache* cache = nullptr) {
    PretrainCache local;
    if (cache == nullptr) cache = &local;
    AblationTable table{kind, {}};
    for (auto& [label, cfg] : ablation_cells(kind, base)) {
        const auto res = run_experiment(cfg, cache);
        table.rows.push_back({ablation_parameter(kind), label, res.fwt, res.nbt, res.auc, res.buffer_bytes_mean, res.run_dir});
    }
    io::write_text(fs::path(base.output_dir) / (to_string(kind) + ".csv"), table.to_csv());
    return table;
}

// ---------------------------------------------------------------------------
// Embedding dumps

struct EmbeddingDump {
    int embed = 0;
    std::vector<int> labels;              // task id per latent row
    std::vector<float> latents;           // row-major, labels.size() x embed
    std::vector<int> reference_ids;
    std::vector<float> references;        // row-major, reference_ids.size() x embed
};

// Writes <stem>.json (sidecar), <stem>.bin (latent rows) and
// <stem>_references.bin (reference rows), all float32 little-endian.
inline void write_embedding_dump(const fs::path& stem, const EmbeddingDump& d) {
    require(d.latents.size() == d.labels.size() * static_cast<std::size_t>(d.embed), "latent payload size mismatch");
    require(d.references.size() == d.reference_ids.size() * static_cast<std::size_t>(d.embed),
            "reference payload size mismatch");
    io::ByteWriter lat, ref;
    lat.f32s(d.latents);
    ref.f32s(d.references);
    const std::string base = stem.filename().string();
    const json side = {{"format", "lifelong-embeddings"},
                       {"version", 1},
                       {"embed", d.embed},
                       {"n_latents", d.labels.size()},
                       {"n_references", d.reference_ids.size()},
                       {"latent_labels", d.labels},
                       {"reference_task_ids", d.reference_ids},
                       {"latents_file", base + ".bin"},
                       {"references_file", base + "_references.bin"},
                       {"dtype", "float32-le"},
                       {"layout", "row-major"}};
    io::write_file(fs::path(stem.string() + ".bin"), lat.bytes());
    io::write_file(fs::path(stem.string() + "_references.bin"), ref.bytes());
    io::write_text(fs::path(stem.string() + ".json"), side.dump(2) + "\n");
}

inline EmbeddingDump read_embedding_dump(const fs::path& stem) {
    json side;
    try {
        side = json::parse(io::read_text(fs::path(stem.string() + ".json")));
    } catch (const json::exception& e) {
        throw DomainError(std::string("bad embedding sidecar: ") + e.what());
    }
    EmbeddingDump d;
    d.embed = side.at("embed").get<int>();
    d.labels = side.at("latent_labels").get<std::vector<int>>();
    d.reference_ids = side.at("reference_task_ids").get<std::vector<int>>();
    const auto read_rows = [&](const fs::path& p, std::size_t rows) {
        const auto bytes = io::read_file(p);
        require(bytes.size() == rows * static_cast<std::size_t>(d.embed) * sizeof(float),
                "embedding payload " + p.string() + " has the wrong size");
        std::vector<float> out(rows * static_cast<std::size_t>(d.embed));
        io::ByteReader r(bytes);
        r.f32s(out);
        return out;
    };
    d.latents = read_rows(fs::path(stem.string() + ".bin"), d.labels.size());
    d.references = read_rows(fs::path(stem.string() + "_references.bin"), d.reference_ids.size());
    return d;
}

// Rolls evaluation trajectories of every lifelong task learned through
// `stage` with that stage's checkpoint and dumps the global latents plus the
// task references.
inline fs::path dump_embeddings(const fs::path& run_dir, int stage, std::optional<std::uint64_t> seed = std::nullopt) {
    const fs::path cfg_path = run_dir / "config.json";
    if (!fs::exists(cfg_path)) throw ConfigError("no config.json in run directory " + run_dir.string());
    const ExperimentConfig c = load_config(cfg_path);
    const std::uint64_t s = seed.value_or(c.seeds.front());
    const fs::path dir = run_dir / ("seed_" + std::to_string(s));
    const fs::path ckpt = dir / ("params_stage_" + std::to_string(stage) + ".bin");
    if (!fs::exists(ckpt)) throw ConfigError("missing checkpoint " + ckpt.string());
    const auto params = policy::deserialize_params(io::read_file(ckpt));
    const SeedStreams st(s);
    const bench::Suite suite = bench::generate_suite(c.suite, st.suite);
    const auto stages = suite.stages();
    require_config(stage >= 0 && static_cast<std::size_t>(stage) < stages.size(), "stage out of range");

    EmbeddingDump d;
    d.embed = params.dims.embed;
    for (int i = 0; i <= stage; ++i) {
        for (int id : stages[static_cast<std::size_t>(i)]) {
            bench::PolicyActor actor(params, true);
            (void)bench::evaluate_policy(actor, suite, id, c.eval_trials, st.eval);
            for (const auto& rec : actor.globals()) {
                d.labels.push_back(rec.task_id);
                d.latents.insert(d.latents.end(), rec.g.data(), rec.g.data() + rec.g.size());
            }
            const auto& h = suite.task(id).language_embedding;
            const Eigen::VectorXf unit = (h.cast<double>() / h.cast<double>().norm()).cast<float>();
            d.reference_ids.push_back(id);
            d.references.insert(d.references.end(), unit.data(), unit.data() + unit.size());
        }
    }
    const fs::path stem = dir / ("embeddings_stage_" + std::to_string(stage));
    write_embedding_dump(stem, d);
    return stem;
}

}  // namespace lifelong::harness
