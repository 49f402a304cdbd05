// Command-line front end: pretrain, lifelong, ablate, dump-embeddings, metrics.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "lifelong/harness.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lifelong;

namespace {

struct ConfigArgs {
    std::string path;
    std::vector<std::string> overrides;
    std::string out;
};

void add_config_options(CLI::App* cmd, ConfigArgs& a) {
    cmd->add_option("-c,--config", a.path, "JSON config file (defaults are used for missing keys)");
    cmd->add_option("-s,--set", a.overrides, "override a config key, e.g. train.epochs=5");
    cmd->add_option("-o,--out", a.out, "output directory (overrides output_dir)");
}

harness::ExperimentConfig resolve(const ConfigArgs& a) {
    json tree = json::object();
    if (!a.path.empty()) {
        try {
            tree = json::parse(io::read_text(a.path));
        } catch (const json::exception& e) {
            throw ConfigError("cannot parse config " + a.path + ": " + e.what());
        } catch (const DomainError& e) {
            throw ConfigError(e.what());
        }
    }
    for (const auto& o : a.overrides) harness::apply_override(tree, o);
    if (!a.out.empty()) tree["output_dir"] = a.out;
    return harness::config_from_json(tree);
}

int cmd_pretrain(const ConfigArgs& a) {
    const auto cfg = resolve(a);
    const fs::path root = cfg.output_dir;
    fs::create_directories(root);
    io::write_text(root / "config.json", harness::config_to_json(cfg).dump(2) + "\n");
    for (auto seed : cfg.seeds) {
        const fs::path dir = root / ("seed_" + std::to_string(seed));
        fs::create_directories(dir);
        const harness::SeedStreams st(seed);
        const auto suite = bench::generate_suite(cfg.suite, st.suite);
        std::ofstream steps(dir / "steps.jsonl", std::ios::trunc);
        auto out = harness::pretrain_for_seed(cfg, suite, seed, [&steps](const trainer::StepRecord& r) {
            steps << harness::step_json(r).dump() << '\n';
        });
        io::write_file(dir / "params_pretrain.bin", policy::serialize_params(out.params, seed));
        const json rep = {{"initial_loss", out.result.initial_loss},
                          {"final_loss", out.result.final_loss},
                          {"steps", out.result.steps},
                          {"frozen_hash", policy::hex64(out.params.frozen_hash())}};
        io::write_text(dir / "pretrain.json", rep.dump(2) + "\n");
        std::cout << "seed " << seed << ": pretrain loss " << out.result.initial_loss << " -> "
                  << out.result.final_loss << "\n";
    }
    return 0;
}

int cmd_lifelong(const ConfigArgs& a) {
    const auto res = harness::run_experiment(resolve(a));
    std::cout << "run directory: " << res.run_dir.string() << "\n"
              << "FWT " << res.fwt.mean << " +- " << res.fwt.std << "\n"
              << "NBT " << res.nbt.mean << " +- " << res.nbt.std << "\n"
              << "AUC " << res.auc.mean << " +- " << res.auc.std << "\n";
    return 0;
}

int cmd_ablate(const ConfigArgs& a, const std::string& kind) {
    const auto k = harness::ablation_from_string(kind);
    const auto table = harness::run_ablation(k, resolve(a));
    std::cout << table.to_csv();
    return 0;
}

int cmd_dump(const std::string& run_dir, int stage, std::optional<std::uint64_t> seed) {
    const auto stem = harness::dump_embeddings(run_dir, stage, seed);
    std::cout << "wrote " << stem.string() << ".{json,bin} and " << stem.string() << "_references.bin\n";
    return 0;
}

int cmd_metrics(const std::string& csv, const std::string& out) {
    std::string text;
    try {
        text = io::read_text(csv);
    } catch (const DomainError& e) {
        throw ConfigError(e.what());
    }
    bench::SuccessMatrix m;
    try {
        m = bench::SuccessMatrix::from_csv(text);
    } catch (const DomainError& e) {
        throw ConfigError(std::string("bad success matrix: ") + e.what());
    }
    const auto met = bench::lifelong_metrics(m);
    const json j = {{"fwt", met.fwt}, {"nbt", met.nbt}, {"auc", met.auc},
                    {"n_tasks", met.n_tasks}, {"nbt_defined", met.nbt_defined}};
    if (!out.empty()) io::write_text(out, j.dump(2) + "\n");
    std::cout << j.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Lifelong imitation learning with multimodal latent replay"};
    app.require_subcommand(1);

    ConfigArgs pre_args, ll_args, abl_args;
    auto* pre = app.add_subcommand("pretrain", "pretrain on the base tasks");
    add_config_options(pre, pre_args);

    auto* ll = app.add_subcommand("lifelong", "pretraining followed by all lifelong stages");
    add_config_options(ll, ll_args);

    std::string kind;
    auto* abl = app.add_subcommand("ablate", "run an ablation grid");
    add_config_options(abl, abl_args);
    abl->add_option("-k,--kind", kind,
                    "buffer_probability | alpha_sweep | cosine_vs_angle | pair_fraction | reference_mode_stub")
        ->required();

    std::string run_dir;
    int stage = 0;
    std::optional<std::uint64_t> seed;
    auto* dump = app.add_subcommand("dump-embeddings", "dump evaluation-time global latents and references");
    dump->add_option("-r,--run-dir", run_dir, "run directory")->required();
    dump->add_option("--stage", stage, "lifelong stage index")->required();
    dump->add_option("--seed", seed, "seed (defaults to the first seed of the run)");

    std::string csv, metrics_out;
    auto* met = app.add_subcommand("metrics", "recompute FWT/NBT/AUC from a success matrix CSV");
    met->add_option("csv", csv, "success matrix CSV")->required();
    met->add_option("-o,--out", metrics_out, "write the metrics JSON here as well");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*pre) return cmd_pretrain(pre_args);
        if (*ll) return cmd_lifelong(ll_args);
        if (*abl) return cmd_ablate(abl_args, kind);
        if (*dump) return cmd_dump(run_dir, stage, seed);
        if (*met) return cmd_metrics(csv, metrics_out);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const DomainError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
