#include <gtest/gtest.h>

#include <cstdlib>
#include <sys/wait.h>

#include "lifelong/harness.hpp"

using namespace lifelong;
using namespace lifelong::harness;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("lifelong_test_" + name);
    fs::remove_all(p);
    return p;
}

ExperimentConfig tiny(const std::string& name) {
    ExperimentConfig c;
    c.suite.n_base = 1;
    c.suite.n_lifelong = 2;
    c.suite.context_dim = 4;
    c.suite.traj_len = 10;
    c.suite.demos_base = 4;
    c.suite.demos_lifelong = 3;
    c.suite.image_side = 4;
    c.suite.state_dim = 3;
    c.suite.embed = 8;
    c.suite.action_dim = 2;
    c.policy.window = 3;
    c.policy.hidden = 12;
    c.pretrain.epochs = 2;
    c.pretrain.batch_size = 8;
    c.train.epochs = 2;
    c.train.batch_size = 8;
    c.eval_trials = 3;
    c.seeds = {0, 1};
    c.output_dir = scratch(name).string();
    return c;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(LIFELONG_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, EmptyObjectGivesDefaults) {
    const auto c = config_from_json(json::object());
    EXPECT_EQ(c.store_probability, 0.5);
    EXPECT_EQ(c.train.ifa.lambda_ifa, 0.1);
    EXPECT_EQ(c.train.ifa.selection_fraction, 0.5);
    EXPECT_EQ(c.pretrain.epochs, 100);
    EXPECT_EQ(c.method, trainer::Method::mlr_ifa);
    EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{0, 1, 2}));
    EXPECT_EQ(c.per_task_capacity(), 5u * 40u);
}

TEST(Config, RoundTripThroughJson) {
    auto c = tiny("roundtrip");
    c.train.ifa.distance_mode = ifa::DistanceMode::cosine;
    c.method = trainer::Method::mlr;
    const auto j = config_to_json(c);
    EXPECT_EQ(config_to_json(config_from_json(j)), j);
}

TEST(Config, RejectsUnknownKeys) {
    EXPECT_THROW(config_from_json(json{{"bogus", 1}}), ConfigError);
    EXPECT_THROW(config_from_json(json{{"ifa", {{"alpah", 0.3}}}}), ConfigError);
    EXPECT_THROW(config_from_json(json{{"method", "er"}}), ConfigError);
    EXPECT_THROW(config_from_json(json{{"buffer", {{"store_probability", 1.5}}}}), ConfigError);
    EXPECT_THROW(config_from_json(json{{"train", {{"epochs", "many"}}}}), ConfigError);
}

TEST(Config, Overrides) {
    json tree = json::object();
    apply_override(tree, "train.epochs=7");
    apply_override(tree, "ifa.distance_mode=cosine");
    apply_override(tree, "seeds=[4,5]");
    const auto c = config_from_json(tree);
    EXPECT_EQ(c.train.epochs, 7);
    EXPECT_EQ(c.train.ifa.distance_mode, ifa::DistanceMode::cosine);
    EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{4, 5}));
    EXPECT_THROW(apply_override(tree, "noequals"), ConfigError);
}

TEST(Config, MissingFileIsConfigError) {
    EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}

TEST(MeanStd, SampleStandardDeviation) {
    const auto m = mean_std({1.0, 2.0, 3.0, 4.0});
    EXPECT_DOUBLE_EQ(m.mean, 2.5);
    EXPECT_NEAR(m.std, std::sqrt(5.0 / 3.0), 1e-12);
    EXPECT_EQ(mean_std({3.0}).std, 0.0);
}

TEST(Run, WritesExpectedFilesAndManifest) {
    const auto c = tiny("files");
    const auto res = run_experiment(c);
    for (const char* f : {"config.json", "metrics.json", "manifest.json", "timing.json"})
        EXPECT_TRUE(fs::exists(res.run_dir / f)) << f;
    for (const char* f : {"steps.jsonl", "pairs.jsonl", "success_matrix.csv", "metrics.json", "params_pretrain.bin",
                          "stage_0.json", "stage_1.json", "params_stage_1.bin", "buffer_stage_1.bin"})
        EXPECT_TRUE(fs::exists(res.run_dir / "seed_0" / f)) << f;

    const auto manifest = json::parse(io::read_text(res.run_dir / "manifest.json"));
    EXPECT_EQ(manifest.at("method"), "mlr_ifa");
    EXPECT_EQ(manifest.at("lambda_ifa").get<double>(), 0.1);
    EXPECT_EQ(manifest.at("lambda_ifa_effective").get<double>(), 0.1);
    EXPECT_EQ(manifest.at("store_probability").get<double>(), 0.5);
    EXPECT_EQ(manifest.at("alpha").get<double>(), c.train.ifa.alpha);
    EXPECT_EQ(manifest.at("frozen_hashes").size(), 2u);

    const auto m = bench::SuccessMatrix::from_csv(io::read_text(res.run_dir / "seed_1" / "success_matrix.csv"));
    EXPECT_EQ(m.task_ids, (std::vector<int>{1, 2}));
    const auto met = bench::lifelong_metrics(m);
    EXPECT_DOUBLE_EQ(met.auc, res.seeds[1].metrics.auc);
    EXPECT_GT(res.buffer_bytes_mean, 0.0);
}

TEST(Run, DeterministicOutputs) {
    auto a = tiny("det_a"), b = tiny("det_b");
    const auto ra = run_experiment(a), rb = run_experiment(b);
    for (const char* f : {"metrics.json"}) EXPECT_EQ(io::read_text(ra.run_dir / f), io::read_text(rb.run_dir / f));
    for (const char* f : {"success_matrix.csv", "steps.jsonl", "pairs.jsonl", "params_stage_1.bin", "buffer_stage_1.bin"})
        EXPECT_EQ(io::read_file(ra.run_dir / "seed_0" / f), io::read_file(rb.run_dir / "seed_0" / f)) << f;
}

TEST(Run, SequentialHasNoBufferOrAlignment) {
    auto c = tiny("sequential");
    c.method = trainer::Method::sequential;
    c.seeds = {3};
    const auto res = run_experiment(c);
    EXPECT_EQ(res.buffer_bytes_mean, 0.0);
    const auto manifest = json::parse(io::read_text(res.run_dir / "manifest.json"));
    EXPECT_EQ(manifest.at("lambda_ifa_effective").get<double>(), 0.0);
    for (const auto& st : res.seeds[0].stages) EXPECT_TRUE(st.pairs.empty());
}

TEST(Ablation, GridsAndCsv) {
    auto base = tiny("ablation");
    base.seeds = {0};
    base.save_checkpoints = false;
    const auto table = run_ablation(AblationKind::buffer_probability, base);
    ASSERT_EQ(table.rows.size(), 3u);
    for (std::size_t i = 1; i < table.rows.size(); ++i)
        EXPECT_LE(table.rows[i - 1].buffer_bytes, table.rows[i].buffer_bytes);
    const auto csv = io::read_text(fs::path(base.output_dir) / "buffer_probability.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')),
              "parameter,value,fwt_mean,fwt_std,nbt_mean,nbt_std,auc_mean,auc_std,buffer_bytes");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);

    EXPECT_EQ(ablation_cells(AblationKind::alpha_sweep, base).size(), 4u);
    EXPECT_EQ(ablation_cells(AblationKind::cosine_vs_angle, base).size(), 2u);
    EXPECT_EQ(ablation_cells(AblationKind::pair_fraction, base).size(), 3u);
    EXPECT_THROW(ablation_cells(AblationKind::reference_mode_stub, base), NotImplemented);
    EXPECT_THROW(ablation_from_string("dropout"), ConfigError);
}

TEST(Embeddings, RoundTrip) {
    const auto dir = scratch("emb_rt");
    fs::create_directories(dir);
    EmbeddingDump d;
    d.embed = 3;
    d.labels = {4, 4, 5};
    d.latents = {1, 2, 3, 4, 5, 6, 7, 8, 9};
    d.reference_ids = {4, 5};
    d.references = {1, 0, 0, 0, 1, 0};
    write_embedding_dump(dir / "e", d);
    EXPECT_EQ(fs::file_size(dir / "e_references.bin"), 2u * 3u * 4u);
    const auto back = read_embedding_dump(dir / "e");
    EXPECT_EQ(back.labels, d.labels);
    EXPECT_EQ(back.latents, d.latents);
    EXPECT_EQ(back.references, d.references);

    EmbeddingDump empty;
    empty.embed = 3;
    write_embedding_dump(dir / "empty", empty);
    EXPECT_EQ(fs::file_size(dir / "empty.bin"), 0u);
    EXPECT_TRUE(read_embedding_dump(dir / "empty").latents.empty());
}

TEST(Embeddings, DumpFromRun) {
    auto c = tiny("emb_run");
    c.seeds = {0};
    const auto res = run_experiment(c);
    const auto stem = dump_embeddings(res.run_dir, 1);
    const auto d = read_embedding_dump(stem);
    EXPECT_EQ(d.reference_ids, (std::vector<int>{1, 2}));
    EXPECT_EQ(fs::file_size(stem.string() + "_references.bin"), 2u * 8u * 4u);
    EXPECT_EQ(d.labels.size(), 2u * 3u * 10u);
    EXPECT_THROW(dump_embeddings(res.run_dir, 5), ConfigError);
    EXPECT_THROW(dump_embeddings(scratch("emb_missing"), 0), ConfigError);
}

TEST(Cli, ExitCodes) {
    EXPECT_EQ(run_cli("lifelong -c /nonexistent/config.json"), 2);
    EXPECT_EQ(run_cli("lifelong -s method=er"), 2);
    EXPECT_EQ(run_cli("ablate -k reference_mode_stub"), 2);
    EXPECT_EQ(run_cli("frobnicate"), 2);

    const auto dir = scratch("cli");
    fs::create_directories(dir);
    bench::SuccessMatrix m{{3, 4}, {{0.8}, {0.6, 0.9}}};
    io::write_text(dir / "m.csv", m.to_csv());
    EXPECT_EQ(run_cli("metrics " + (dir / "m.csv").string() + " -o " + (dir / "m.json").string()), 0);
    const auto j = json::parse(io::read_text(dir / "m.json"));
    EXPECT_NEAR(j.at("fwt").get<double>(), 0.85, 1e-12);
    EXPECT_NEAR(j.at("nbt").get<double>(), 0.2, 1e-12);
    EXPECT_NEAR(j.at("auc").get<double>(), 0.8, 1e-12);
}
