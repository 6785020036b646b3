#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "config.hpp"
#include "pipeline.hpp"
#include "storage.hpp"
#include "testutil.hpp"

using namespace apr;
using testutil::kind_of;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string slurp(const fs::path &p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

fs::path scratch(const std::string &name) {
    const auto p = fs::temp_directory_path() / ("apr_test_cli_" + name);
    fs::remove_all(p);
    return p;
}

json tiny_config() {
    return json::parse(R"({
      "dataset": {"classes": 6, "input_dim": 8, "n_train": 40, "n_test": 10},
      "stream": {"tasks": 3, "n_val": 10},
      "model": {"hidden": [16], "feature_dim": 8},
      "optim": {"initial": {"epochs": 2, "batch_size": 16},
                "incremental": {"epochs": 2, "batch_size": 16, "replay_batch_size": 16}},
      "apr": {"alpha": 2, "iterations": 2, "k": 10},
      "adc": {"candidates": 20},
      "calibration": {"lr": "auto", "epochs": 8},
      "shrinkage": {"grid": [1, 8]},
      "covariance": {"mode": "svd", "k": 4}
    })");
}

int run_cli(const std::string &args, const fs::path &log) {
    const std::string cmd = std::string(APR_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

StorageQuery query_512(std::uint64_t classes) {
    StorageQuery q;
    q.classes = classes;
    q.feature_dim = 512;
    q.float_bytes = 4;
    q.svd_k = 8;
    return q;
}

}  // namespace

TEST(Config, DefaultsMatchReferenceValues) {
    const auto c = parse_config(json::object());
    validate(c);
    EXPECT_EQ(c.loss.lambda_kd, 10.0);
    EXPECT_EQ(c.loss.ce_temperature, 1.0);
    EXPECT_EQ(c.attack_cfg.alpha, 64.0);
    EXPECT_EQ(c.candidates.k, 200u);
    EXPECT_EQ(c.adc.alpha, 6.32);
    EXPECT_EQ(c.adc.iterations, 9u);
    EXPECT_EQ(c.transfer.lr, 1e-4);
    EXPECT_EQ(c.transfer.epochs, 64u);
    EXPECT_FALSE(c.transfer.auto_lr);
    EXPECT_EQ(c.optim_initial.lr, 0.1);
    EXPECT_EQ(c.shrinkage.values.size(), 17u);
    EXPECT_EQ(c.model.head_scale, 16.0);
}

TEST(Config, JsonRoundTrip) {
    const auto c = parse_config(tiny_config());
    EXPECT_EQ(to_json(parse_config(to_json(c))), to_json(c));
}

TEST(Config, DottedOverrides) {
    auto tree = tiny_config();
    apply_override(tree, "apr.alpha", "32");
    apply_override(tree, "model.head", "linear");
    apply_override(tree, "eval.classifiers", R"(["ncm"])");
    apply_override(tree, "output.name", "abc");
    const auto c = parse_config(tree);
    EXPECT_EQ(c.attack_cfg.alpha, 32.0);
    EXPECT_EQ(c.model.head, HeadMode::Linear);
    EXPECT_EQ(c.classifiers, std::vector<ClassifierKind>{ClassifierKind::Ncm});
    EXPECT_EQ(c.run_name, "abc");
}

TEST(Config, UnknownKeysAreConfigErrors) {
    auto tree = tiny_config();
    apply_override(tree, "apr.alhpa", "32");
    EXPECT_EQ(kind_of([&] { parse_config(tree); }), ErrorKind::Config);
    EXPECT_EQ(kind_of([] { parse_config(json::parse(R"({"nope": 1})")); }), ErrorKind::Config);
    auto t2 = tiny_config();
    EXPECT_EQ(kind_of([&] { apply_override(t2, "apr.alpha.x", "1"); }), ErrorKind::Config);
}

TEST(Config, TransferLearningRateAuto) {
    auto tree = tiny_config();
    EXPECT_TRUE(parse_config(tree).transfer.auto_lr);
    apply_override(tree, "calibration.lr", "1e-3");
    const auto c = parse_config(tree);
    EXPECT_FALSE(c.transfer.auto_lr);
    EXPECT_EQ(c.transfer.lr, 1e-3);
    apply_override(tree, "calibration.lr", "fast");
    EXPECT_EQ(kind_of([&] { parse_config(tree); }), ErrorKind::Config);
}

TEST(Config, RangeChecksBeforeCompute) {
    for (const auto &[key, value] : std::vector<std::pair<std::string, std::string>>{
             {"apr.alpha", "0"}, {"stream.tasks", "0"}, {"apr.k", "0"}, {"stream.mode", "\"tepid\""},
             {"covariance.k", "99"}, {"augment.flip_prob", "2"}, {"shrinkage.grid", "[]"}}) {
        auto tree = tiny_config();
        apply_override(tree, key, value);
        EXPECT_EQ(kind_of([&] { validate(parse_config(tree)); }), ErrorKind::Config) << key << "=" << value;
    }
}

TEST(Config, ReferenceConfigLoads) {
    const auto c = load_config(std::string(APR_SOURCE_DIR) + "/configs/reference.json", {{"apr.alpha", "20"}});
    validate(c);
    EXPECT_EQ(c.dataset.synthetic.classes, 20u);
    EXPECT_EQ(c.stream.tasks, 5u);
    EXPECT_EQ(c.attack_cfg.alpha, 20.0);
    EXPECT_EQ(kind_of([] { load_config("/nonexistent/apr.json"); }), ErrorKind::Io);
}

TEST(Config, OutputRootFromEnvironment) {
    RunConfig c;
    c.output_root = "from_config";
    ::unsetenv("APR_OUTPUT_ROOT");
    EXPECT_EQ(output_root(c), fs::path("from_config"));
    ::setenv("APR_OUTPUT_ROOT", "/tmp/from_env", 1);
    EXPECT_EQ(output_root(c), fs::path("/tmp/from_env"));
    ::unsetenv("APR_OUTPUT_ROOT");
}

TEST(Storage, FullAndSvdRowsAt512) {
    const auto rows = storage_report(query_512(90));
    std::map<std::string, StorageRow> by;
    for (const auto &r : rows) by[r.component] = r;
    EXPECT_EQ(by.at("covariances_full").bytes, 94371840u);
    EXPECT_NEAR(by.at("covariances_full").megabytes, 94.32, 0.06);
    EXPECT_EQ(by.at("covariances_svd8").bytes, 2972160u);
    EXPECT_NEAR(by.at("covariances_svd8").megabytes, 2.97, 0.005);
    EXPECT_EQ(by.at("prototypes").bytes, 90u * 512 * 4);
    auto q = query_512(90);
    q.float_bytes = 8;
    EXPECT_NEAR(storage_report(q)[1].megabytes, 188.7, 0.05);
}

TEST(Storage, ZeroClassesGiveZeroRows) {
    for (const auto &r : storage_report(query_512(0))) EXPECT_EQ(r.bytes, 0u) << r.component;
    const auto c = parse_config(tiny_config());
    for (const auto &r : storage_report(storage_query(c, 0))) EXPECT_EQ(r.bytes, 0u) << r.component;
}

TEST(Storage, QueryFromConfigCountsOldClasses) {
    const auto c = parse_config(tiny_config());
    const auto q = storage_query(c, 2);
    EXPECT_EQ(q.classes, 4u);
    EXPECT_EQ(q.candidates, 10u);
    EXPECT_EQ(q.policy_records, 40u);
    EXPECT_EQ(q.svd_k, 4u);
    EXPECT_EQ(kind_of([&] { storage_query(c, 3); }), ErrorKind::Config);
}

TEST(Run, DirectoryIsCompleteAndDeterministic) {
    const auto root = scratch("determinism");
    const auto cfg = parse_config(tiny_config());
    const auto a = run_benchmark(cfg, root / "a");
    const auto b = run_benchmark(cfg, root / "b");
    for (const char *f : {"config.json", "seeds.json", "metrics.csv", "summary.json", "run_meta.json",
                          "store_t2.bin", "candidates_t1.bin", "candidates_t2.bin"})
        EXPECT_TRUE(fs::exists(root / "a" / f)) << f;
    EXPECT_EQ(slurp(root / "a" / "metrics.csv"), slurp(root / "b" / "metrics.csv"));
    EXPECT_EQ(slurp(root / "a" / "store_t2.bin"), slurp(root / "b" / "store_t2.bin"));
    EXPECT_EQ(a.eval.at(ClassifierKind::Ncm).A_inc, b.eval.at(ClassifierKind::Ncm).A_inc);
    EXPECT_EQ(a.eval.at(ClassifierKind::Mahalanobis).acc.size(), 3u);

    const auto csv = slurp(root / "a" / "metrics.csv");
    EXPECT_EQ(csv.rfind("stage,task,epoch,key,value\n", 0), 0u);
    for (const char *needle : {"\ntrain,1,", "\neval,2,", "A_inc", "A_last"})
        EXPECT_NE(csv.find(needle), std::string::npos) << needle;
    const auto resolved = parse_config(json::parse(slurp(root / "a" / "config.json")));
    EXPECT_EQ(to_json(resolved), to_json(cfg));
    fs::remove_all(root);
}

TEST(Run, SingleTaskIsJointTraining) {
    const auto root = scratch("single");
    auto tree = tiny_config();
    apply_override(tree, "stream.tasks", "1");
    const auto r = run_benchmark(parse_config(tree), root);
    EXPECT_EQ(r.eval.at(ClassifierKind::Ncm).acc.size(), 1u);
    EXPECT_TRUE(r.probes.empty());
    for (const auto &e : fs::directory_iterator(root))
        EXPECT_NE(e.path().filename().string().rfind("candidates", 0), 0u) << e.path();
    fs::remove_all(root);
}

TEST(Cli, RunWithOverridesAndEnvironmentRoot) {
    const auto root = scratch("env");
    fs::create_directories(root);
    {
        std::ofstream(root / "tiny.json") << tiny_config().dump();
    }
    const auto cmd = "APR_OUTPUT_ROOT=" + root.string() + " " + std::string(APR_CLI_PATH) + " run -q -c " +
                     (root / "tiny.json").string() + " --set output.name=viaenv --set stream.tasks=2 > " +
                     (root / "log.txt").string() + " 2>&1";
    ASSERT_EQ(std::system(cmd.c_str()), 0) << slurp(root / "log.txt");
    ASSERT_TRUE(fs::exists(root / "viaenv" / "summary.json"));
    const auto resolved = json::parse(slurp(root / "viaenv" / "config.json"));
    EXPECT_EQ(resolved["stream"]["tasks"], 2);
    fs::remove_all(root);
}

TEST(Cli, BadOverrideFails) {
    const auto root = scratch("bad");
    fs::create_directories(root);
    EXPECT_NE(run_cli("run -q --set apr.nonexistent=1 -o " + (root / "r").string(), root / "log.txt"), 0);
    EXPECT_NE(slurp(root / "log.txt").find("nonexistent"), std::string::npos);
    fs::remove_all(root);
}

TEST(Cli, ReportAndDecompose) {
    const auto root = scratch("report");
    fs::create_directories(root);
    ASSERT_EQ(run_cli("report --classes 90 --dim 512 --float-bytes 4 --svd-k 8", root / "report.txt"), 0);
    const auto report = slurp(root / "report.txt");
    EXPECT_NE(report.find("94371840"), std::string::npos) << report;
    EXPECT_NE(report.find("2972160"), std::string::npos) << report;

    PrototypeStore store;
    store.feature_dim = 6;
    for (std::uint32_t c = 0; c < 3; ++c) {
        StoreEntry e;
        e.cls = c;
        e.mean = Tensor::zeros({6});
        e.cov = Tensor::identity(6);
        store.entries[c] = e;
    }
    save_store(store, (root / "in.bin").string());
    ASSERT_EQ(run_cli("decompose -i " + (root / "in.bin").string() + " -o " + (root / "out.bin").string() + " -k 2",
                      root / "decompose.txt"),
              0)
        << slurp(root / "decompose.txt");
    const auto out = load_store((root / "out.bin").string());
    EXPECT_EQ(out.entries.at(1).stored_cov_scalars(), decomposed_size(6, 2));
    EXPECT_NE(run_cli("decompose -i " + (root / "in.bin").string() + " -o " + (root / "x.bin").string() + " -k 9",
                      root / "decompose_bad.txt"),
              0);
    fs::remove_all(root);
}
