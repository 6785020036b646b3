// Exercises the shared library through its public header only.
#include <apr/apr.h>
#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

struct Config {
    apr_config *p = nullptr;
    Config() { EXPECT_EQ(apr_config_new(&p), APR_OK); }
    ~Config() { apr_config_free(p); }
};

void set(apr_config *c, const char *k, const char *v) { ASSERT_EQ(apr_config_set(c, k, v), APR_OK) << apr_last_error(); }

void make_tiny(apr_config *c) {
    set(c, "dataset.classes", "6");
    set(c, "dataset.input_dim", "8");
    set(c, "dataset.n_train", "40");
    set(c, "dataset.n_test", "10");
    set(c, "stream.tasks", "3");
    set(c, "stream.n_val", "10");
    set(c, "model.hidden", "[16]");
    set(c, "model.feature_dim", "8");
    set(c, "optim.initial.epochs", "2");
    set(c, "optim.incremental.epochs", "2");
    set(c, "apr.k", "10");
    set(c, "apr.alpha", "2");
    set(c, "apr.iterations", "2");
    set(c, "adc.candidates", "20");
    set(c, "calibration.lr", "auto");
    set(c, "shrinkage.grid", "[1, 8]");
    set(c, "bench.class_shuffle", "[1, 2]");
    set(c, "bench.randomness", "[0, 1]");
    set(c, "sweep.alpha", "[1]");
    set(c, "sweep.iterations", "[1]");
}

std::string json_of(const apr_config *c) {
    std::size_t len = 0;
    EXPECT_EQ(apr_config_json(c, nullptr, 0, &len), APR_OK);
    std::string s(len + 1, '\0');
    EXPECT_EQ(apr_config_json(c, s.data(), s.size(), &len), APR_OK);
    s.resize(len);
    return s;
}

fs::path scratch(const std::string &name) {
    const auto p = fs::temp_directory_path() / ("apr_test_capi_" + name);
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST(CApi, VersionAndStatusNames) {
    EXPECT_STRNE(apr_version(), "");
    EXPECT_STREQ(apr_status_name(APR_OK), "ok");
    EXPECT_STRNE(apr_status_name(APR_E_CONFIG), apr_status_name(APR_E_DECODE));
}

TEST(CApi, ConfigSetAndJson) {
    Config c;
    set(c.p, "apr.alpha", "32");
    EXPECT_NE(json_of(c.p).find("\"alpha\": 32"), std::string::npos);
    EXPECT_EQ(apr_config_set(c.p, "apr.bogus", "1"), APR_E_CONFIG);
    EXPECT_NE(std::string(apr_last_error()).find("bogus"), std::string::npos);
    EXPECT_EQ(apr_config_set(c.p, "calibration.lr", "fast"), APR_E_CONFIG);
    // a failed set leaves the config as it was
    EXPECT_NE(json_of(c.p).find("\"alpha\": 32"), std::string::npos);
}

TEST(CApi, NullArgumentsAreRejected) {
    EXPECT_EQ(apr_config_new(nullptr), APR_E_ARGUMENT);
    EXPECT_EQ(apr_config_set(nullptr, "a", "1"), APR_E_ARGUMENT);
    double a = 0, b = 0;
    EXPECT_EQ(apr_run_summary(nullptr, "ncm", &a, &b), APR_E_ARGUMENT);
    apr_config_free(nullptr);
    apr_run_free(nullptr);
}

TEST(CApi, SmallBufferReportsLength) {
    Config c;
    std::size_t len = 0;
    char buf[8];
    EXPECT_EQ(apr_config_json(c.p, buf, sizeof buf, &len), APR_E_ARGUMENT);
    EXPECT_GT(len, sizeof buf);
}

TEST(CApi, LoadMissingFileIsIoError) {
    apr_config *c = nullptr;
    EXPECT_EQ(apr_config_load("/nonexistent/config.json", &c), APR_E_IO);
    EXPECT_EQ(c, nullptr);
}

TEST(CApi, RunDirHonoursEnvironment) {
    Config c;
    set(c.p, "output.name", "named");
    ::setenv("APR_OUTPUT_ROOT", "/tmp/capi_root", 1);
    char buf[256];
    std::size_t len = 0;
    ASSERT_EQ(apr_config_run_dir(c.p, buf, sizeof buf, &len), APR_OK);
    EXPECT_EQ(fs::path(buf), fs::path("/tmp/capi_root") / "named");
    ::unsetenv("APR_OUTPUT_ROOT");
}

TEST(CApi, StorageReport) {
    apr_storage_query q{90, 512, 0, 0, 0, 4, 4, 8};
    apr_storage_row rows[8];
    std::size_t n = 0;
    ASSERT_EQ(apr_storage_report(&q, rows, 8, &n), APR_OK);
    bool full = false, svd = false;
    for (std::size_t i = 0; i < n; ++i) {
        if (std::string(rows[i].component) == "covariances_full") full = rows[i].bytes == 94371840u;
        if (std::string(rows[i].component) == "covariances_svd8") svd = rows[i].bytes == 2972160u;
    }
    EXPECT_TRUE(full);
    EXPECT_TRUE(svd);
    q.svd_k = 600;
    EXPECT_EQ(apr_storage_report(&q, rows, 8, &n), APR_E_CONFIG);
}

TEST(CApi, RunBenchAndSweep) {
    Config c;
    make_tiny(c.p);
    const auto root = scratch("run");

    std::vector<std::string> log;
    apr_run *run = nullptr;
    ASSERT_EQ(apr_run_benchmark(c.p, (root / "run").c_str(), "test", [](const char *m, void *u) {
                  static_cast<std::vector<std::string> *>(u)->push_back(m);
              }, &log, &run),
              APR_OK)
        << apr_last_error();
    EXPECT_FALSE(log.empty());
    std::size_t tasks = 0;
    EXPECT_EQ(apr_run_tasks(run, &tasks), APR_OK);
    EXPECT_EQ(tasks, 3u);
    double inc = -1, last = -1, acc = -1, secs = -1;
    EXPECT_EQ(apr_run_summary(run, "ncm", &inc, &last), APR_OK);
    EXPECT_GE(inc, 0.0);
    EXPECT_LE(inc, 1.0);
    EXPECT_EQ(apr_run_accuracy(run, "mahalanobis", 2, 0, &acc), APR_OK);
    EXPECT_EQ(apr_run_accuracy(run, "mahalanobis", 1, 2, &acc), APR_E_ARGUMENT);
    EXPECT_EQ(apr_run_summary(run, "knn", &inc, &last), APR_E_ARGUMENT);
    EXPECT_EQ(apr_run_wall_seconds(run, &secs), APR_OK);
    EXPECT_GT(secs, 0.0);
    apr_run_free(run);

    std::size_t classes = 0, d = 0, scalars = 0;
    const auto store = root / "run" / "store_t2.bin";
    ASSERT_EQ(apr_store_info(store.c_str(), &classes, &d, &scalars), APR_OK);
    EXPECT_EQ(classes, 6u);
    EXPECT_EQ(scalars, 6u * 8 * 8);
    const auto small = root / "small.bin";
    ASSERT_EQ(apr_store_decompose(store.c_str(), small.c_str(), 2), APR_OK);
    ASSERT_EQ(apr_store_info(small.c_str(), &classes, &d, &scalars), APR_OK);
    EXPECT_EQ(scalars, 6u * (2 * 2 * 8 + 4));
    EXPECT_EQ(apr_store_info((root / "missing.bin").c_str(), &classes, &d, &scalars), APR_E_IO);

    apr_bench *bench = nullptr;
    ASSERT_EQ(apr_bench_run(c.p, (root / "bench").c_str(), nullptr, nullptr, nullptr, &bench), APR_OK)
        << apr_last_error();
    std::size_t seeds = 0;
    EXPECT_EQ(apr_bench_seeds(bench, &seeds), APR_OK);
    EXPECT_EQ(seeds, 2u);
    double mean = -1, sd = -1;
    EXPECT_EQ(apr_bench_stat(bench, "ncm", "A_last", &mean, &sd), APR_OK);
    EXPECT_GE(sd, 0.0);
    EXPECT_EQ(apr_bench_stat(bench, "ncm", "A_first", &mean, &sd), APR_E_ARGUMENT);
    apr_bench_free(bench);
    EXPECT_TRUE(fs::exists(root / "bench" / "bench.csv"));

    std::size_t points = 0;
    ASSERT_EQ(apr_sweep_run(c.p, (root / "sweep").c_str(), nullptr, nullptr, nullptr, &points), APR_OK)
        << apr_last_error();
    EXPECT_EQ(points, 2u);
    EXPECT_TRUE(fs::exists(root / "sweep" / "sweep.csv"));
    fs::remove_all(root);
}
