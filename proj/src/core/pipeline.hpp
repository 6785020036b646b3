#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "classify.hpp"
#include "config.hpp"

namespace apr {

// Append-only `stage,task,epoch,key,value` file; every row is flushed.
class MetricsCsv {
   public:
    explicit MetricsCsv(const std::filesystem::path &path);

    void row(const std::string &stage, long task, long epoch, const std::string &key, double value);

   private:
    std::ofstream out_;
};

std::string format_value(double v);  // shortest round-trip decimal

struct AttackProbe {
    std::size_t task = 0;
    double median_before = 0.0;
    double median_after = 0.0;
    std::vector<double> before, after;  // per probe sample
    double seconds = 0.0;
};

// Median distance after over median distance before, pooled over every probe.
double pooled_attack_ratio(const std::vector<AttackProbe> &probes);

struct RunResult {
    std::filesystem::path dir;
    std::vector<ClassifierKind> classifiers;
    std::map<ClassifierKind, EvalResult> eval;
    std::vector<AttackProbe> probes;
    std::vector<ShrinkageChoice> shrinkage;  // per task, when Mahalanobis is evaluated
    double wall_seconds = 0.0;
};

struct RunHooks {
    std::function<void(const std::string &)> log;
    std::string command;  // recorded in run_meta.json
};

// The whole incremental run end to end. Writes config.json, seeds.json, metrics.csv,
// summary.json and run_meta.json into `dir`, plus per-task store and
// candidate files.
RunResult run_benchmark(const RunConfig &cfg, const std::filesystem::path &dir, const RunHooks &hooks = {});

struct SeedStat {
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation
};

struct BenchResult {
    std::vector<RunResult> runs;
    std::map<ClassifierKind, SeedStat> A_inc;
    std::map<ClassifierKind, SeedStat> A_last;
};

SeedStat seed_stat(const std::vector<double> &values);

// One run per (class_shuffle, randomness) pair in the bench lists, in
// dir/seed<i>, followed by bench.csv.
BenchResult run_bench(const RunConfig &cfg, const std::filesystem::path &dir, const RunHooks &hooks = {});

struct SweepPoint {
    std::string param;  // alpha | iterations
    double value = 0.0;
    RunResult run;
};

// One-dimensional sweeps over apr.alpha and apr.iterations, the other held at
// its configured value. Writes sweep.csv.
std::vector<SweepPoint> run_sweep(const RunConfig &cfg, const std::filesystem::path &dir, const RunHooks &hooks = {});

// Output root: $APR_OUTPUT_ROOT when set, else cfg.output_root.
std::filesystem::path output_root(const RunConfig &cfg);

}  // namespace apr
