// apr: command-line front end over the shared library.
//
//   apr run    [--config F] [--out DIR] [--set k=v]... [--some.key value]...
//   apr bench  ...same config flags...   three-seed mean and std
//   apr sweep  ...same config flags...   alpha and iteration grids
//   apr report --config F --task T | --classes N --dim D [--float-bytes 4] ...
//   apr decompose --in store.bin --out out.bin --k K

#include <cstdio>
#include <cstdlib>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "apr/apr.h"

namespace {

struct Failure {
    apr_status status;
};

void check(apr_status s) {
    if (s != APR_OK) throw Failure{s};
}

void log_line(const char *msg, void *user) {
    if (user == nullptr) std::fprintf(stderr, "[apr] %s\n", msg);
}

struct ConfigFlags {
    std::string path;
    std::string out;
    std::vector<std::string> sets;
    bool quiet = false;
};

void add_config_flags(CLI::App *sub, ConfigFlags &f) {
    sub->add_option("-c,--config", f.path, "JSON config file (defaults when omitted)");
    sub->add_option("-o,--out", f.out, "run directory (default: $APR_OUTPUT_ROOT or output.root, then output.name)");
    sub->add_option("-s,--set", f.sets, "override a config key, e.g. --set apr.alpha=32");
    sub->add_flag("-q,--quiet", f.quiet, "no progress output");
    sub->allow_extras();
}

// Extras of the form `--dotted.key value` or `--dotted.key=value`.
std::vector<std::pair<std::string, std::string>> collect_overrides(const ConfigFlags &f,
                                                                   const std::vector<std::string> &extras) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto &s : f.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw CLI::ValidationError("--set", "expected key=value, got '" + s + "'");
        out.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    for (std::size_t i = 0; i < extras.size(); ++i) {
        const auto &a = extras[i];
        if (a.rfind("--", 0) != 0 || a.size() < 3) throw CLI::ExtrasError({a});
        const auto eq = a.find('=');
        if (eq != std::string::npos) {
            out.emplace_back(a.substr(2, eq - 2), a.substr(eq + 1));
        } else {
            if (i + 1 >= extras.size()) throw CLI::ValidationError(a, "missing value");
            out.emplace_back(a.substr(2), extras[++i]);
        }
    }
    return out;
}

apr_config *make_config(const ConfigFlags &f, const std::vector<std::string> &extras) {
    apr_config *cfg = nullptr;
    check(apr_config_load(f.path.empty() ? nullptr : f.path.c_str(), &cfg));
    for (const auto &[k, v] : collect_overrides(f, extras)) {
        const auto s = apr_config_set(cfg, k.c_str(), v.c_str());
        if (s != APR_OK) {
            apr_config_free(cfg);
            throw Failure{s};
        }
    }
    return cfg;
}

std::string command_line(int argc, char **argv) {
    std::string s;
    for (int i = 0; i < argc; ++i) {
        if (i) s += ' ';
        s += argv[i];
    }
    return s;
}

const char *const kClassifiers[] = {"linear", "ncm", "mahalanobis"};

}  // namespace

int main(int argc, char **argv) {
    CLI::App app{"APR exemplar-free class-incremental learning engine"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(apr_version()));

    ConfigFlags run_f, bench_f, sweep_f;
    auto *run = app.add_subcommand("run", "train and evaluate one configuration");
    add_config_flags(run, run_f);
    auto *bench = app.add_subcommand("bench", "run the bench seed list and report mean and std");
    add_config_flags(bench, bench_f);
    auto *sweep = app.add_subcommand("sweep", "sweep attack magnitude and iteration count");
    add_config_flags(sweep, sweep_f);

    auto *report = app.add_subcommand("report", "storage accounting");
    std::string report_config;
    std::size_t report_task = 0;
    apr_storage_query q{0, 0, 0, 0, 0, 8, 4, 0};
    report->add_option("-c,--config", report_config, "derive the query from a config at --task");
    report->add_option("-t,--task", report_task, "task index for --config");
    report->add_option("--classes", q.classes, "old classes in the store");
    report->add_option("--dim", q.feature_dim, "feature dimension");
    report->add_option("--candidates", q.candidates, "candidate indices per class");
    report->add_option("--policy-records", q.policy_records, "stored augmentation records");
    report->add_option("--policy-bytes", q.policy_bytes, "bytes per augmentation record");
    report->add_option("--float-bytes", q.float_bytes, "bytes per stored real");
    report->add_option("--index-bytes", q.index_bytes, "bytes per stored index");
    report->add_option("--svd-k", q.svd_k, "rank of the decomposed covariance row (0 omits it)");

    auto *decompose = app.add_subcommand("decompose", "compress a prototype store file");
    std::string dec_in, dec_out;
    std::size_t dec_k = 0;
    decompose->add_option("-i,--in", dec_in, "input store file")->required();
    decompose->add_option("-o,--out", dec_out, "output store file")->required();
    decompose->add_option("-k,--k", dec_k, "rank (0 restores full covariances)")->required();

    CLI11_PARSE(app, argc, argv);
    const auto cmd = command_line(argc, argv);

    try {
        if (run->parsed()) {
            apr_config *cfg = make_config(run_f, run->remaining());
            apr_run *r = nullptr;
            const auto s = apr_run_benchmark(cfg, run_f.out.empty() ? nullptr : run_f.out.c_str(), cmd.c_str(),
                                             log_line, run_f.quiet ? &run_f : nullptr, &r);
            apr_config_free(cfg);
            check(s);
            for (const char *name : kClassifiers) {
                double inc = 0, last = 0;
                if (apr_run_summary(r, name, &inc, &last) == APR_OK)
                    std::printf("%-12s A_inc %.4f  A_last %.4f\n", name, inc, last);
            }
            apr_run_free(r);
        } else if (bench->parsed()) {
            apr_config *cfg = make_config(bench_f, bench->remaining());
            apr_bench *b = nullptr;
            const auto s = apr_bench_run(cfg, bench_f.out.empty() ? nullptr : bench_f.out.c_str(), cmd.c_str(),
                                         log_line, bench_f.quiet ? &bench_f : nullptr, &b);
            apr_config_free(cfg);
            check(s);
            std::size_t n = 0;
            check(apr_bench_seeds(b, &n));
            std::printf("%zu seeds\n", n);
            for (const char *name : kClassifiers) {
                double im = 0, is = 0, lm = 0, ls = 0;
                if (apr_bench_stat(b, name, "A_inc", &im, &is) != APR_OK) continue;
                check(apr_bench_stat(b, name, "A_last", &lm, &ls));
                std::printf("%-12s A_inc %.4f ± %.4f  A_last %.4f ± %.4f\n", name, im, is, lm, ls);
            }
            apr_bench_free(b);
        } else if (sweep->parsed()) {
            apr_config *cfg = make_config(sweep_f, sweep->remaining());
            std::size_t points = 0;
            const auto s = apr_sweep_run(cfg, sweep_f.out.empty() ? nullptr : sweep_f.out.c_str(), cmd.c_str(),
                                         log_line, sweep_f.quiet ? &sweep_f : nullptr, &points);
            apr_config_free(cfg);
            check(s);
            std::printf("%zu sweep points written to sweep.csv\n", points);
        } else if (report->parsed()) {
            if (!report_config.empty()) {
                apr_config *cfg = nullptr;
                check(apr_config_load(report_config.c_str(), &cfg));
                const auto s = apr_storage_query_from_config(cfg, report_task, &q);
                apr_config_free(cfg);
                check(s);
            }
            apr_storage_row rows[8];
            std::size_t n = 0;
            check(apr_storage_report(&q, rows, 8, &n));
            std::printf("%-22s %14s %12s\n", "component", "bytes", "MB");
            for (std::size_t i = 0; i < n && i < 8; ++i)
                std::printf("%-22s %14llu %12.2f\n", rows[i].component,
                            static_cast<unsigned long long>(rows[i].bytes), rows[i].megabytes);
        } else if (decompose->parsed()) {
            check(apr_store_decompose(dec_in.c_str(), dec_out.c_str(), dec_k));
            std::size_t classes = 0, d = 0, scalars = 0;
            check(apr_store_info(dec_out.c_str(), &classes, &d, &scalars));
            std::printf("%zu classes, d=%zu, %zu covariance scalars\n", classes, d, scalars);
        }
    } catch (const Failure &f) {
        std::fprintf(stderr, "apr: %s: %s\n", apr_status_name(f.status), apr_last_error());
        return static_cast<int>(f.status);
    } catch (const CLI::Error &e) {
        return app.exit(e);
    }
    return 0;
}
