#include "apr/apr.h"

#include <cstring>
#include <exception>
#include <fstream>
#include <memory>
#include <new>
#include <string>

#include "config.hpp"
#include "pipeline.hpp"
#include "storage.hpp"

struct apr_config {
    nlohmann::json tree;  // user tree; defaults are applied on use
    apr::RunConfig resolved;
};

struct apr_run {
    apr::RunResult result;
};

struct apr_bench {
    apr::BenchResult result;
};

namespace {

thread_local std::string g_last_error;

apr_status status_of(apr::ErrorKind k) {
    switch (k) {
        case apr::ErrorKind::Dimension: return APR_E_DIMENSION;
        case apr::ErrorKind::Numeric: return APR_E_NUMERIC;
        case apr::ErrorKind::Contract: return APR_E_CONTRACT;
        case apr::ErrorKind::Config: return APR_E_CONFIG;
        case apr::ErrorKind::Decode: return APR_E_DECODE;
        case apr::ErrorKind::Stats: return APR_E_STATS;
        case apr::ErrorKind::Io: return APR_E_IO;
    }
    return APR_E_INTERNAL;
}

struct ArgError {
    std::string what;
};

template <typename F>
apr_status guarded(F &&f) {
    g_last_error.clear();
    try {
        f();
        return APR_OK;
    } catch (const apr::Error &e) {
        g_last_error = e.what();
        return status_of(e.kind());
    } catch (const ArgError &e) {
        g_last_error = e.what;
        return APR_E_ARGUMENT;
    } catch (const std::bad_alloc &) {
        g_last_error = "out of memory";
        return APR_E_INTERNAL;
    } catch (const std::exception &e) {
        g_last_error = e.what();
        return APR_E_INTERNAL;
    } catch (...) {
        g_last_error = "unknown failure";
        return APR_E_INTERNAL;
    }
}

void need(const void *p, const char *name) {
    if (p == nullptr) throw ArgError{std::string(name) + " is null"};
}

void copy_out(const std::string &s, char *buf, std::size_t cap, std::size_t *len) {
    if (len != nullptr) *len = s.size();
    if (buf == nullptr || cap == 0) return;
    if (cap <= s.size()) throw ArgError{"buffer too small: need " + std::to_string(s.size() + 1) + " bytes"};
    std::memcpy(buf, s.c_str(), s.size() + 1);
}

apr::ClassifierKind classifier(const char *name) {
    need(name, "classifier");
    try {
        return apr::parse_classifier(name);
    } catch (const apr::Error &e) {
        throw ArgError{e.what()};
    }
}

apr::RunHooks hooks(const char *command, apr_log_fn log, void *user) {
    apr::RunHooks h;
    if (command != nullptr) h.command = command;
    if (log != nullptr) h.log = [log, user](const std::string &m) { log(m.c_str(), user); };
    return h;
}

std::filesystem::path run_dir(const apr::RunConfig &cfg, const char *out_dir) {
    if (out_dir != nullptr) return out_dir;
    return apr::output_root(cfg) / cfg.run_name;
}

}  // namespace

extern "C" {

const char *apr_version(void) { return "0.1.0"; }

const char *apr_status_name(apr_status s) {
    switch (s) {
        case APR_OK: return "ok";
        case APR_E_DIMENSION: return "dimension error";
        case APR_E_NUMERIC: return "numeric error";
        case APR_E_CONTRACT: return "contract error";
        case APR_E_CONFIG: return "config error";
        case APR_E_DECODE: return "decode error";
        case APR_E_STATS: return "stats error";
        case APR_E_IO: return "io error";
        case APR_E_ARGUMENT: return "argument error";
        case APR_E_INTERNAL: return "internal error";
    }
    return "unknown status";
}

const char *apr_last_error(void) { return g_last_error.c_str(); }

apr_status apr_config_new(apr_config **out) { return apr_config_load(nullptr, out); }

apr_status apr_config_load(const char *path, apr_config **out) {
    return guarded([&] {
        need(out, "out");
        *out = nullptr;
        auto cfg = std::make_unique<apr_config>();
        cfg->tree = nlohmann::json::object();
        if (path != nullptr) {
            std::ifstream in(path);
            if (!in) apr::fail(apr::ErrorKind::Io, std::string("cannot open config ") + path);
            try {
                cfg->tree = nlohmann::json::parse(in, nullptr, true, true);
            } catch (const nlohmann::json::exception &e) {
                apr::fail(apr::ErrorKind::Config, std::string("config is not valid JSON: ") + e.what());
            }
        }
        cfg->resolved = apr::resolve_config(cfg->tree);
        *out = cfg.release();
    });
}

apr_status apr_config_set(apr_config *cfg, const char *dotted_key, const char *value) {
    return guarded([&] {
        need(cfg, "cfg");
        need(dotted_key, "dotted_key");
        need(value, "value");
        auto tree = cfg->tree;
        apr::apply_override(tree, dotted_key, value);
        cfg->resolved = apr::resolve_config(tree);  // leaves cfg untouched on failure
        cfg->tree = std::move(tree);
    });
}

apr_status apr_config_json(const apr_config *cfg, char *buf, size_t cap, size_t *len) {
    return guarded([&] {
        need(cfg, "cfg");
        copy_out(apr::to_json(cfg->resolved).dump(2), buf, cap, len);
    });
}

apr_status apr_config_run_dir(const apr_config *cfg, char *buf, size_t cap, size_t *len) {
    return guarded([&] {
        need(cfg, "cfg");
        copy_out(run_dir(cfg->resolved, nullptr).string(), buf, cap, len);
    });
}

void apr_config_free(apr_config *cfg) { delete cfg; }

apr_status apr_run_benchmark(const apr_config *cfg, const char *out_dir, const char *command, apr_log_fn log,
                             void *user, apr_run **out) {
    return guarded([&] {
        need(cfg, "cfg");
        need(out, "out");
        *out = nullptr;
        auto run = std::make_unique<apr_run>();
        run->result = apr::run_benchmark(cfg->resolved, run_dir(cfg->resolved, out_dir), hooks(command, log, user));
        *out = run.release();
    });
}

apr_status apr_run_tasks(const apr_run *run, size_t *tasks) {
    return guarded([&] {
        need(run, "run");
        need(tasks, "tasks");
        *tasks = run->result.eval.empty() ? 0 : run->result.eval.begin()->second.acc.size();
    });
}

apr_status apr_run_summary(const apr_run *run, const char *name, double *a_inc, double *a_last) {
    return guarded([&] {
        need(run, "run");
        const auto it = run->result.eval.find(classifier(name));
        if (it == run->result.eval.end()) throw ArgError{std::string(name) + " was not evaluated in this run"};
        if (a_inc != nullptr) *a_inc = it->second.A_inc;
        if (a_last != nullptr) *a_last = it->second.A_last;
    });
}

apr_status apr_run_accuracy(const apr_run *run, const char *name, size_t task, size_t group, double *acc) {
    return guarded([&] {
        need(run, "run");
        need(acc, "acc");
        const auto it = run->result.eval.find(classifier(name));
        if (it == run->result.eval.end()) throw ArgError{std::string(name) + " was not evaluated in this run"};
        const auto &a = it->second.acc;
        if (task >= a.size() || group > task) throw ArgError{"no accuracy entry at that (task, group)"};
        *acc = a[task][group];
    });
}

apr_status apr_run_wall_seconds(const apr_run *run, double *seconds) {
    return guarded([&] {
        need(run, "run");
        need(seconds, "seconds");
        *seconds = run->result.wall_seconds;
    });
}

void apr_run_free(apr_run *run) { delete run; }

apr_status apr_bench_run(const apr_config *cfg, const char *out_dir, const char *command, apr_log_fn log, void *user,
                         apr_bench **out) {
    return guarded([&] {
        need(cfg, "cfg");
        need(out, "out");
        *out = nullptr;
        auto b = std::make_unique<apr_bench>();
        b->result = apr::run_bench(cfg->resolved, run_dir(cfg->resolved, out_dir), hooks(command, log, user));
        *out = b.release();
    });
}

apr_status apr_bench_seeds(const apr_bench *bench, size_t *seeds) {
    return guarded([&] {
        need(bench, "bench");
        need(seeds, "seeds");
        *seeds = bench->result.runs.size();
    });
}

apr_status apr_bench_stat(const apr_bench *bench, const char *name, const char *metric, double *mean, double *std) {
    return guarded([&] {
        need(bench, "bench");
        need(metric, "metric");
        const auto kind = classifier(name);
        const std::string m = metric;
        const auto &table = m == "A_inc" ? bench->result.A_inc : bench->result.A_last;
        if (m != "A_inc" && m != "A_last") throw ArgError{"metric must be A_inc or A_last"};
        const auto it = table.find(kind);
        if (it == table.end()) throw ArgError{std::string(name) + " was not evaluated in this bench"};
        if (mean != nullptr) *mean = it->second.mean;
        if (std != nullptr) *std = it->second.std;
    });
}

void apr_bench_free(apr_bench *bench) { delete bench; }

apr_status apr_sweep_run(const apr_config *cfg, const char *out_dir, const char *command, apr_log_fn log, void *user,
                         size_t *points) {
    return guarded([&] {
        need(cfg, "cfg");
        const auto res = apr::run_sweep(cfg->resolved, run_dir(cfg->resolved, out_dir), hooks(command, log, user));
        if (points != nullptr) *points = res.size();
    });
}

apr_status apr_storage_query_from_config(const apr_config *cfg, size_t task, apr_storage_query *out) {
    return guarded([&] {
        need(cfg, "cfg");
        need(out, "out");
        const auto q = apr::storage_query(cfg->resolved, task);
        *out = {q.classes,      q.feature_dim, q.candidates,  q.policy_records,
                q.policy_bytes, q.float_bytes, q.index_bytes, q.svd_k};
    });
}

apr_status apr_storage_report(const apr_storage_query *q, apr_storage_row *rows, size_t cap, size_t *n_rows) {
    return guarded([&] {
        need(q, "query");
        const apr::StorageQuery sq{q->classes,      q->feature_dim, q->candidates,  q->policy_records,
                                   q->policy_bytes, q->float_bytes, q->index_bytes, q->svd_k};
        const auto report = apr::storage_report(sq);
        if (n_rows != nullptr) *n_rows = report.size();
        if (rows == nullptr) return;
        for (std::size_t i = 0; i < report.size() && i < cap; ++i) {
            std::memset(rows[i].component, 0, sizeof rows[i].component);
            std::strncpy(rows[i].component, report[i].component.c_str(), sizeof rows[i].component - 1);
            rows[i].bytes = report[i].bytes;
            rows[i].megabytes = report[i].megabytes;
        }
    });
}

apr_status apr_store_decompose(const char *in_path, const char *out_path, size_t k) {
    return guarded([&] {
        need(in_path, "in_path");
        need(out_path, "out_path");
        apr::save_store(apr::compress_store(apr::load_store(in_path), k), out_path);
    });
}

apr_status apr_store_info(const char *path, size_t *classes, size_t *feature_dim, size_t *cov_scalars) {
    return guarded([&] {
        need(path, "path");
        const auto store = apr::load_store(path);
        std::size_t n = 0;
        for (const auto &[c, e] : store.entries) n += e.stored_cov_scalars();
        if (classes != nullptr) *classes = store.entries.size();
        if (feature_dim != nullptr) *feature_dim = store.feature_dim;
        if (cov_scalars != nullptr) *cov_scalars = n;
    });
}

}  // extern "C"
