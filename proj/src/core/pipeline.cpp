#include "pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>

#include "storage.hpp"

#ifndef APR_GIT_REV
#define APR_GIT_REV "unknown"
#endif

namespace apr {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_value(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

MetricsCsv::MetricsCsv(const fs::path &path) {
    const bool fresh = !fs::exists(path);
    out_.open(path, std::ios::app);
    require(static_cast<bool>(out_), ErrorKind::Io, "cannot open " + path.string());
    if (fresh) out_ << "stage,task,epoch,key,value\n" << std::flush;
}

void MetricsCsv::row(const std::string &stage, long task, long epoch, const std::string &key, double value) {
    out_ << stage << ',' << task << ',' << epoch << ',' << key << ',' << format_value(value) << '\n' << std::flush;
    require(static_cast<bool>(out_), ErrorKind::Io, "metrics write failed");
}

fs::path output_root(const RunConfig &cfg) {
    if (const char *env = std::getenv("APR_OUTPUT_ROOT"); env != nullptr && *env != '\0') return env;
    return cfg.output_root;
}

namespace {

void write_json(const fs::path &path, const json &j) {
    std::ofstream out(path);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
    out << j.dump(2) << '\n';
}

DataPool load_pool(const RunConfig &cfg) {
    if (cfg.dataset.kind == "synthetic") return make_synthetic_pool(cfg.dataset.synthetic, cfg.dataset.seed);
    DataPool pool;
    pool.train = read_dataset_file(cfg.dataset.train_path, SplitTag::Train);
    pool.test = read_dataset_file(cfg.dataset.test_path, SplitTag::Test);
    require(pool.train.input_dim() == pool.test.input_dim(), ErrorKind::Dimension,
            "train and test files have different widths");
    std::uint32_t top = 0;
    for (auto l : pool.train.labels) top = std::max(top, l);
    pool.classes = static_cast<std::size_t>(top) + 1;
    for (std::uint32_t c = 0; c < pool.classes; ++c) {
        require(!pool.train.rows_of(c).empty(), ErrorKind::Config,
                "train file has no samples of label " + std::to_string(c));
        require(!pool.test.rows_of(c).empty(), ErrorKind::Config,
                "test file has no samples of label " + std::to_string(c));
    }
    for (auto l : pool.test.labels)
        require(l < pool.classes, ErrorKind::Config, "test label " + std::to_string(l) + " never seen in train");
    return pool;
}

Network make_network(const RunConfig &cfg, std::size_t input_dim, std::size_t classes, Rng &rng) {
    std::vector<std::size_t> widths{input_dim};
    widths.insert(widths.end(), cfg.model.hidden.begin(), cfg.model.hidden.end());
    widths.push_back(cfg.model.feature_dim);
    std::vector<Activation> acts(widths.size() - 1, cfg.model.activation);
    acts.back() = Activation::Identity;
    Network net;
    net.extractor = ExtractorParams::mlp(widths, acts, rng);
    net.head = ClassifierHead::create(classes, cfg.model.feature_dim, cfg.model.head, cfg.model.head_scale,
                                      cfg.model.head_init_std, rng);
    return net;
}

void add_class_stats(PrototypeStore &store, const ExtractorParams &f, const LabeledSet &data,
                     const std::vector<std::uint32_t> &classes, std::size_t task, std::size_t svd_k) {
    for (auto &[c, s] : compute_class_stats(f, data, classes)) {
        StoreEntry e;
        e.cls = c;
        e.mean = s.mean;
        if (svd_k > 0)
            e.cov = decompose(s.covariance, svd_k);
        else
            e.cov = s.covariance;
        e.created_task = e.calibrated_task = static_cast<std::uint32_t>(task);
        store.entries[c] = std::move(e);
    }
    store.feature_dim = f.feature_dim();
}

double median(std::vector<double> v) {
    require(!v.empty(), ErrorKind::Contract, "median of nothing");
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Distance to the prototypes before and after one noise-free attack on a
// round-robin batch of candidates.
AttackProbe probe_attack(const ExtractorParams &f_old, const LabeledSet &data, const CandidateSet &cands,
                         const std::map<std::uint32_t, Tensor> &protos, AttackConfig cfg, std::size_t task,
                         std::uint64_t seed) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t n = std::min<std::size_t>(64, cands.total());
    const auto M = cands.classes.size();
    std::vector<Tensor> xs, ts;
    for (std::size_t i = 0; i < n; ++i) {
        const auto &cc = cands.classes[i % M];
        const auto j = (i / M) % cc.indices.size();
        xs.push_back(apply_policy(data.samples.row(cc.indices[j]), cc.policies[j]).reshaped({1, data.input_dim()}));
        ts.push_back(protos.at(cc.cls).reshaped({1, protos.at(cc.cls).size()}));
    }
    const Tensor x = vstack(xs), targets = vstack(ts);
    cfg.noise = false;
    const Tensor x_adv = adversarial_attack(f_old, x, targets, cfg, 0.0, seed);
    AttackProbe p;
    p.task = task;
    p.before = feature_distances(f_old, x, targets);
    p.after = feature_distances(f_old, x_adv, targets);
    p.median_before = median(p.before);
    p.median_after = median(p.after);
    p.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return p;
}

}  // namespace

double pooled_attack_ratio(const std::vector<AttackProbe> &probes) {
    std::vector<double> b, a;
    for (const auto &p : probes) {
        b.insert(b.end(), p.before.begin(), p.before.end());
        a.insert(a.end(), p.after.begin(), p.after.end());
    }
    return median(a) / median(b);
}

namespace {

std::string stage_error(const std::string &stage, std::size_t task, const Error &e) {
    return stage + " (task " + std::to_string(task) + "): " + e.what();
}

template <typename F>
auto stage(const std::string &name, std::size_t task, F &&f) {
    try {
        return f();
    } catch (const Error &e) {
        throw Error(e.kind(), stage_error(name, task, e));
    }
}

}  // namespace

RunResult run_benchmark(const RunConfig &cfg, const fs::path &dir, const RunHooks &hooks) {
    validate(cfg);
    const auto t0 = std::chrono::steady_clock::now();
    auto log = [&](const std::string &msg) {
        if (hooks.log) hooks.log(msg);
    };

    fs::create_directories(dir);
    require(!fs::exists(dir / "metrics.csv"), ErrorKind::Io,
            "run directory " + dir.string() + " already holds metrics.csv; choose another output.name");
    write_json(dir / "config.json", to_json(cfg));
    write_json(dir / "seeds.json", {{"class_shuffle", cfg.stream.class_shuffle_seed},
                                    {"randomness", cfg.seed},
                                    {"dataset", cfg.dataset.seed}});
    MetricsCsv csv(dir / "metrics.csv");

    const DataPool pool = stage("load", 0, [&] { return load_pool(cfg); });
    const TaskStream stream = stage("stream", 0, [&] { return make_task_stream(pool, cfg.stream); });
    const auto T = stream.tasks;
    const auto d = cfg.model.feature_dim;

    ReplayOptions opts;
    opts.replay = cfg.replay;
    opts.attack = cfg.attack;
    opts.attack_cfg = cfg.attack_cfg;
    opts.train_augment = cfg.train_augment;
    opts.family = cfg.augment;

    RunResult result;
    result.dir = dir;
    result.classifiers = cfg.classifiers;
    std::map<ClassifierKind, std::vector<std::vector<double>>> acc;

    auto init_rng = derive_rng(cfg.seed, {10});
    ModelState state;
    state.current = make_network(cfg, pool.train.input_dim(), stream.class_groups[0].size(), init_rng);
    PrototypeStore store;

    for (std::size_t t = 0; t < T; ++t) {
        const auto &task = stream.per_task[t];
        const auto &classes = stream.class_groups[t];
        const long tl = static_cast<long>(t);
        auto on_epoch = [&](const EpochLog &e) {
            const long ep = static_cast<long>(e.epoch);
            csv.row("train", tl, ep, "lr", e.lr);
            csv.row("train", tl, ep, "loss", e.loss);
            csv.row("train", tl, ep, "ce", e.ce);
            csv.row("train", tl, ep, "kd", e.kd);
        };

        if (t == 0) {
            log("task 0: initial training on " + std::to_string(classes.size()) + " classes");
            state = stage("train", t, [&] {
                return train_initial(state, task.train, cfg.optim_initial, cfg.loss, opts, derive_seed(cfg.seed, {20}),
                                     on_epoch);
            });
        } else {
            state = snapshot(state);
            state.task = t;
            auto head_rng = derive_rng(cfg.seed, {11, t});
            state.current.head.add_classes(classes.size(), cfg.model.head_init_std, head_rng);
            const auto frozen_sum = checksum(*state.frozen_previous);
            const auto &f_old = state.frozen_previous->extractor;
            const auto prototypes = store.means();

            const bool replay = cfg.replay && cfg.loss.lambda_kd > 0.0;
            CandidateSet cands;
            if (replay) {
                log("task " + std::to_string(t) + ": candidate sampling");
                auto rng = derive_rng(cfg.seed, {30, t});
                cands = stage("candidates", t, [&] {
                    return sample_candidates(f_old, task.train, prototypes, cfg.candidates, cfg.augment, rng);
                });
                binio::write_file((dir / ("candidates_t" + std::to_string(t) + ".bin")).string(),
                                  encode_candidates(cands));
                csv.row("candidates", tl, -1, "classes", static_cast<double>(cands.classes.size()));
                csv.row("candidates", tl, -1, "indices", static_cast<double>(cands.total()));
                if (cfg.attack) {
                    const auto probe = stage("probe", t, [&] {
                        return probe_attack(f_old, task.train, cands, prototypes, cfg.attack_cfg, t,
                                            derive_seed(cfg.seed, {60, t}));
                    });
                    csv.row("attack", tl, -1, "median_before", probe.median_before);
                    csv.row("attack", tl, -1, "median_after", probe.median_after);
                    result.probes.push_back(probe);
                }
            }

            const double r = replay && cfg.attack && cfg.attack_cfg.noise ? noise_magnitude(store.covariances(), d) : 0.0;
            csv.row("attack", tl, -1, "noise_r", r);

            log("task " + std::to_string(t) + ": training on " + std::to_string(classes.size()) + " new classes");
            state = stage("train", t, [&] {
                return run_task(state, task.train, cands, prototypes, r, cfg.optim_incremental, cfg.loss, opts,
                                derive_seed(cfg.seed, {40, t}), on_epoch);
            });

            if (cfg.calibration) {
                log("task " + std::to_string(t) + ": calibration");
                stage("calibration", t, [&] {
                    const auto &f_new = state.current.extractor;
                    std::map<std::uint32_t, std::pair<Tensor, Tensor>> pairs;
                    for (const auto &[c, entry] : store.entries) {
                        const auto drift =
                            generate_drift_samples(f_old, task.train, entry.mean, cfg.adc, derive_seed(cfg.seed, {50, t, c}));
                        if (drift.truncated)
                            log("warning: class " + std::to_string(c) + " drift set truncated to " +
                                std::to_string(drift.x.rows()) + " samples");
                        pairs.emplace(c, std::make_pair(extract(f_old, drift.x), extract(f_new, drift.x)));
                    }
                    std::optional<Tensor> shared_W;
                    if (cfg.transfer.shared) {
                        // One map for every class, fitted on per-class centred pairs.
                        std::vector<Tensor> xo, xn;
                        for (const auto &[c, p] : pairs) {
                            Tensor a = p.first, b = p.second;
                            a.mat().rowwise() -= p.first.mat().colwise().mean();
                            b.mat().rowwise() -= p.second.mat().colwise().mean();
                            xo.push_back(std::move(a));
                            xn.push_back(std::move(b));
                        }
                        auto tc = cfg.transfer;
                        tc.center = false;
                        const auto tr = fit_transfer_matrix(vstack(xo), vstack(xn), tc);
                        csv.row("calib", tl, -1, "shared.mse_initial", tr.initial_mse);
                        csv.row("calib", tl, -1, "shared.mse_final", tr.final_mse);
                        shared_W = tr.W;
                    }
                    for (auto &[c, entry] : store.entries) {
                        const auto &[fo, fn] = pairs.at(c);
                        auto tr = fit_transfer_matrix(fo, fn, cfg.transfer);
                        if (shared_W) tr.W = *shared_W;
                        const std::string key = "class" + std::to_string(c);
                        if (!shared_W) {
                            csv.row("calib", tl, -1, key + ".mse_initial", tr.initial_mse);
                            csv.row("calib", tl, -1, key + ".mse_final", tr.final_mse);
                        }
                        double shift = 0.0;
                        for (double v : tr.delta.storage()) shift += v * v;
                        csv.row("calib", tl, -1, key + ".delta_norm", std::sqrt(shift));
                        entry = calibrate(entry, tr.W, tr.delta);
                        entry.calibrated_task = static_cast<std::uint32_t>(t);
                    }
                    return 0;
                });
            }
            require(checksum(*state.frozen_previous) == frozen_sum, ErrorKind::Contract,
                    "frozen model changed during task " + std::to_string(t));
        }

        stage("stats", t, [&] {
            add_class_stats(store, state.current.extractor, task.train, classes, t, cfg.svd_k);
            return 0;
        });
        save_store(store, (dir / ("store_t" + std::to_string(t) + ".bin")).string());
        if (cfg.save_checkpoints) save_checkpoint(state, (dir / ("model_t" + std::to_string(t) + ".bin")).string());

        ShrinkageChoice gammas{cfg.shrinkage.values.front(), cfg.shrinkage.values.front(), 0.0};
        if (cfg.uses(ClassifierKind::Mahalanobis)) {
            gammas = stage("shrinkage", t, [&] {
                std::vector<const LabeledSet *> parts;
                for (std::size_t j = 0; j <= t; ++j)
                    if (stream.per_task[j].val.size() > 0) parts.push_back(&stream.per_task[j].val);
                LabeledSet val;
                val.split = SplitTag::Val;
                if (!parts.empty()) val = concat(parts);
                return tune_shrinkage(store, state.current.extractor, val, cfg.shrinkage);
            });
            csv.row("shrinkage", tl, -1, "gamma1", gammas.gamma1);
            csv.row("shrinkage", tl, -1, "gamma2", gammas.gamma2);
            csv.row("shrinkage", tl, -1, "val_accuracy", gammas.val_accuracy);
            result.shrinkage.push_back(gammas);
        }

        log("task " + std::to_string(t) + ": evaluation");
        stage("eval", t, [&] {
            std::vector<const LabeledSet *> parts;
            for (std::size_t j = 0; j <= t; ++j) parts.push_back(&stream.per_task[j].test);
            const LabeledSet test = concat(parts);
            const std::vector<std::vector<std::uint32_t>> groups(stream.class_groups.begin(),
                                                                 stream.class_groups.begin() + static_cast<long>(t) + 1);
            const Tensor feats = extract(state.current.extractor, test.samples);
            for (auto kind : cfg.classifiers) {
                std::vector<std::uint32_t> pred;
                switch (kind) {
                    case ClassifierKind::Linear: pred = predict_linear(state.current.head, feats); break;
                    case ClassifierKind::Ncm: pred = predict_ncm(store, feats); break;
                    case ClassifierKind::Mahalanobis:
                        pred = predict_mahalanobis(build_mahalanobis(store, gammas.gamma1, gammas.gamma2), feats);
                        break;
                }
                const auto row = group_accuracy(pred, test.labels, groups);
                const std::string name = classifier_name(kind);
                double mean = 0.0;
                for (std::size_t j = 0; j < row.size(); ++j) {
                    csv.row("eval", tl, -1, name + ".group" + std::to_string(j), row[j]);
                    mean += row[j];
                }
                csv.row("eval", tl, -1, name + ".A_k", mean / static_cast<double>(row.size()));
                acc[kind].push_back(row);
            }
            return 0;
        });
    }

    json summary = json::object();
    for (auto kind : cfg.classifiers) {
        const auto ev = metrics(acc.at(kind));
        const std::string name = classifier_name(kind);
        csv.row("summary", static_cast<long>(T) - 1, -1, name + ".A_inc", ev.A_inc);
        csv.row("summary", static_cast<long>(T) - 1, -1, name + ".A_last", ev.A_last);
        summary[name] = {{"A_inc", ev.A_inc}, {"A_last", ev.A_last}, {"A", ev.A}, {"acc", ev.acc}};
        result.eval.emplace(kind, ev);
    }
    if (!result.probes.empty()) {
        const double ratio = pooled_attack_ratio(result.probes);
        csv.row("summary", static_cast<long>(T) - 1, -1, "attack.median_ratio", ratio);
        summary["attack"] = {{"median_ratio", ratio}};
    }
    write_json(dir / "summary.json", summary);

    result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_json(dir / "run_meta.json", {{"git_rev", APR_GIT_REV},
                                       {"command", hooks.command},
                                       {"wall_seconds", result.wall_seconds},
                                       {"storage_bytes_final", [&] {
                                            json rows = json::object();
                                            for (const auto &r : storage_report(storage_query(cfg, T - 1)))
                                                rows[r.component] = r.bytes;
                                            return cfg.dataset.kind == "synthetic" ? rows : json(nullptr);
                                        }()}});
    return result;
}

SeedStat seed_stat(const std::vector<double> &values) {
    require(!values.empty(), ErrorKind::Contract, "no values to aggregate");
    SeedStat s;
    for (double v : values) s.mean += v;
    s.mean /= static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return s;
}

BenchResult run_bench(const RunConfig &cfg, const fs::path &dir, const RunHooks &hooks) {
    validate(cfg);
    BenchResult out;
    for (std::size_t i = 0; i < cfg.bench_randomness.size(); ++i) {
        RunConfig c = cfg;
        c.stream.class_shuffle_seed = cfg.bench_class_shuffle[i];
        c.seed = cfg.bench_randomness[i];
        if (hooks.log)
            hooks.log("bench seed " + std::to_string(i) + " (class_shuffle " + std::to_string(c.stream.class_shuffle_seed) +
                      ", randomness " + std::to_string(c.seed) + ")");
        out.runs.push_back(run_benchmark(c, dir / ("seed" + std::to_string(i)), hooks));
    }
    std::ofstream csv(dir / "bench.csv");
    require(static_cast<bool>(csv), ErrorKind::Io, "cannot write bench.csv");
    csv << "classifier,metric,mean,std,values\n";
    for (auto kind : cfg.classifiers) {
        std::vector<double> inc, last;
        for (const auto &r : out.runs) {
            inc.push_back(r.eval.at(kind).A_inc);
            last.push_back(r.eval.at(kind).A_last);
        }
        out.A_inc[kind] = seed_stat(inc);
        out.A_last[kind] = seed_stat(last);
        for (const auto &[metric, vals, st] : {std::tuple{"A_inc", inc, out.A_inc[kind]},
                                               std::tuple{"A_last", last, out.A_last[kind]}}) {
            csv << classifier_name(kind) << ',' << metric << ',' << format_value(st.mean) << ','
                << format_value(st.std) << ',';
            for (std::size_t i = 0; i < vals.size(); ++i) csv << (i ? ";" : "") << format_value(vals[i]);
            csv << '\n';
        }
    }
    return out;
}

std::vector<SweepPoint> run_sweep(const RunConfig &cfg, const fs::path &dir, const RunHooks &hooks) {
    validate(cfg);
    std::vector<SweepPoint> out;
    for (double a : cfg.sweep_alpha) {
        RunConfig c = cfg;
        c.attack_cfg.alpha = a;
        out.push_back({"alpha", a, run_benchmark(c, dir / ("alpha_" + format_value(a)), hooks)});
    }
    for (auto n : cfg.sweep_iterations) {
        RunConfig c = cfg;
        c.attack_cfg.iterations = n;
        out.push_back({"iterations", static_cast<double>(n),
                       run_benchmark(c, dir / ("iterations_" + std::to_string(n)), hooks)});
    }
    std::ofstream csv(dir / "sweep.csv");
    require(static_cast<bool>(csv), ErrorKind::Io, "cannot write sweep.csv");
    csv << "param,value,classifier,A_inc,A_last\n";
    for (const auto &p : out)
        for (auto kind : cfg.classifiers)
            csv << p.param << ',' << format_value(p.value) << ',' << classifier_name(kind) << ','
                << format_value(p.run.eval.at(kind).A_inc) << ',' << format_value(p.run.eval.at(kind).A_last) << '\n';
    return out;
}

}  // namespace apr
