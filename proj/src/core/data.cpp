#include "data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

namespace apr {

const char *split_name(SplitTag tag) {
    switch (tag) {
        case SplitTag::Train:
            return "train";
        case SplitTag::Val:
            return "val";
        case SplitTag::Test:
            return "test";
    }
    return "?";
}

LabeledSet LabeledSet::subset(const std::vector<std::size_t> &rows) const {
    LabeledSet out;
    out.split = split;
    out.samples = samples.rows_subset(rows);
    for (auto r : rows) out.labels.push_back(labels[r]);
    return out;
}

std::vector<std::size_t> LabeledSet::rows_of(std::uint32_t cls) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == cls) out.push_back(i);
    return out;
}

LabeledSet concat(const std::vector<const LabeledSet *> &parts) {
    require(!parts.empty(), ErrorKind::Contract, "concat of no sets");
    LabeledSet out;
    out.split = parts.front()->split;
    std::vector<Tensor> mats;
    for (const auto *p : parts) {
        require(p->split == out.split, ErrorKind::Contract, "concat across split tags");
        mats.push_back(p->samples);
        out.labels.insert(out.labels.end(), p->labels.begin(), p->labels.end());
    }
    out.samples = vstack(mats);
    return out;
}

namespace {

Eigen::MatrixXd random_orthogonal(std::size_t n, Rng &rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd g(n, n);
    for (Eigen::Index i = 0; i < g.rows(); ++i)
        for (Eigen::Index j = 0; j < g.cols(); ++j) g(i, j) = normal(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ();
    // Sign-fix so Q is uniquely determined by G.
    Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < q.cols(); ++j)
        if (r(j, j) < 0) q.col(j) = -q.col(j);
    return q;
}

}  // namespace

DataPool make_synthetic_pool(const SyntheticSpec &spec, std::uint64_t seed) {
    require(spec.classes > 0 && spec.input_dim > 0, ErrorKind::Config, "synthetic pool needs classes and a width");
    require(spec.n_train > 0 && spec.n_test > 0, ErrorKind::Config, "synthetic pool needs samples per class");
    require(spec.radius > 0 && spec.cluster_std > 0 && spec.anisotropy >= 1.0, ErrorKind::Config,
            "invalid synthetic cluster geometry");
    const auto D = spec.input_dim;
    const auto half = (D + 1) / 2;
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    Eigen::MatrixXd flip = Eigen::MatrixXd::Zero(D, D);
    for (std::size_t i = 0; i < D; ++i) flip(i, D - 1 - i) = 1.0;

    DataPool pool;
    pool.classes = spec.classes;
    std::vector<double> train_values, test_values;
    for (std::size_t c = 0; c < spec.classes; ++c) {
        Eigen::VectorXd mu(D);
        for (std::size_t i = 0; i < half; ++i) mu(i) = normal(rng);
        for (std::size_t i = 0; i < D / 2; ++i) mu(D - 1 - i) = mu(i);
        mu *= spec.radius / mu.norm();

        const Eigen::MatrixXd q = random_orthogonal(D, rng);
        Eigen::VectorXd lambda(D);
        const double var = spec.cluster_std * spec.cluster_std;
        for (std::size_t i = 0; i < D; ++i) lambda(i) = var * std::pow(spec.anisotropy, unit(rng) - 0.5);
        Eigen::MatrixXd sigma = q * lambda.asDiagonal() * q.transpose();
        sigma = 0.5 * (sigma + flip * sigma * flip);
        const Eigen::MatrixXd chol = Eigen::LLT<Eigen::MatrixXd>(sigma).matrixL();

        auto draw = [&](std::vector<double> &dst, std::size_t n, std::vector<std::uint32_t> &labels) {
            Eigen::VectorXd z(D);
            for (std::size_t s = 0; s < n; ++s) {
                for (std::size_t i = 0; i < D; ++i) z(i) = normal(rng);
                const Eigen::VectorXd x = mu + chol * z;
                dst.insert(dst.end(), x.data(), x.data() + D);
                labels.push_back(static_cast<std::uint32_t>(c));
            }
        };
        draw(train_values, spec.n_train, pool.train.labels);
        draw(test_values, spec.n_test, pool.test.labels);
    }
    pool.train.samples = Tensor::matrix(pool.train.labels.size(), D, std::move(train_values));
    pool.train.split = SplitTag::Train;
    pool.test.samples = Tensor::matrix(pool.test.labels.size(), D, std::move(test_values));
    pool.test.split = SplitTag::Test;
    return pool;
}

// ---- ingestion ----

LabeledSet read_csv(const std::string &path, SplitTag split) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open " + path);
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), ErrorKind::Decode, path + ": empty csv");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) header.push_back(cell);
    }
    require(header.size() >= 2 && header[0] == "label", ErrorKind::Decode, path + ": header must start with label");
    const std::size_t D = header.size() - 1;
    for (std::size_t j = 0; j < D; ++j)
        require(header[j + 1] == "f" + std::to_string(j), ErrorKind::Decode,
                path + ": expected column f" + std::to_string(j));

    LabeledSet set;
    set.split = split;
    std::vector<double> values;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::size_t col = 0;
        while (std::getline(ss, cell, ',')) {
            char *end = nullptr;
            if (col == 0) {
                const long v = std::strtol(cell.c_str(), &end, 10);
                require(end != cell.c_str() && *end == '\0' && v >= 0, ErrorKind::Decode,
                        path + ":" + std::to_string(lineno) + ": bad label");
                set.labels.push_back(static_cast<std::uint32_t>(v));
            } else {
                const double v = std::strtod(cell.c_str(), &end);
                require(end != cell.c_str() && *end == '\0' && std::isfinite(v), ErrorKind::Decode,
                        path + ":" + std::to_string(lineno) + ": bad value");
                values.push_back(v);
            }
            ++col;
        }
        require(col == D + 1, ErrorKind::Decode, path + ":" + std::to_string(lineno) + ": wrong column count");
    }
    require(!set.labels.empty(), ErrorKind::Decode, path + ": no rows");
    set.samples = Tensor::matrix(set.labels.size(), D, std::move(values));
    return set;
}

void write_csv(const LabeledSet &set, const std::string &path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write " + path);
    out << "label";
    for (std::size_t j = 0; j < set.input_dim(); ++j) out << ",f" << j;
    out << '\n';
    out.precision(17);
    for (std::size_t i = 0; i < set.size(); ++i) {
        out << set.labels[i];
        for (std::size_t j = 0; j < set.input_dim(); ++j) out << ',' << set.samples.at(i, j);
        out << '\n';
    }
}

namespace {
constexpr std::string_view kDataMagic = "APRD";
constexpr std::uint32_t kDataVersion = 1;
}  // namespace

LabeledSet read_binary_matrix(const std::string &path, SplitTag split) {
    const auto bytes = binio::read_file(path);
    binio::Reader r(bytes);
    require(r.bytes(4) == kDataMagic, ErrorKind::Decode, path + ": bad magic");
    require(r.u32() == kDataVersion, ErrorKind::Decode, path + ": unsupported version");
    const std::size_t rows = r.u32(), cols = r.u32();
    require(rows > 0 && cols > 0, ErrorKind::Decode, path + ": empty matrix");
    std::vector<double> values(rows * cols);
    for (auto &v : values) {
        v = r.f64();
        require(std::isfinite(v), ErrorKind::Decode, path + ": non-finite value");
    }
    LabeledSet set;
    set.split = split;
    for (std::size_t i = 0; i < rows; ++i) set.labels.push_back(r.u32());
    require(r.at_end(), ErrorKind::Decode, path + ": trailing bytes");
    set.samples = Tensor::matrix(rows, cols, std::move(values));
    return set;
}

void write_binary_matrix(const LabeledSet &set, const std::string &path) {
    binio::Writer w;
    w.bytes(kDataMagic);
    w.u32(kDataVersion);
    w.u32(static_cast<std::uint32_t>(set.size()));
    w.u32(static_cast<std::uint32_t>(set.input_dim()));
    for (double v : set.samples.data()) w.f64(v);
    for (auto l : set.labels) w.u32(l);
    binio::write_file(path, w.buffer());
}

LabeledSet read_dataset_file(const std::string &path, SplitTag split) {
    if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0) return read_csv(path, split);
    return read_binary_matrix(path, split);
}

// ---- task streams ----

std::size_t TaskStream::classes_before(std::size_t task) const {
    std::size_t n = 0;
    for (std::size_t t = 0; t < task && t < class_groups.size(); ++t) n += class_groups[t].size();
    return n;
}

std::vector<std::size_t> group_sizes(std::size_t total, std::size_t tasks, StartMode mode) {
    require(tasks >= 1, ErrorKind::Config, "task count must be at least 1");
    require(total >= tasks, ErrorKind::Config, "fewer classes than tasks");
    if (mode == StartMode::Cold || tasks == 1) {
        require(total % tasks == 0, ErrorKind::Config,
                "cold start: " + std::to_string(total) + " classes not divisible by " + std::to_string(tasks) +
                    " tasks");
        return std::vector<std::size_t>(tasks, total / tasks);
    }
    require(total % 2 == 0, ErrorKind::Config, "warm start: class count must be even");
    const auto rest = total / 2;
    require(rest % (tasks - 1) == 0, ErrorKind::Config,
            "warm start: " + std::to_string(rest) + " incremental classes not divisible by " +
                std::to_string(tasks - 1) + " tasks");
    std::vector<std::size_t> sizes(tasks, rest / (tasks - 1));
    sizes[0] = rest;
    return sizes;
}

TaskStream make_task_stream(const DataPool &pool, const StreamSpec &spec) {
    const auto sizes = group_sizes(pool.classes, spec.tasks, spec.mode);

    std::vector<std::uint32_t> order(pool.classes);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::uint32_t>(i);
    Rng shuffle(spec.class_shuffle_seed);
    for (std::size_t i = order.size(); i-- > 1;) std::swap(order[i], order[shuffle() % (i + 1)]);

    std::vector<std::uint32_t> global_of(pool.classes);
    for (std::size_t g = 0; g < order.size(); ++g) global_of[order[g]] = static_cast<std::uint32_t>(g);

    auto relabel = [&](const LabeledSet &src, const std::vector<std::size_t> &rows, SplitTag tag) {
        LabeledSet s = src.subset(rows);
        s.split = tag;
        for (auto &l : s.labels) l = global_of[l];
        return s;
    };

    TaskStream stream;
    stream.tasks = spec.tasks;
    stream.mode = spec.mode;
    stream.original_class = order;
    std::uint32_t next = 0;
    for (std::size_t t = 0; t < spec.tasks; ++t) {
        std::vector<std::uint32_t> group;
        std::vector<std::size_t> train_rows, val_rows, test_rows;
        for (std::size_t k = 0; k < sizes[t]; ++k, ++next) {
            group.push_back(next);
            const auto original = order[next];
            const auto rows = pool.train.rows_of(original);
            require(rows.size() >= spec.n_val + 2, ErrorKind::Config,
                    "class " + std::to_string(original) + " has " + std::to_string(rows.size()) +
                        " train rows; need n_val + 2");
            val_rows.insert(val_rows.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(spec.n_val));
            train_rows.insert(train_rows.end(), rows.begin() + static_cast<std::ptrdiff_t>(spec.n_val), rows.end());
            const auto trows = pool.test.rows_of(original);
            require(!trows.empty(), ErrorKind::Config, "class " + std::to_string(original) + " has no test rows");
            test_rows.insert(test_rows.end(), trows.begin(), trows.end());
        }
        TaskData td;
        td.train = relabel(pool.train, train_rows, SplitTag::Train);
        if (!val_rows.empty()) td.val = relabel(pool.train, val_rows, SplitTag::Val);
        td.test = relabel(pool.test, test_rows, SplitTag::Test);
        stream.class_groups.push_back(std::move(group));
        stream.per_task.push_back(std::move(td));
    }
    return stream;
}

// ---- augmentation ----

std::size_t AugPolicy::parameter_count() const {
    std::size_t n = 0;
    for (const auto &t : transforms) {
        n += t.ints.size() + t.reals.size();
        if (t.id == TransformId::CropMask || t.id == TransformId::Flip) ++n;  // random apply flag
    }
    return n;
}

AugPolicy sample_policy(const AugFamily &family, std::size_t input_dim, Rng &rng) {
    AugPolicy p;
    if (!family.enabled) return p;
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    TransformRecord jitter{TransformId::Jitter, true, {}, {}};
    jitter.ints.push_back(static_cast<std::int64_t>(rng() >> 1));
    jitter.reals.push_back(family.jitter_max_sigma * unit(rng));
    p.transforms.push_back(std::move(jitter));

    TransformRecord crop{TransformId::CropMask, false, {}, {}};
    crop.apply = unit(rng) < family.crop_prob;
    const auto max_w = std::max<std::size_t>(1, std::min(family.crop_max_width, input_dim));
    const auto width = 1 + rng() % max_w;
    const auto offset = rng() % (input_dim - width + 1);
    crop.ints = {static_cast<std::int64_t>(offset), static_cast<std::int64_t>(width)};
    p.transforms.push_back(std::move(crop));

    p.transforms.push_back(TransformRecord{TransformId::Flip, unit(rng) < family.flip_prob, {}, {}});

    TransformRecord scale{TransformId::Scale, true, {}, {}};
    scale.reals.push_back(family.scale_lo + (family.scale_hi - family.scale_lo) * unit(rng));
    p.transforms.push_back(std::move(scale));
    return p;
}

namespace {

void check_record(const TransformRecord &t, std::size_t D) {
    auto expect = [&](std::size_t ni, std::size_t nr) {
        require(t.ints.size() == ni && t.reals.size() == nr, ErrorKind::Decode,
                "malformed policy record for transform " + std::to_string(static_cast<int>(t.id)));
    };
    switch (t.id) {
        case TransformId::Jitter:
            expect(1, 1);
            require(std::isfinite(t.reals[0]) && t.reals[0] >= 0.0, ErrorKind::Decode, "bad jitter scale");
            return;
        case TransformId::CropMask:
            expect(2, 0);
            require(t.ints[0] >= 0 && t.ints[1] >= 1 && static_cast<std::size_t>(t.ints[0] + t.ints[1]) <= D,
                    ErrorKind::Decode, "crop window outside the sample");
            return;
        case TransformId::Flip:
            expect(0, 0);
            return;
        case TransformId::Scale:
            expect(0, 1);
            require(std::isfinite(t.reals[0]), ErrorKind::Decode, "bad scale factor");
            return;
    }
    fail(ErrorKind::Decode, "unknown transform id " + std::to_string(static_cast<int>(t.id)));
}

void apply_row(double *x, std::size_t D, const AugPolicy &p) {
    for (const auto &t : p.transforms) {
        check_record(t, D);
        if (!t.apply) continue;
        switch (t.id) {
            case TransformId::Jitter: {
                Rng noise(static_cast<std::uint64_t>(t.ints[0]));
                std::normal_distribution<double> normal(0.0, 1.0);
                for (std::size_t i = 0; i < D; ++i) x[i] += t.reals[0] * normal(noise);
                break;
            }
            case TransformId::CropMask:
                for (auto i = t.ints[0]; i < t.ints[0] + t.ints[1]; ++i) x[i] = 0.0;
                break;
            case TransformId::Flip:
                std::reverse(x, x + D);
                break;
            case TransformId::Scale:
                for (std::size_t i = 0; i < D; ++i) x[i] *= t.reals[0];
                break;
        }
    }
}

}  // namespace

Tensor apply_policy(const Tensor &x, const AugPolicy &p) {
    require(x.rows() == 1, ErrorKind::Dimension, "apply_policy expects a single sample");
    Tensor out = x;
    apply_row(out.storage().data(), out.cols(), p);
    return out;
}

Tensor apply_policies(const Tensor &rows, const std::vector<AugPolicy> &policies) {
    require(rows.rows() == policies.size(), ErrorKind::Dimension, "one policy per row required");
    Tensor out = rows;
    const auto D = rows.cols();
    for (std::size_t i = 0; i < policies.size(); ++i) apply_row(out.storage().data() + i * D, D, policies[i]);
    return out;
}

void encode_policy(binio::Writer &w, const AugPolicy &p) {
    w.u8(static_cast<std::uint8_t>(p.transforms.size()));
    for (const auto &t : p.transforms) {
        w.u8(static_cast<std::uint8_t>(t.id));
        w.u8(t.apply ? 1 : 0);
        w.u8(static_cast<std::uint8_t>(t.ints.size()));
        w.u8(static_cast<std::uint8_t>(t.reals.size()));
        for (auto v : t.ints) w.i64(v);
        for (auto v : t.reals) w.f64(v);
    }
}

AugPolicy decode_policy(binio::Reader &r) {
    AugPolicy p;
    const auto n = r.u8();
    for (std::uint8_t k = 0; k < n; ++k) {
        TransformRecord t;
        const auto id = r.u8();
        require(id >= 1 && id <= 4, ErrorKind::Decode, "unknown transform id " + std::to_string(id));
        t.id = static_cast<TransformId>(id);
        const auto flag = r.u8();
        require(flag <= 1, ErrorKind::Decode, "bad apply flag");
        t.apply = flag == 1;
        const auto ni = r.u8(), nr = r.u8();
        for (std::uint8_t i = 0; i < ni; ++i) t.ints.push_back(r.i64());
        for (std::uint8_t i = 0; i < nr; ++i) t.reals.push_back(r.f64());
        p.transforms.push_back(std::move(t));
    }
    return p;
}

std::size_t encoded_policy_size(const AugPolicy &p) {
    std::size_t n = 1;
    for (const auto &t : p.transforms) n += 4 + 8 * (t.ints.size() + t.reals.size());
    return n;
}

}  // namespace apr
