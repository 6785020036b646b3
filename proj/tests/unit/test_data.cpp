#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <filesystem>
#include <fstream>
#include <set>

#include "data.hpp"
#include "gradcheck.hpp"
#include "testutil.hpp"

using namespace apr;
using testutil::kind_of;

namespace {

std::string temp_path(const std::string &name) { return (std::filesystem::temp_directory_path() / name).string(); }

DataPool small_pool(std::size_t classes = 10, std::uint64_t seed = 3) {
    SyntheticSpec spec;
    spec.classes = classes;
    spec.input_dim = 8;
    spec.n_train = 30;
    spec.n_test = 10;
    return make_synthetic_pool(spec, seed);
}

void expect_same(const LabeledSet &a, const LabeledSet &b) {
    EXPECT_EQ(a.samples, b.samples);
    EXPECT_EQ(a.labels, b.labels);
    EXPECT_EQ(a.split, b.split);
}

}  // namespace

TEST(GroupSizes, ColdStartIsEven) {
    EXPECT_EQ(group_sizes(100, 5, StartMode::Cold), (std::vector<std::size_t>{20, 20, 20, 20, 20}));
}

TEST(GroupSizes, WarmStartHalfThenEqual) {
    std::vector<std::size_t> expect{50};
    expect.insert(expect.end(), 10, 5);
    EXPECT_EQ(group_sizes(100, 11, StartMode::Warm), expect);
}

TEST(GroupSizes, IndivisibleIsConfigError) {
    EXPECT_EQ(kind_of([] { group_sizes(100, 3, StartMode::Cold); }), ErrorKind::Config);
    EXPECT_EQ(kind_of([] { group_sizes(100, 4, StartMode::Warm); }), ErrorKind::Config);
    EXPECT_EQ(kind_of([] { group_sizes(3, 5, StartMode::Cold); }), ErrorKind::Config);
}

TEST(GroupSizes, CardinalitiesForManyConfigs) {
    for (std::size_t total : {20, 60, 100}) {
        for (std::size_t T = 1; T <= 11; ++T) {
            if (total % T == 0) {
                const auto s = group_sizes(total, T, StartMode::Cold);
                ASSERT_EQ(s.size(), T);
                for (auto n : s) EXPECT_EQ(n, total / T);
            }
            if (T > 1 && (total / 2) % (T - 1) == 0) {
                const auto s = group_sizes(total, T, StartMode::Warm);
                ASSERT_EQ(s.size(), T);
                EXPECT_EQ(s[0], total / 2);
                for (std::size_t t = 1; t < T; ++t) EXPECT_EQ(s[t], total / (2 * (T - 1)));
            }
        }
    }
}

TEST(TaskStream, GroupsAreDisjointAndCoverAllClasses) {
    const auto pool = small_pool();
    for (auto mode : {StartMode::Cold, StartMode::Warm}) {
        StreamSpec spec;
        spec.tasks = mode == StartMode::Cold ? 5 : 6;
        spec.mode = mode;
        spec.n_val = 5;
        const auto s = make_task_stream(pool, spec);
        std::set<std::uint32_t> seen;
        for (std::size_t t = 0; t < s.tasks; ++t) {
            const std::set<std::uint32_t> group(s.class_groups[t].begin(), s.class_groups[t].end());
            for (auto c : group) EXPECT_TRUE(seen.insert(c).second) << "class " << c << " repeated";
            for (const auto *set : {&s.per_task[t].train, &s.per_task[t].val, &s.per_task[t].test})
                for (auto l : set->labels) EXPECT_TRUE(group.count(l));
            EXPECT_EQ(s.per_task[t].val.size(), 5 * group.size());
            EXPECT_EQ(s.per_task[t].train.size(), 25 * group.size());
        }
        EXPECT_EQ(seen.size(), 10u);
    }
}

TEST(TaskStream, SameSeedsAreBitIdentical) {
    StreamSpec spec;
    spec.n_val = 5;
    const auto a = make_task_stream(small_pool(), spec);
    const auto b = make_task_stream(small_pool(), spec);
    EXPECT_EQ(a.class_groups, b.class_groups);
    EXPECT_EQ(a.original_class, b.original_class);
    for (std::size_t t = 0; t < a.tasks; ++t) {
        expect_same(a.per_task[t].train, b.per_task[t].train);
        expect_same(a.per_task[t].val, b.per_task[t].val);
        expect_same(a.per_task[t].test, b.per_task[t].test);
    }
}

TEST(TaskStream, ShuffleSeedChangesClassOrderOnly) {
    StreamSpec a_spec, b_spec;
    a_spec.n_val = b_spec.n_val = 5;
    b_spec.class_shuffle_seed = a_spec.class_shuffle_seed + 1;
    const auto a = make_task_stream(small_pool(), a_spec);
    const auto b = make_task_stream(small_pool(), b_spec);
    EXPECT_NE(a.original_class, b.original_class);
    auto sorted = b.original_class;
    std::sort(sorted.begin(), sorted.end());
    for (std::uint32_t i = 0; i < sorted.size(); ++i) EXPECT_EQ(sorted[i], i);
}

TEST(TaskStream, TooFewRowsForValidationIsConfigError) {
    StreamSpec spec;
    spec.n_val = 29;
    EXPECT_EQ(kind_of([&] { make_task_stream(small_pool(), spec); }), ErrorKind::Config);
}

// Two-class Gaussian oracle: with shared covariance the Bayes rule is linear,
// w = S^-1 (m1 - m0), threshold at the midpoint.
TEST(Synthetic, Task0ClassesAreLinearlySeparable) {
    SyntheticSpec spec;  // defaults: 20 classes, width 32, R=8
    const auto pool = make_synthetic_pool(spec, 0);
    StreamSpec ss;
    const auto stream = make_task_stream(pool, ss);
    const auto &td = stream.per_task[0];
    const auto &group = stream.class_groups[0];
    const auto D = td.train.input_dim();

    std::vector<Eigen::VectorXd> means;
    Eigen::MatrixXd pooled = Eigen::MatrixXd::Zero(D, D);
    std::size_t dof = 0;
    for (auto c : group) {
        const auto rows = td.train.rows_of(c);
        Eigen::MatrixXd X(rows.size(), D);
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::size_t j = 0; j < D; ++j) X(i, j) = td.train.samples.at(rows[i], j);
        const Eigen::VectorXd m = X.colwise().mean();
        const Eigen::MatrixXd C = X.rowwise() - m.transpose();
        pooled += C.transpose() * C;
        dof += rows.size() - 1;
        means.push_back(m);
    }
    pooled /= static_cast<double>(dof);
    const Eigen::LDLT<Eigen::MatrixXd> solve(pooled);

    std::size_t correct = 0;
    for (std::size_t i = 0; i < td.test.size(); ++i) {
        Eigen::VectorXd x(D);
        for (std::size_t j = 0; j < D; ++j) x(j) = td.test.samples.at(i, j);
        std::size_t best = 0;
        double best_score = -1e300;
        for (std::size_t k = 0; k < means.size(); ++k) {
            const Eigen::VectorXd w = solve.solve(means[k]);
            const double score = w.dot(x) - 0.5 * w.dot(means[k]);
            if (score > best_score) best_score = score, best = k;
        }
        correct += group[best] == td.test.labels[i];
    }
    EXPECT_GT(static_cast<double>(correct) / static_cast<double>(td.test.size()), 0.95);
}

TEST(Synthetic, Deterministic) {
    expect_same(small_pool().train, small_pool().train);
    EXPECT_NE(small_pool(10, 3).train.samples, small_pool(10, 4).train.samples);
}

TEST(Policy, DisabledFamilyIsIdentity) {
    AugFamily fam;
    fam.enabled = false;
    Rng rng(1);
    const auto p = sample_policy(fam, 8, rng);
    EXPECT_TRUE(p.identity());
    const auto x = Tensor::matrix({{1, 2, 3, 4, 5, 6, 7, 8}});
    EXPECT_EQ(apply_policy(x, p), x);
}

TEST(Policy, SameRngStateSamePolicy) {
    Rng a(9), b(9);
    const auto pa = sample_policy(AugFamily{}, 8, a);
    const auto pb = sample_policy(AugFamily{}, 8, b);
    binio::Writer wa, wb;
    encode_policy(wa, pa);
    encode_policy(wb, pb);
    EXPECT_EQ(wa.buffer(), wb.buffer());
}

TEST(Policy, DefaultFamilyHasSevenParameters) {
    Rng rng(2);
    for (int i = 0; i < 100; ++i) {
        const auto p = sample_policy(AugFamily{}, 16, rng);
        EXPECT_EQ(p.parameter_count(), 7u);
        EXPECT_LE(p.parameter_count(), 30u);
    }
}

TEST(Policy, FlipIsAnInvolution) {
    AugPolicy flip{{TransformRecord{TransformId::Flip, true, {}, {}}}};
    const auto x = Tensor::matrix({{1, 2, 3, 4, 5}});
    EXPECT_EQ(apply_policy(x, flip), Tensor::matrix({{5, 4, 3, 2, 1}}));
    EXPECT_EQ(apply_policy(apply_policy(x, flip), flip), x);
}

TEST(Policy, CropAndScaleExamples) {
    AugPolicy p{{TransformRecord{TransformId::CropMask, true, {1, 2}, {}},
                 TransformRecord{TransformId::Scale, true, {}, {2.0}}}};
    EXPECT_EQ(apply_policy(Tensor::matrix({{1, 2, 3, 4}}), p), Tensor::matrix({{2, 0, 0, 8}}));
    p.transforms[0].apply = false;
    EXPECT_EQ(apply_policy(Tensor::matrix({{1, 2, 3, 4}}), p), Tensor::matrix({{2, 4, 6, 8}}));
}

TEST(Policy, ReplayIsBitExactOverThousandPairs) {
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
        const auto x = gradcheck::normal({1, 12}, rng, 3.0);
        const auto p = sample_policy(AugFamily{}, 12, rng);
        const auto first = apply_policy(x, p);

        binio::Writer w;
        encode_policy(w, p);
        EXPECT_EQ(w.size(), encoded_policy_size(p));
        binio::Reader r(w.buffer());
        const auto replayed = decode_policy(r);
        EXPECT_EQ(apply_policy(x, replayed), first);
        EXPECT_EQ(apply_policy(x, p), first);
    }
}

TEST(Policy, BatchApplicationMatchesRowwise) {
    Rng rng(4);
    const auto X = gradcheck::normal({5, 6}, rng);
    std::vector<AugPolicy> ps;
    for (int i = 0; i < 5; ++i) ps.push_back(sample_policy(AugFamily{}, 6, rng));
    const auto Y = apply_policies(X, ps);
    for (std::size_t i = 0; i < 5; ++i)
        EXPECT_EQ(Y.row(i).reshaped({1, 6}), apply_policy(X.row(i).reshaped({1, 6}), ps[i]));
}

TEST(Policy, MalformedRecordsAreDecodeErrors) {
    const auto x = Tensor::matrix({{1, 2, 3}});
    AugPolicy outside{{TransformRecord{TransformId::CropMask, true, {2, 5}, {}}}};
    EXPECT_EQ(kind_of([&] { apply_policy(x, outside); }), ErrorKind::Decode);
    AugPolicy wrong_arity{{TransformRecord{TransformId::Scale, true, {1}, {}}}};
    EXPECT_EQ(kind_of([&] { apply_policy(x, wrong_arity); }), ErrorKind::Decode);
    binio::Writer w;
    w.u32(1);
    w.u8(9);
    binio::Reader r(w.buffer());
    EXPECT_EQ(kind_of([&] { decode_policy(r); }), ErrorKind::Decode);
}

TEST(Ingestion, CsvRoundTrip) {
    const auto pool = small_pool(3);
    const auto path = temp_path("apr_test_data.csv");
    write_csv(pool.test, path);
    const auto back = read_csv(path, SplitTag::Test);
    std::filesystem::remove(path);
    EXPECT_EQ(back.labels, pool.test.labels);
    EXPECT_EQ(back.samples, pool.test.samples);
}

TEST(Ingestion, BinaryRoundTripAndDispatch) {
    const auto pool = small_pool(3);
    const auto path = temp_path("apr_test_data.bin");
    write_binary_matrix(pool.train, path);
    expect_same(read_binary_matrix(path, SplitTag::Train), pool.train);
    expect_same(read_dataset_file(path, SplitTag::Train), pool.train);
    std::filesystem::remove(path);
}

TEST(Ingestion, BadCsvIsDecodeError) {
    const auto path = temp_path("apr_test_bad.csv");
    {
        std::ofstream out(path);
        out << "label,f0,f1\n0,1.0\n";
    }
    EXPECT_EQ(kind_of([&] { read_csv(path, SplitTag::Train); }), ErrorKind::Decode);
    {
        std::ofstream out(path);
        out << "cls,f0\n0,1.0\n";
    }
    EXPECT_EQ(kind_of([&] { read_csv(path, SplitTag::Train); }), ErrorKind::Decode);
    std::filesystem::remove(path);
}
