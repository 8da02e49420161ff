#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "centaur/csv.hpp"
#include "centaur/datasets.hpp"
#include "centaur/models.hpp"

using namespace centaur;

namespace {

double accuracy(const Model& m, const LabeledDataset& ds) {
    double hits = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) hits += m.predict_class(ds.row(i)) == ds.labels[i];
    return hits / static_cast<double>(ds.size());
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("centaur_" + name)).string();
}

}  // namespace

TEST(Generator, MachineSeesOnlySharedColumns) {
    GeneratorSpec spec{.n_records = 500, .d_shared = 2, .d_private = 1, .true_weights = {1.0, -1.0, 2.0}};
    const auto data = generate_complementary(spec, 7);
    EXPECT_EQ(data.machine.n_features(), 2u);
    EXPECT_EQ(data.full.n_features(), 3u);
    EXPECT_TRUE(data.human.visible_mask[2]);
    EXPECT_EQ(data.machine.labels, data.full.labels);
    data.machine.validate();

    // Labels depend on the withheld column: some records share a sign of the shared logit
    // yet differ in label, so no function of the shared columns gets all of them right.
    std::size_t disagreements = 0;
    for (std::size_t i = 0; i < data.full.size(); ++i) {
        const auto x = data.full.row(i);
        const double shared = x[0] - x[1];
        disagreements += (shared > 0.0) != (data.full.labels[i] == 1.0);
    }
    EXPECT_GT(disagreements, 0u);
}

TEST(Generator, DeterministicAndRejectsMissingPrivate) {
    GeneratorSpec spec{.n_records = 100, .d_shared = 2, .d_private = 1, .true_weights = {1, 1, 1}};
    EXPECT_EQ(generate_complementary(spec, 3).full, generate_complementary(spec, 3).full);
    EXPECT_NE(generate_complementary(spec, 3).full, generate_complementary(spec, 4).full);
    GeneratorSpec none{.n_records = 10, .d_shared = 2, .d_private = 0, .true_weights = {1, 1}};
    EXPECT_THROW(generate_complementary(none, 1), ConfigError);
    EXPECT_NO_THROW(generate_complementary(none, 1, false));
}

TEST(Generator, NullSignalGivesChanceAccuracy) {
    GeneratorSpec spec{.n_records = 4000, .d_shared = 2, .d_private = 1, .true_weights = {0, 0, 0}, .label_noise = 0.5};
    const auto d = generate_complementary(spec, 9);
    const auto parts = split(d.machine, std::vector<double>{0.5, 0.5}, 1);
    const auto m = fit_supervised({}, parts[0], LossKind::logistic, 0.0, DescentOptions{.step_size = 0.5, .max_iters = 500});
    EXPECT_NEAR(accuracy(m, parts[1]), 0.5, 0.04);
}

TEST(Generator, PrivateColumnsAddAtLeastFivePoints) {
    GeneratorSpec spec{.n_records = 2000, .d_shared = 2, .d_private = 2, .true_weights = {1, 1, 1, 1}, .label_noise = 0.05};
    GeneratorSpec hold = spec;
    hold.n_records = 10000;
    const auto train = generate_complementary(spec, 21);
    const auto test = generate_complementary(hold, 22);
    DescentOptions o{.step_size = 0.5, .max_iters = 2000};
    const auto shared = fit_supervised({}, train.machine, LossKind::logistic, 0.0, o);
    const auto all = fit_supervised({}, train.full, LossKind::logistic, 0.0, o);
    const double gap = accuracy(all, test.full) - accuracy(shared, test.machine);
    EXPECT_GE(gap, 0.05) << "gap " << gap;
}

TEST(SimulatedHuman, ZeroLogitTiesToClassOne) {
    SimulatedHuman h{.visible_mask = {true, false}, .weights = {1.0}};
    SplitMix64 rng(1);
    EXPECT_EQ(human_label(h, std::vector<double>{0.0, 5.0}, rng), 1.0);
    EXPECT_EQ(human_label(h, std::vector<double>{-0.1, 5.0}, rng), 0.0);
    EXPECT_THROW(human_label(h, std::vector<double>{0.0}, rng), DimensionError);
}

TEST(SimulatedHuman, FullAnchoringIgnoresInput) {
    SimulatedHuman h{.visible_mask = {true}, .weights = {3.0}, .bias_anchor = 0.2, .anchor_strength = 1.0};
    SplitMix64 rng(1);
    for (double x : {-5.0, 0.0, 5.0}) EXPECT_EQ(human_label(h, std::vector<double>{x}, rng), 0.0);
    h.bias_anchor = 0.9;
    for (double x : {-5.0, 0.0, 5.0}) EXPECT_EQ(human_label(h, std::vector<double>{x}, rng), 1.0);
}

TEST(SimulatedHuman, FlipFrequencyMatchesNoiseRate) {
    SimulatedHuman h{.visible_mask = {true}, .weights = {1.0}, .noise_rate = 0.2, .seed = 99};
    auto rng = h.stream(0);
    const std::vector<double> x{2.0};
    int flips = 0;
    for (int i = 0; i < 10000; ++i) flips += human_label(h, x, rng) == 0.0;
    EXPECT_NEAR(flips / 10000.0, 0.2, 0.02);
}

TEST(SimulatedHuman, NoiseFreeIsAFunctionOfVisibleFeatures) {
    SimulatedHuman h{.visible_mask = {true, false, true}, .weights = {1.0, -2.0}};
    SplitMix64 a(1), b(2);
    const std::vector<double> x{0.3, 100.0, 0.1}, y{0.3, -100.0, 0.1};
    EXPECT_EQ(human_label(h, x, a), human_label(h, y, b));
}

TEST(Elicit, OrderingByUtility) {
    SimulatedHuman h{.visible_mask = {true}, .weights = {0.0}, .utility_bias = {2.0, 0.0}};
    const CandidatePair pair{{1.0, 0.0}, {0.0, 1.0}};
    const auto t = elicit_preferences(h, {{0.5}}, {pair}, 1);
    ASSERT_EQ(t.size(), 1u);
    EXPECT_EQ(t[0].preferred, pair.first);
    EXPECT_THROW(elicit_preferences(h, {{0.5}}, {CandidatePair{{1.0, 0.0}, {1.0, 0.0}}}, 1), InvariantError);
    EXPECT_THROW(elicit_preferences(h, {{0.5}}, {CandidatePair{{}, {1.0, 0.0}}}, 1), InvariantError);
}

TEST(Elicit, SwapRateMatchesNoise) {
    SimulatedHuman h{.visible_mask = {true}, .weights = {0.0}, .noise_rate = 0.1, .utility_bias = {1.0, 0.0}};
    std::vector<std::vector<double>> ctx(1000, std::vector<double>{0.0});
    std::vector<CandidatePair> pairs(1000, CandidatePair{{1.0, 0.0}, {0.0, 1.0}});
    const auto t = elicit_preferences(h, ctx, pairs, 17);
    int swaps = 0;
    for (const auto& x : t) swaps += x.preferred[1] == 1.0;
    EXPECT_NEAR(swaps / 1000.0, 0.1, 0.03);
}

TEST(Elicit, NoiseFreeIsConsistent) {
    SimulatedHuman h{.visible_mask = {true, true}, .weights = {0, 0}};
    h.utility_matrix = Matrix(3, 2);
    h.utility_matrix.data = {1, 0, 0, 1, -1, 1};
    SplitMix64 rng(4);
    for (int t = 0; t < 200; ++t) {
        std::vector<double> x{rng.normal(), rng.normal()};
        auto a = SoftmaxPolicy::one_hot_actions(3);
        const auto t1 = elicit_preferences(h, {x}, {CandidatePair{a[0], a[2]}}, 1);
        const auto t2 = elicit_preferences(h, {x}, {CandidatePair{a[2], a[0]}}, 2);
        EXPECT_EQ(t1[0].preferred, t2[0].preferred);
    }
}

TEST(Split, CountsAndDeterminism) {
    LabeledDataset ds;
    ds.features = Matrix(10, 1);
    for (int i = 0; i < 10; ++i) ds.features(i, 0) = i, ds.labels.push_back(i % 2);
    ds.feature_names = {"x"};

    auto even = split(ds, std::vector<double>{0.5, 0.5}, 3);
    EXPECT_EQ(even[0].size(), 5u);
    EXPECT_EQ(even[1].size(), 5u);

    auto one = split_indices(10, std::vector<double>{1.0}, 3);
    EXPECT_EQ(one[0].size(), 10u);

    auto seventy = split(ds, std::vector<double>{0.7, 0.3}, 3);
    EXPECT_EQ(seventy[0].size(), 7u);
    EXPECT_EQ(seventy[1].size(), 3u);

    // floor-then-distribute: 0.45 * 11 = 4.95, 0.55 * 11 = 6.05 -> floors 4 and 6, the spare
    // record goes to the larger remainder (part 0).
    auto odd = split_indices(11, std::vector<double>{0.45, 0.55}, 3);
    EXPECT_EQ(odd[0].size(), 5u);
    EXPECT_EQ(odd[1].size(), 6u);

    EXPECT_EQ(split_indices(10, std::vector<double>{0.7, 0.3}, 5), split_indices(10, std::vector<double>{0.7, 0.3}, 5));
    EXPECT_THROW(split(ds, std::vector<double>{0.5, 0.4}, 1), ConfigError);

    // Exact partition.
    std::vector<int> seen(10, 0);
    for (const auto& part : split_indices(10, std::vector<double>{0.2, 0.3, 0.5}, 8))
        for (auto i : part) ++seen[i];
    for (int c : seen) EXPECT_EQ(c, 1);
}

TEST(Csv, RoundTripIsExact) {
    SplitMix64 rng(12);
    LabeledDataset ds;
    ds.features = Matrix(1000, 3);
    for (auto& v : ds.features.data) v = rng.normal() * std::pow(10.0, rng.normal() * 3);
    for (int i = 0; i < 1000; ++i) ds.labels.push_back(rng.normal());
    ds.feature_names = {"a", "b", "c"};
    ds.task = TaskKind::regression;
    const auto path = temp_path("roundtrip.csv");
    save_csv(ds, path);
    const auto back = load_csv(path);
    EXPECT_EQ(back.task, TaskKind::regression);
    EXPECT_LE(max_abs_diff(back.features.data, ds.features.data), 1e-12);
    EXPECT_EQ(back.features.data, ds.features.data);
    EXPECT_EQ(back.labels, ds.labels);
    std::filesystem::remove(path);
}

TEST(Csv, SingleRecordAndErrors) {
    std::istringstream one("x,y,label\n1.5,-2,1\n");
    const auto ds = parse_csv(one);
    EXPECT_EQ(ds.size(), 1u);
    EXPECT_EQ(ds.task, TaskKind::binary);
    EXPECT_EQ(ds.feature_names, (std::vector<std::string>{"x", "y"}));

    std::istringstream empty("x,label\n");
    EXPECT_THROW(parse_csv(empty), EmptyDataError);

    std::istringstream ragged("x,y,label\n1,2,3\n1,2\n");
    try {
        parse_csv(ragged);
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 3u);
    }
    std::istringstream bad("x,label\n1,0\nabc,1\n");
    try {
        parse_csv(bad);
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 3u);
    }
}

TEST(HumanSignal, KindAndValidation) {
    HumanSignalDataset h;
    EXPECT_THROW(h.kind(), EmptyDataError);
    h.triplets.push_back({{0.0}, {1.0}, {0.0}});
    EXPECT_EQ(h.kind(), HumanSignalKind::preferences);
    h.triplets.push_back({{0.0}, {1.0}, {1.0}});
    EXPECT_THROW(h.validate(), InvariantError);
}
