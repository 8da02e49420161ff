#include <gtest/gtest.h>

#include <cmath>

#include "centaur/centaur_supervised.hpp"

using namespace centaur;

namespace {

constexpr int kSeeds = 20;

ComplementaryData complementary(std::size_t n, std::uint64_t seed, double noise = 0.05) {
    GeneratorSpec g{.n_records = n, .d_shared = 2, .d_private = 2, .true_weights = {1, 1, 1, 1}, .label_noise = noise};
    return generate_complementary(g, seed);
}

FitOptions linear_opts(std::size_t iters = 300) {
    FitOptions o;
    o.descent = DescentOptions{.step_size = 0.5, .max_iters = iters};
    return o;
}

struct Split {
    LabeledDataset train_machine, test_machine, train_full, test_full;
};

Split halves(const ComplementaryData& cd, std::uint64_t seed) {
    const auto idx = split_indices(cd.machine.size(), std::vector<double>{0.5, 0.5}, seed);
    return {cd.machine.subset(idx[0]), cd.machine.subset(idx[1]), cd.full.subset(idx[0]), cd.full.subset(idx[1])};
}

double rate(const std::vector<double>& a, const std::vector<double>& b) {
    std::size_t hit = 0;
    for (std::size_t i = 0; i < a.size(); ++i) hit += a[i] == b[i];
    return static_cast<double>(hit) / a.size();
}

double log_loss(const std::vector<double>& p, const std::vector<double>& y) {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double q = std::clamp(p[i], 1e-15, 1.0 - 1e-15);
        s -= y[i] * std::log(q) + (1 - y[i]) * std::log(1 - q);
    }
    return s / p.size();
}

template <class F>
std::vector<double> over(const LabeledDataset& ds, F f) {
    std::vector<double> out;
    for (std::size_t i = 0; i < ds.size(); ++i) out.push_back(f(i));
    return out;
}

}  // namespace

TEST(Experiment, KnnAugmentationSitsBetweenMachineAndFullCoverage) {
    double machine = 0.0, knn = 0.0, raw = 0.0;
    for (int s = 0; s < kSeeds; ++s) {
        const auto cd = complementary(4000, 500 + s);
        const auto sp = halves(cd, s);
        const auto hl_train = human_labels(cd.human, sp.train_full, 0);
        const auto hl_test = human_labels(cd.human, sp.test_full, 1u << 20);
        const auto m = fit_supervised({}, sp.train_machine, LossKind::logistic, 0.0, linear_opts().descent);
        machine += rate(over(sp.test_machine, [&](std::size_t i) { return m.predict_class(sp.test_machine.row(i)); }),
                        sp.test_machine.labels) / kSeeds;
        const auto r = augment_raw(sp.train_machine, HumanSignalDataset::from_labels(sp.train_machine.with_labels(hl_train)),
                                   linear_opts());
        raw += rate(over(sp.test_machine,
                         [&](std::size_t i) {
                             return r.predict_class(CentaurInput{sp.test_machine.row(i), {}, hl_test[i]});
                         }),
                    sp.test_machine.labels) / kSeeds;
        std::vector<std::size_t> few(50);
        for (std::size_t i = 0; i < 50; ++i) few[i] = i;
        auto small = sp.train_full.subset(few).with_labels(std::vector<double>(hl_train.begin(), hl_train.begin() + 50));
        const auto k = augment_knn(sp.train_machine, HumanSignalDataset::from_labels(small), 5, linear_opts(),
                                   &sp.train_full.features);
        knn += rate(over(sp.test_machine,
                         [&](std::size_t i) {
                             return k.predict_class(CentaurInput{sp.test_machine.row(i), sp.test_full.row(i)});
                         }),
                    sp.test_machine.labels) / kSeeds;
    }
    std::printf("machine %.4f knn %.4f raw %.4f\n", machine, knn, raw);
    EXPECT_GT(knn, machine);
    EXPECT_LT(knn, raw);
}

TEST(Experiment, AugmentModelAgreementGrowsWithCap) {
    const std::vector<double> caps{0.0, 0.5, 1.0, 2.0, kUnbounded};
    std::vector<double> phi_b(caps.size(), 0.0);
    for (int s = 0; s < kSeeds; ++s) {
        const auto cd = complementary(2000, 600 + s);
        const auto sp = halves(cd, s);
        SimulatedHuman h = cd.human;
        h.anchor_strength = 0.3;
        h.bias_anchor = 1.0;
        h.noise_rate = 0.1;
        const auto hl_train = human_labels(h, sp.train_full, 0);
        const auto hl_test = human_labels(h, sp.test_full, 1u << 20);
        const auto pref = fit_supervised({}, sp.train_full.with_labels(hl_train), LossKind::logistic, 0.0,
                                         linear_opts().descent);
        for (std::size_t g = 0; g < caps.size(); ++g) {
            const auto c = augment_model(sp.train_machine, pref, caps[g], linear_opts(), &sp.train_full.features);
            phi_b[g] += rate(over(sp.test_machine,
                                  [&](std::size_t i) {
                                      return c.predict_class(CentaurInput{sp.test_machine.row(i), sp.test_full.row(i)});
                                  }),
                             hl_test) / kSeeds;
        }
    }
    for (std::size_t g = 0; g < caps.size(); ++g) std::printf("cap %g phi_b %.4f\n", caps[g], phi_b[g]);
    for (std::size_t g = 1; g < caps.size(); ++g) EXPECT_GE(phi_b[g], phi_b[g - 1]) << caps[g];
}

TEST(Experiment, StackingIsNoWorseThanBestMember) {
    int ok = 0;
    double worst_gap = -INFINITY;
    for (int s = 0; s < kSeeds; ++s) {
        const auto cd = complementary(2000, 700 + s, 0.1);
        const auto sp = halves(cd, s);
        const auto hl = human_labels(cd.human, sp.train_full, 0);
        const auto m1 = fit_supervised({}, sp.train_machine, LossKind::logistic, 0.0, linear_opts().descent);
        const auto m2 = fit_supervised({.kind = ModelKind::mlp, .hidden_width = 4}, sp.train_machine, LossKind::logistic,
                                       0.0, DescentOptions{.step_size = 0.3, .max_iters = 300, .seed = 11});
        const auto pref = fit_supervised({}, sp.train_full.with_labels(hl), LossKind::logistic, 0.0, linear_opts().descent);
        const auto c = ensemble_stack({m1, m2}, {pref}, sp.train_machine, kUnbounded, linear_opts(1000),
                                      &sp.train_full.features);
        const auto& y = sp.test_machine.labels;
        const double l1 = log_loss(over(sp.test_machine, [&](std::size_t i) { return m1.predict(sp.test_machine.row(i)); }), y);
        const double l2 = log_loss(over(sp.test_machine, [&](std::size_t i) { return m2.predict(sp.test_machine.row(i)); }), y);
        const double l3 = log_loss(over(sp.test_full, [&](std::size_t i) { return pref.predict(sp.test_full.row(i)); }), y);
        const double lc = log_loss(over(sp.test_machine,
                                        [&](std::size_t i) {
                                            return c.predict(CentaurInput{sp.test_machine.row(i), sp.test_full.row(i)});
                                        }),
                                   y);
        const double gap = lc - std::min({l1, l2, l3});
        worst_gap = std::max(worst_gap, gap);
        ok += gap <= 1e-3;
    }
    std::printf("worst gap %.5f, %d/%d\n", worst_gap, ok, kSeeds);
    EXPECT_EQ(ok, kSeeds);
}

TEST(Experiment, RewardEnsembleAgreementGrowsWithExtent) {
    std::vector<double> phi_b(3, 0.0);
    for (int s = 0; s < kSeeds; ++s) {
        const auto cd = complementary(600, 800 + s);
        FitOptions o;
        o.model = {.kind = ModelKind::mlp, .hidden_width = 4};
        o.descent = {.step_size = 0.3, .max_iters = 200, .seed = static_cast<std::uint64_t>(s)};
        const auto base = fit_supervised(o.model, cd.machine, LossKind::logistic, 0.0, o.descent);
        SimulatedHuman h = cd.human;
        h.visible_mask = {true, true, false, false};
        h.weights = {1.0, -1.0};
        h.anchor_strength = 0.3;
        h.bias_anchor = 1.0;
        const auto hl = human_labels(h, cd.full);
        auto hd = HumanSignalDataset::from_labels(cd.machine.with_labels(hl));
        const auto c = reward_ensemble(base, {hd, hd, hd}, {5, 50, 500}, 2, o);
        for (std::size_t k = 0; k < 3; ++k)
            phi_b[k] += rate(over(cd.machine,
                                  [&](std::size_t i) { return c.member_score(k, cd.machine.row(i)) >= 0.0 ? 1.0 : 0.0; }),
                             hl) / kSeeds;
    }
    std::printf("phi_b by extent %.4f %.4f %.4f\n", phi_b[0], phi_b[1], phi_b[2]);
    EXPECT_LE(phi_b[0], phi_b[1]);
    EXPECT_LE(phi_b[1], phi_b[2]);
}
