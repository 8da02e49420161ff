#pragma once

#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "centaur/centaur_rewards.hpp"
#include "centaur/centaur_supervised.hpp"
#include "centaur/datasets.hpp"
#include "centaur/models.hpp"
#include "centaur/numerics.hpp"

namespace centaur {

/// Worst relative error of one analytic gradient over `points` random parameter vectors.
struct GradcheckEntry {
    std::string name;
    std::function<GradCheckReport(std::uint64_t seed, std::size_t points)> run;
};

namespace detail {

template <class F>
GradCheckReport worst_over(const F& objective, std::size_t dim, std::uint64_t seed, std::size_t points) {
    SplitMix64 rng(seed);
    GradCheckReport worst;
    for (std::size_t k = 0; k < points; ++k) {
        std::vector<double> at(dim);
        for (auto& v : at) v = rng.normal();
        const auto r = check_gradient(objective, at);
        if (r.max_rel_error >= worst.max_rel_error) worst = r;
        worst.passed = worst.passed && r.passed;
    }
    worst.passed = worst.max_rel_error <= constants::kGradCheckRelTol;
    return worst;
}

inline LabeledDataset gradcheck_data(TaskKind task, std::size_t n, std::size_t d, std::uint64_t seed) {
    GeneratorSpec g{.n_records = n, .d_shared = d, .d_private = 0, .true_weights = std::vector<double>(d, 1.0),
                    .label_noise = task == TaskKind::binary ? 0.1 : 0.5, .task = task};
    return generate_complementary(g, seed, false).full;
}

inline GradcheckEntry supervised_entry(std::string name, ModelKind kind, TaskKind task, LossKind loss) {
    return {std::move(name), [=](std::uint64_t seed, std::size_t points) {
                const auto ds = gradcheck_data(task, 15, 3, seed);
                const auto m = make_model({.kind = kind, .hidden_width = 3}, 3, task, seed + 1);
                return worst_over(SupervisedObjective{&m, &ds, loss, 0.05}, m.params.size(), seed + 2, points);
            }};
}

}  // namespace detail

/// Every analytic gradient in the toolkit.
inline std::vector<GradcheckEntry> gradcheck_registry() {
    using detail::worst_over;
    std::vector<GradcheckEntry> out;
    out.push_back(detail::supervised_entry("logistic", ModelKind::linear, TaskKind::binary, LossKind::logistic));
    out.push_back(detail::supervised_entry("squared", ModelKind::linear, TaskKind::regression, LossKind::squared));
    out.push_back(detail::supervised_entry("mlp_logistic", ModelKind::mlp, TaskKind::binary, LossKind::logistic));
    out.push_back(detail::supervised_entry("mlp_squared", ModelKind::mlp, TaskKind::regression, LossKind::squared));
    out.push_back({"reward_triplet_loss", [](std::uint64_t seed, std::size_t points) {
                       SplitMix64 rng(seed);
                       std::vector<PreferenceTriplet> ts;
                       for (int i = 0; i < 12; ++i)
                           ts.push_back({{rng.normal(), rng.normal()}, {rng.normal(), 1.0}, {rng.normal(), 0.0}});
                       GradCheckReport worst;
                       for (ModelKind k : {ModelKind::linear, ModelKind::mlp}) {
                           const auto rm = RewardModel::create({.kind = k, .hidden_width = 3},
                                                               RewardEncoding::interaction, 2, 2, seed + 1);
                           const auto r = worst_over(RewardObjective(rm, ts, 0.05), rm.net.params.size(), seed + 2, points);
                           if (r.max_rel_error >= worst.max_rel_error) worst = r;
                       }
                       worst.passed = worst.max_rel_error <= constants::kGradCheckRelTol;
                       return worst;
                   }});
    out.push_back({"policy_objective", [](std::uint64_t seed, std::size_t points) {
                       SplitMix64 rng(seed);
                       auto ref = SoftmaxPolicy::zeros(3, SoftmaxPolicy::one_hot_actions(4));
                       for (auto& v : ref.params.values()) v = 0.5 * rng.normal();
                       const auto pol = SoftmaxPolicy::zeros(3, SoftmaxPolicy::one_hot_actions(4));
                       std::vector<std::vector<double>> xs(6, std::vector<double>(3));
                       for (auto& x : xs)
                           for (auto& v : x) v = rng.normal();
                       Matrix u(4, 3);
                       for (auto& v : u.data) v = rng.normal();
                       RewardFn r = [u](std::span<const double> x, std::span<const double> y) {
                           double s = 0.0;
                           for (std::size_t a = 0; a < y.size(); ++a) s += y[a] * dot(u.row(a), x);
                           return s;
                       };
                       PolicyLoss loss(PolicyObjective{r, &ref, 0.7, xs, 1.5}, pol);
                       return worst_over(loss, pol.params.size(), seed + 1, points);
                   }});
    out.push_back({"lora_adapter", [](std::uint64_t seed, std::size_t points) {
                       const auto ds = detail::gradcheck_data(TaskKind::binary, 20, 2, seed);
                       const auto base = make_model({.kind = ModelKind::mlp, .hidden_width = 4}, 2, TaskKind::binary, seed + 1);
                       LoraMember m{"W1", 4, 2, 2, {}};
                       m.adapter.add_segment("B", 8).add_segment("A", 4);
                       return worst_over(LoraObjective{&base, &m, &ds, LossKind::logistic, 0.01}, 12, seed + 2, points);
                   }});
    out.push_back({"constrained_cost", [](std::uint64_t seed, std::size_t points) {
                       const auto ds = detail::gradcheck_data(TaskKind::binary, 20, 2, seed);
                       SplitMix64 rng(seed + 3);
                       std::vector<double> hl(ds.size());
                       for (auto& v : hl) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
                       const auto human = ds.with_labels(hl);
                       const auto m = make_model({}, 2, TaskKind::binary, seed + 1);
                       ConstrainedCostObjective obj{&m, &ds, &human, {}, LossKind::logistic, PenaltyKind::logistic,
                                                    SignalTransform::identity, 1.3, 0.01};
                       return worst_over(obj, m.params.size(), seed + 2, points);
                   }});
    out.push_back({"feature_alignment", [](std::uint64_t seed, std::size_t points) {
                       const auto ds = detail::gradcheck_data(TaskKind::binary, 20, 2, seed);
                       const auto m = make_model({.kind = ModelKind::mlp, .hidden_width = 3}, 2, TaskKind::binary, seed + 1);
                       ConstrainedCostObjective obj{&m, &ds, nullptr, {0.8, 0.2}, LossKind::logistic,
                                                    PenaltyKind::profile_distance, SignalTransform::gradient_importance,
                                                    2.0, 0.01};
                       return worst_over(obj, m.params.size(), seed + 2, points);
                   }});
    return out;
}

/// A logistic objective whose reported gradient has the wrong sign; gradcheck must reject it.
inline GradcheckEntry sign_flipped_entry() {
    return {"sign_flipped_logistic", [](std::uint64_t seed, std::size_t points) {
                const auto ds = detail::gradcheck_data(TaskKind::binary, 15, 3, seed);
                const auto m = make_model({}, 3, TaskKind::binary, seed + 1);
                auto flipped = [&](std::span<const double> th, std::span<double> g) {
                    const double v = SupervisedObjective{&m, &ds, LossKind::logistic, 0.05}(th, g);
                    for (auto& x : g) x = -x;
                    return v;
                };
                return detail::worst_over(flipped, m.params.size(), seed + 2, points);
            }};
}

/// Prints one line per entry with the worst relative error; true when every entry passes.
inline bool run_gradchecks(const std::vector<GradcheckEntry>& entries, std::ostream& out, std::uint64_t seed = 1,
                           std::size_t points = 10) {
    bool ok = true;
    for (const auto& e : entries) {
        const auto r = e.run(seed, points);
        char buf[160];
        std::snprintf(buf, sizeof buf, "%-22s worst_rel_error=%.3e  %s", e.name.c_str(), r.max_rel_error,
                      r.passed ? "ok" : "FAILED");
        out << buf << '\n';
        ok = ok && r.passed;
    }
    return ok;
}

}  // namespace centaur
