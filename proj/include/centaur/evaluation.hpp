#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "centaur/baselines.hpp"
#include "centaur/centaur_rewards.hpp"
#include "centaur/centaur_supervised.hpp"
#include "centaur/datasets.hpp"
#include "centaur/error.hpp"
#include "centaur/hash.hpp"
#include "centaur/serialize.hpp"

namespace centaur {

// ---------------------------------------------------------------------------
// metrics

enum class PhiPKind { accuracy, auc, neg_mse };
enum class PhiBKind { agreement, concordance };

inline const char* to_string(PhiPKind k) {
    return k == PhiPKind::accuracy ? "accuracy" : k == PhiPKind::auc ? "auc" : "neg_mse";
}
inline const char* to_string(PhiBKind k) { return k == PhiBKind::agreement ? "agreement" : "concordance"; }

inline void check_lengths(std::size_t a, std::size_t b, const char* who) {
    if (a != b) throw DimensionError(who, a, b);
    if (a == 0) throw EmptyDataError(std::string(who) + " needs at least one record");
}

inline double as_class(double v) { return v >= constants::kBinaryThreshold ? 1.0 : 0.0; }

/// Area under the ROC curve from the rank-sum statistic with midranks for tied scores.
inline double auc(std::span<const double> scores, std::span<const double> truth) {
    check_lengths(scores.size(), truth.size(), "auc");
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double rank_sum = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1 .. j
        for (std::size_t k = i; k < j; ++k)
            if (truth[order[k]] == 1.0) rank_sum += midrank;
        i = j;
    }
    for (double t : truth) n_pos += t == 1.0;
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) throw InvariantError("AUC needs both classes in the truth labels");
    const double np = static_cast<double>(n_pos);
    return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

/// Kendall tau-a: (concordant - discordant) / (n (n - 1) / 2); pairs tied in either
/// argument count as neither. Counted by merge sort in O(n log n).
inline double kendall_tau_a(std::span<const double> a, std::span<const double> b) {
    check_lengths(a.size(), b.size(), "kendall_tau_a");
    const std::size_t n = a.size();
    if (n < 2) throw EmptyDataError("rank concordance needs at least two items");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return a[i] != a[j] ? a[i] < a[j] : b[i] < b[j]; });

    auto tied_pairs = [](const std::vector<double>& v) {
        std::uint64_t t = 0;
        for (std::size_t i = 0; i < v.size();) {
            std::size_t j = i;
            while (j < v.size() && v[j] == v[i]) ++j;
            const std::uint64_t k = j - i;
            t += k * (k - 1) / 2;
            i = j;
        }
        return t;
    };

    std::vector<double> av(n), bv(n);
    for (std::size_t k = 0; k < n; ++k) av[k] = a[idx[k]], bv[k] = b[idx[k]];
    const std::uint64_t n1 = tied_pairs(av);
    std::uint64_t n3 = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && av[j] == av[i]) ++j;
        std::vector<double> block(bv.begin() + static_cast<std::ptrdiff_t>(i), bv.begin() + static_cast<std::ptrdiff_t>(j));
        n3 += tied_pairs(block);
        i = j;
    }
    // Inversions of b in a-order = discordant pairs.
    std::uint64_t swaps = 0;
    std::vector<double> buf(n);
    for (std::size_t width = 1; width < n; width *= 2)
        for (std::size_t lo = 0; lo < n; lo += 2 * width) {
            const std::size_t mid = std::min(lo + width, n), hi = std::min(lo + 2 * width, n);
            std::size_t i = lo, j = mid, k = lo;
            while (i < mid && j < hi) {
                if (bv[j] < bv[i]) {
                    swaps += mid - i;
                    buf[k++] = bv[j++];
                } else {
                    buf[k++] = bv[i++];
                }
            }
            while (i < mid) buf[k++] = bv[i++];
            while (j < hi) buf[k++] = bv[j++];
            std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
                      bv.begin() + static_cast<std::ptrdiff_t>(lo));
        }
    const std::uint64_t n2 = tied_pairs(bv);  // bv is now sorted
    const std::uint64_t n0 = static_cast<std::uint64_t>(n) * (n - 1) / 2;
    const double diff = static_cast<double>(n0) - static_cast<double>(n1) - static_cast<double>(n2) +
                        static_cast<double>(n3) - 2.0 * static_cast<double>(swaps);
    return diff / static_cast<double>(n0);
}

/// Performance metric. Accuracy thresholds predictions at 0.5; AUC ranks raw predictions.
inline double phi_p(std::span<const double> pred, std::span<const double> truth, PhiPKind kind) {
    check_lengths(pred.size(), truth.size(), "phi_p");
    switch (kind) {
        case PhiPKind::accuracy: {
            std::size_t hit = 0;
            for (std::size_t i = 0; i < pred.size(); ++i) hit += as_class(pred[i]) == truth[i];
            return static_cast<double>(hit) / static_cast<double>(pred.size());
        }
        case PhiPKind::auc: return auc(pred, truth);
        case PhiPKind::neg_mse: {
            double s = 0.0;
            for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - truth[i]) * (pred[i] - truth[i]);
            return -s / static_cast<double>(pred.size());
        }
    }
    return 0.0;
}

/// Behavioural metric: decision agreement (both sides thresholded at 0.5) or Kendall
/// concordance between predicted and human scores.
inline double phi_b(std::span<const double> pred, std::span<const double> human, PhiBKind kind) {
    check_lengths(pred.size(), human.size(), "phi_b");
    if (kind == PhiBKind::concordance) return kendall_tau_a(pred, human);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hit += as_class(pred[i]) == as_class(human[i]);
    return static_cast<double>(hit) / static_cast<double>(pred.size());
}

// ---------------------------------------------------------------------------
// experiment setup

enum class HumanView { all, shared, private_only };

inline const char* to_string(HumanView v) {
    return v == HumanView::all ? "all" : v == HumanView::shared ? "shared" : "private";
}

struct HumanParams {
    HumanView view = HumanView::all;
    double anchor_strength = 0.0;
    double bias_anchor = 0.5;
    double noise_rate = 0.0;

    void validate() const {
        auto unit = [](double v, const char* k) {
            if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string(k) + " must lie in [0,1]", k);
        };
        unit(anchor_strength, "anchor_strength");
        unit(bias_anchor, "bias_anchor");
        unit(noise_rate, "noise_rate");
    }
};

/// The generator's simulated human restricted to `params.view`, weighting what it sees by the
/// true weights.
inline SimulatedHuman make_human(const GeneratorSpec& g, const HumanParams& params, std::uint64_t seed) {
    SimulatedHuman h;
    h.task = g.task;
    h.seed = seed;
    h.anchor_strength = params.anchor_strength;
    h.bias_anchor = params.bias_anchor;
    h.noise_rate = params.noise_rate;
    for (std::size_t j = 0; j < g.n_features(); ++j) {
        const bool shared = j < g.d_shared;
        const bool vis = params.view == HumanView::all || (params.view == HumanView::shared) == shared;
        h.visible_mask.push_back(vis);
        if (vis) h.weights.push_back(g.true_weights[j]);
    }
    if (h.weights.empty()) throw ConfigError("the human's view selects no features", "view");
    return h;
}

enum class ArmKind { machine_only, human_only, centaur, workload_partition, active_learning, rlhf };

inline const char* to_string(ArmKind k) {
    switch (k) {
        case ArmKind::machine_only: return "machine_only";
        case ArmKind::human_only: return "human_only";
        case ArmKind::centaur: return "centaur";
        case ArmKind::workload_partition: return "workload_partition";
        case ArmKind::active_learning: return "active_learning";
        case ArmKind::rlhf: return "rlhf";
    }
    return "?";
}

struct RlhfArmParams {
    std::size_t n_actions = 4;
    std::size_t rounds = 5;
    std::size_t pairs_per_round = 5;
    std::size_t pool_size = 16;
    std::size_t n_contexts = 200;  // loop contexts drawn from the training rows
    double beta = 0.1;
    double lambda = 1.0;
    double c1 = kUnbounded;
    std::size_t reward_iters = 50;
    std::size_t policy_iters = 50;
    double step_size = 0.5;
};

struct ArmSpec {
    std::string name;
    ArmKind kind = ArmKind::machine_only;
    CentaurSpec centaur;               // kind == centaur
    FitOptions fit;                    // machine-side fitting for every kind
    double tau = 0.7;                  // workload_partition
    std::size_t budget = 50;           // active_learning
    std::size_t batch = 10;
    QueryStrategy strategy = QueryStrategy::uncertainty;
    std::size_t n_human = 0;           // augment_knn: annotated records (0 = all training rows)
    std::vector<double> cap_grid;      // augment_model: choose importance_cap on validation
    double validation_fraction = 0.25;
    RlhfArmParams rlhf;                // kind == rlhf
};

/// Arms accept an empty finetune mask, meaning every segment of the base model.
inline void validate_arm_centaur(const CentaurSpec& c) {
    auto v = c;
    if (v.technique == Technique::finetune && v.tuning_mask.empty()) v.tuning_mask = {"(all)"};
    v.validate();
}

struct ExperimentSpec {
    GeneratorSpec generator;
    HumanParams human;
    std::vector<ArmSpec> arms;
    std::size_t replications = 1;
    double holdout_fraction = 0.3;
    PhiPKind phi_p = PhiPKind::accuracy;
    PhiBKind phi_b = PhiBKind::agreement;

    void validate() const {
        generator.validate();
        human.validate();
        if (arms.empty()) throw ConfigError("an experiment needs at least one arm", "arms");
        if (replications == 0) throw ConfigError("replications must be positive", "replications");
        if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0))
            throw ConfigError("holdout_fraction must lie in (0,1)", "holdout_fraction");
        std::vector<std::string> names;
        for (const auto& a : arms) {
            if (a.name.empty()) throw ConfigError("every arm needs a name", "name");
            if (std::find(names.begin(), names.end(), a.name) != names.end())
                throw ConfigError("duplicate arm name '" + a.name + "'", "name");
            names.push_back(a.name);
            if (a.kind == ArmKind::centaur) validate_arm_centaur(a.centaur);
            a.fit.descent.validate();
            if (!(a.tau >= 0.0 && a.tau <= 1.0)) throw ConfigError("tau must lie in [0,1]", "tau");
            if (!(a.validation_fraction > 0.0 && a.validation_fraction < 1.0))
                throw ConfigError("validation_fraction must lie in (0,1)", "validation_fraction");
            if (!std::is_sorted(a.cap_grid.begin(), a.cap_grid.end()))
                throw ConfigError("cap_grid must be sorted ascending", "cap_grid");
            if (a.kind == ArmKind::rlhf && a.rlhf.n_actions < 2)
                throw ConfigError("rlhf arms need at least two actions", "n_actions");
        }
    }

    const ArmSpec& arm(const std::string& name) const {
        for (const auto& a : arms)
            if (a.name == name) return a;
        throw ConfigError("no arm named '" + name + "'", "arms");
    }
};

// ---------------------------------------------------------------------------
// one replication

/// Seeds for replication r: derive(master, r) is the replication seed; its streams 0..4 feed
/// the generator, the split, the human, every arm's fitting, and the rlhf utilities.
struct ReplicationSeeds {
    std::uint64_t rep, generator, split, human, arms, utility;
    static ReplicationSeeds of(std::uint64_t master, std::size_t r) {
        const auto s = SplitMix64::derive(master, r);
        return {s, SplitMix64::derive(s, 0), SplitMix64::derive(s, 1), SplitMix64::derive(s, 2),
                SplitMix64::derive(s, 3), SplitMix64::derive(s, 4)};
    }
};

inline constexpr std::uint64_t kHoldoutStreamBase = std::uint64_t{1} << 32;

struct ReplicationData {
    ReplicationSeeds seeds;
    LabeledDataset train_machine, test_machine, train_full, test_full;
    SimulatedHuman human;
    std::vector<double> human_train, human_test;  // human decisions per record
    std::uint64_t hash = 0;                        // of every record the arms see
};

inline ReplicationData make_replication(const ExperimentSpec& spec, std::uint64_t master, std::size_t r) {
    ReplicationData d;
    d.seeds = ReplicationSeeds::of(master, r);
    const auto cd = generate_complementary(spec.generator, d.seeds.generator, false);
    const std::vector<double> fr{1.0 - spec.holdout_fraction, spec.holdout_fraction};
    const auto idx = split_indices(cd.full.size(), fr, d.seeds.split);
    if (idx[0].empty() || idx[1].empty()) throw ConfigError("holdout split leaves an empty part", "holdout_fraction");
    d.train_machine = cd.machine.subset(idx[0]);
    d.test_machine = cd.machine.subset(idx[1]);
    d.train_full = cd.full.subset(idx[0]);
    d.test_full = cd.full.subset(idx[1]);
    d.human = make_human(spec.generator, spec.human, d.seeds.human);
    d.human_train = human_only(d.human, d.train_full, nullptr, 0);
    d.human_test = human_only(d.human, d.test_full, nullptr, kHoldoutStreamBase);
    Fnv1a h;
    for (const auto* ds : {&d.train_machine, &d.test_machine, &d.train_full, &d.test_full}) h.u64(ds->hash());
    h.reals(d.human_train).reals(d.human_test);
    d.hash = h.digest();
    return d;
}

struct MetricsReport {
    double phi_p = 0.0;
    double phi_b = 0.0;
    std::size_t n_records = 0;
    std::uint64_t seed = 0;
    std::map<std::string, double> extras;  // e.g. mean_kl, selected_cap
};

namespace detail {

inline FitOptions seeded(FitOptions o, std::uint64_t seed) {
    o.descent.seed = seed;
    return o;
}

inline LabeledDataset with_human(const LabeledDataset& ds, const std::vector<double>& labels) {
    return ds.with_labels(labels);
}

inline std::vector<double> centaur_predictions(const CentaurModel& c, const LabeledDataset& machine,
                                               const LabeledDataset& full, const std::vector<double>* signal) {
    std::vector<double> out(machine.size());
    for (std::size_t i = 0; i < machine.size(); ++i) {
        CentaurInput in{machine.row(i), full.row(i)};
        if (signal) in.human_signal = (*signal)[i];
        out[i] = c.predict(in);
    }
    return out;
}

inline CentaurModel fit_augment_model(const LabeledDataset& train_m, const LabeledDataset& train_f,
                                      const std::vector<double>& human, double cap, const FitOptions& o) {
    const auto pref = fit_supervised({}, train_f.with_labels(human), o.loss_for(train_f.task), o.l2, o.descent);
    return augment_model(train_m, pref, cap, o, &train_f.features);
}

}  // namespace detail

/// Everything a preference loop needs for one replication: the simulated human with a drawn
/// utility matrix, the uniform initial policy over one-hot actions, and the loop configuration
/// over the first `n_contexts` training rows. Shared by the rlhf arm and live sessions.
struct RlhfSetup {
    SimulatedHuman sim;
    SoftmaxPolicy init;
    RlhfConfig config;
};

inline RlhfSetup rlhf_setup(const RlhfArmParams& p, const ReplicationData& d) {
    if (p.n_actions < 2) throw ConfigError("rlhf arms need at least two actions", "n_actions");
    RlhfSetup s;
    s.sim = d.human;
    SplitMix64 urng(d.seeds.utility);
    s.sim.utility_matrix = Matrix(p.n_actions, s.sim.n_visible());
    for (auto& v : s.sim.utility_matrix.data) v = urng.normal();
    const auto& trf = d.train_full;
    s.init = SoftmaxPolicy::zeros(trf.n_features(), SoftmaxPolicy::one_hot_actions(p.n_actions));
    for (std::size_t i = 0; i < std::min(p.n_contexts, trf.size()); ++i)
        s.config.contexts.emplace_back(trf.row(i).begin(), trf.row(i).end());
    s.config.beta = p.beta;
    s.config.lambda = p.lambda;
    s.config.c1 = p.c1;
    s.config.pool_size = p.pool_size;
    s.config.reward.descent = {.step_size = p.step_size, .max_iters = p.reward_iters, .seed = d.seeds.arms};
    s.config.policy = {.step_size = p.step_size, .max_iters = p.policy_iters, .seed = d.seeds.arms};
    s.config.seed = d.seeds.arms;
    return s;
}

/// phi_p: fraction of contexts whose most probable action is the utility argmax.
/// phi_b: mean Kendall concordance between action probabilities and utilities.
/// Extras carry the mean KL to the initial policy.
inline MetricsReport policy_metrics(const SoftmaxPolicy& policy, const SoftmaxPolicy& init, const SimulatedHuman& sim,
                                    const LabeledDataset& contexts) {
    if (contexts.empty()) throw EmptyDataError("policy metrics need at least one context");
    std::size_t hit = 0;
    double conc = 0.0, kl = 0.0;
    const auto arg = [](const std::vector<double>& v) {
        return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
    };
    for (std::size_t i = 0; i < contexts.size(); ++i) {
        const auto x = contexts.row(i);
        const auto pi = policy.distribution(x);
        std::vector<double> u(policy.n_actions());
        for (std::size_t a = 0; a < u.size(); ++a) u[a] = sim.utility(x, policy.actions[a]);
        hit += arg(pi) == arg(u);
        conc += kendall_tau_a(pi, u);
        kl += kl_categorical(pi, init.distribution(x));
    }
    const double n = static_cast<double>(contexts.size());
    MetricsReport r;
    r.phi_p = static_cast<double>(hit) / n;
    r.phi_b = conc / n;
    r.n_records = contexts.size();
    r.extras["mean_kl"] = kl / n;
    return r;
}

/// Fits one arm on the replication's training records and scores it on the holdout.
inline MetricsReport run_arm(const ArmSpec& arm, const ReplicationData& d, const ExperimentSpec& spec) {
    const auto o = detail::seeded(arm.fit, d.seeds.arms);
    const auto& trm = d.train_machine;
    const auto& trf = d.train_full;
    const auto& tem = d.test_machine;
    const auto& tef = d.test_full;
    const auto loss = o.loss_for(trm.task);
    MetricsReport rep;
    rep.seed = d.seeds.rep;
    rep.n_records = tem.size();
    std::vector<double> pred;

    auto machine = [&] { return fit_supervised(o.model, trm, loss, o.l2, o.descent); };
    auto human_set = [&] { return HumanSignalDataset::from_labels(trm.with_labels(d.human_train)); };

    switch (arm.kind) {
        case ArmKind::machine_only: pred = machine_only(machine(), tem); break;
        case ArmKind::human_only: pred = d.human_test; break;
        case ArmKind::workload_partition: {
            const auto r = workload_partition(machine(), d.human, arm.tau, tem, &tef.features, kHoldoutStreamBase);
            pred = r.predictions;
            rep.extras["share_to_human"] = static_cast<double>(r.n_to_human) / static_cast<double>(tem.size());
            break;
        }
        case ArmKind::active_learning: {
            const auto r = active_learning(trm, d.human, std::min(arm.budget, trm.size()), arm.batch, arm.strategy, o,
                                           d.seeds.arms, &trf.features);
            pred = machine_only(r.model, tem);
            break;
        }
        case ArmKind::centaur: {
            const auto& cs = arm.centaur;
            CentaurModel c;
            switch (cs.technique) {
                case Technique::augment_raw:
                    c = augment_raw(trm, human_set(), o);
                    pred = detail::centaur_predictions(c, tem, tef, &d.human_test);
                    break;
                case Technique::augment_knn: {
                    std::vector<std::size_t> few(arm.n_human == 0 ? trf.size() : std::min(arm.n_human, trf.size()));
                    std::iota(few.begin(), few.end(), 0);
                    std::vector<double> hl;
                    for (std::size_t i : few) hl.push_back(d.human_train[i]);
                    auto h = HumanSignalDataset::from_labels(trf.subset(few).with_labels(hl));
                    c = augment_knn(trm, h, cs.k, o, &trf.features);
                    pred = detail::centaur_predictions(c, tem, tef, nullptr);
                    break;
                }
                case Technique::augment_model: {
                    double cap = cs.importance_cap;
                    if (!arm.cap_grid.empty()) {
                        const std::vector<double> fr{1.0 - arm.validation_fraction, arm.validation_fraction};
                        const auto vi = split_indices(trm.size(), fr, SplitMix64::derive(d.seeds.arms, 1));
                        std::vector<double> h_fit, h_val;
                        for (std::size_t i : vi[0]) h_fit.push_back(d.human_train[i]);
                        const auto fm = trm.subset(vi[0]), ff = trf.subset(vi[0]);
                        const auto vm = trm.subset(vi[1]), vf = trf.subset(vi[1]);
                        double best = -std::numeric_limits<double>::infinity();
                        for (double g : arm.cap_grid) {
                            const auto cv = detail::fit_augment_model(fm, ff, h_fit, g, o);
                            const double s = phi_p(detail::centaur_predictions(cv, vm, vf, nullptr), vm.labels, spec.phi_p);
                            if (s > best) best = s, cap = g;  // strict: ties keep the smaller cap
                        }
                        rep.extras["selected_cap"] = std::isfinite(cap) ? cap : -1.0;
                    }
                    c = detail::fit_augment_model(trm, trf, d.human_train, cap, o);
                    pred = detail::centaur_predictions(c, tem, tef, nullptr);
                    break;
                }
                case Technique::finetune: {
                    const auto base = machine();
                    auto mask = cs.tuning_mask;
                    if (mask.empty())
                        for (const auto& s : base.params.segments()) mask.push_back(s.name);
                    c = finetune(base, human_set(), mask, cs.c1, o);
                    pred = detail::centaur_predictions(c, tem, tef, nullptr);
                    break;
                }
                case Technique::ensemble_stack: {
                    const auto lin = fit_supervised({}, trm, loss, o.l2, o.descent);
                    ModelSpec ms{.kind = ModelKind::mlp, .hidden_width = o.model.hidden_width};
                    const auto mlp = fit_supervised(ms, trm, loss, o.l2, o.descent);
                    const auto pref = fit_supervised({}, trf.with_labels(d.human_train), loss, o.l2, o.descent);
                    c = ensemble_stack({lin, mlp}, {pref}, trm, cs.contribution_cap, o, &trf.features);
                    pred = detail::centaur_predictions(c, tem, tef, nullptr);
                    break;
                }
                case Technique::reward_ensemble: {
                    const auto base = machine();
                    const auto extents = cs.extents.empty() ? std::vector<std::size_t>{0, 50} : cs.extents;
                    std::vector<HumanSignalDataset> hs(extents.size(), human_set());
                    c = reward_ensemble(base, hs, extents, cs.adapter_rank, o);
                    pred = detail::centaur_predictions(c, tem, tef, nullptr);
                    break;
                }
                case Technique::constrained_cost: {
                    const auto pk = trm.task == TaskKind::binary ? PenaltyKind::logistic : PenaltyKind::squared;
                    c = fit_constrained_cost(trm, human_set(), cs.lambda, loss, pk, SignalTransform::identity,
                                             SignalTransform::identity, o);
                    pred = detail::centaur_predictions(c, tem, tef, nullptr);
                    break;
                }
            }
            break;
        }
        case ArmKind::rlhf: {
            const auto setup = rlhf_setup(arm.rlhf, d);
            const auto out = rlhf_loop(setup.sim, setup.init, arm.rlhf.rounds, arm.rlhf.pairs_per_round, setup.config);
            const auto m = policy_metrics(out.policy, setup.init, setup.sim, tef);
            rep.phi_p = m.phi_p;
            rep.phi_b = m.phi_b;
            rep.extras = m.extras;
            return rep;
        }
    }
    const auto& truth = tem.labels;
    rep.phi_p = phi_p(pred, truth, spec.phi_p);
    rep.phi_b = phi_b(pred, d.human_test, spec.phi_b);
    return rep;
}

// ---------------------------------------------------------------------------
// replication experiments

struct Summary {
    double mean = 0.0;
    double stdev = 0.0;  // sample standard deviation, 0 for fewer than two values
    std::size_t n = 0;

    static Summary of(const std::vector<double>& v) {
        Summary s;
        s.n = v.size();
        if (v.empty()) return s;
        for (double x : v) s.mean += x;
        s.mean /= static_cast<double>(v.size());
        if (v.size() > 1) {
            double q = 0.0;
            for (double x : v) q += (x - s.mean) * (x - s.mean);
            s.stdev = std::sqrt(q / static_cast<double>(v.size() - 1));
        }
        return s;
    }
};

struct ArmOutcome {
    std::optional<MetricsReport> report;
    std::string error;  // set when the arm failed in this replication
};

struct ArmResult {
    std::string name;
    ArmKind kind = ArmKind::machine_only;
    std::vector<ArmOutcome> replications;
    Summary phi_p, phi_b;
    std::map<std::string, Summary> extras;
};

struct ExperimentReport {
    std::uint64_t master_seed = 0;
    std::size_t replications = 0;
    std::vector<ArmResult> arms;
    std::vector<std::uint64_t> data_hashes;            // one per replication
    std::vector<std::vector<std::size_t>> wins;        // wins[a][b]: replications with phi_p(a) > phi_p(b)
    std::size_t failed_replications = 0;

    const ArmResult& arm(const std::string& name) const {
        for (const auto& a : arms)
            if (a.name == name) return a;
        throw ConfigError("no arm named '" + name + "'", "arms");
    }
};

class ExperimentFailure : public Error {
public:
    using Error::Error;
};

/// Per replication: fresh data from the replication seed, one train/holdout split, every arm
/// fitted on identical records and scored on the identical holdout. An arm that throws is
/// recorded for that replication; the experiment throws only when more than half of the
/// replications had a failing arm.
inline ExperimentReport run_experiment(const ExperimentSpec& spec, std::uint64_t master_seed) {
    spec.validate();
    ExperimentReport out;
    out.master_seed = master_seed;
    out.replications = spec.replications;
    for (const auto& a : spec.arms) out.arms.push_back({a.name, a.kind, {}, {}, {}, {}});
    for (std::size_t r = 0; r < spec.replications; ++r) {
        const auto data = make_replication(spec, master_seed, r);
        out.data_hashes.push_back(data.hash);
        bool failed = false;
        for (std::size_t k = 0; k < spec.arms.size(); ++k) {
            ArmOutcome oc;
            try {
                oc.report = run_arm(spec.arms[k], data, spec);
            } catch (const std::exception& e) {
                oc.error = e.what();
                failed = true;
            }
            out.arms[k].replications.push_back(std::move(oc));
        }
        out.failed_replications += failed;
    }
    if (2 * out.failed_replications > spec.replications) {
        std::string first;
        for (const auto& a : out.arms)
            for (const auto& oc : a.replications)
                if (first.empty() && !oc.error.empty()) first = a.name + ": " + oc.error;
        throw ExperimentFailure(std::to_string(out.failed_replications) + " of " + std::to_string(spec.replications) +
                                " replications failed (first failure: " + first + ")");
    }
    const std::size_t K = out.arms.size();
    out.wins.assign(K, std::vector<std::size_t>(K, 0));
    for (auto& a : out.arms) {
        std::vector<double> p, b;
        std::map<std::string, std::vector<double>> ex;
        for (const auto& oc : a.replications)
            if (oc.report) {
                p.push_back(oc.report->phi_p);
                b.push_back(oc.report->phi_b);
                for (const auto& [k, v] : oc.report->extras) ex[k].push_back(v);
            }
        a.phi_p = Summary::of(p);
        a.phi_b = Summary::of(b);
        for (const auto& [k, v] : ex) a.extras[k] = Summary::of(v);
    }
    for (std::size_t r = 0; r < spec.replications; ++r)
        for (std::size_t i = 0; i < K; ++i)
            for (std::size_t j = 0; j < K; ++j) {
                const auto& x = out.arms[i].replications[r].report;
                const auto& y = out.arms[j].replications[r].report;
                if (i != j && x && y && x->phi_p > y->phi_p) ++out.wins[i][j];
            }
    return out;
}

// ---------------------------------------------------------------------------
// ranking

struct OrderingStat {
    std::string better, worse;
    double fraction = 0.0;  // replications where better's phi_p exceeds worse's
    double mean_gap = 0.0;  // mean phi_p(better) - phi_p(worse)
    std::size_t n = 0;
};

struct RankingReport {
    ExperimentReport experiment;
    std::vector<OrderingStat> orderings;  // centaur > machine, machine > human, centaur > human
};

/// Runs the experiment and reports how often the centaur > machine > human ordering holds.
/// The experiment must contain arms named "human_only", "machine_only" and "centaur".
inline RankingReport ranking_experiment(const ExperimentSpec& spec, std::uint64_t master_seed) {
    for (const char* n : {"human_only", "machine_only", "centaur"}) (void)spec.arm(n);
    RankingReport out;
    out.experiment = run_experiment(spec, master_seed);
    const std::vector<std::pair<std::string, std::string>> pairs{
        {"centaur", "machine_only"}, {"machine_only", "human_only"}, {"centaur", "human_only"}};
    for (const auto& [hi, lo] : pairs) {
        const auto& a = out.experiment.arm(hi);
        const auto& b = out.experiment.arm(lo);
        OrderingStat s{hi, lo};
        std::size_t wins = 0;
        double gap = 0.0;
        for (std::size_t r = 0; r < spec.replications; ++r) {
            const auto& x = a.replications[r].report;
            const auto& y = b.replications[r].report;
            if (!x || !y) continue;
            ++s.n;
            wins += x->phi_p > y->phi_p;
            gap += x->phi_p - y->phi_p;
        }
        if (s.n > 0) {
            s.fraction = static_cast<double>(wins) / static_cast<double>(s.n);
            s.mean_gap = gap / static_cast<double>(s.n);
        }
        out.orderings.push_back(s);
    }
    return out;
}

// ---------------------------------------------------------------------------
// frontier sweeps

enum class Knob { lambda, beta, importance_cap, c1 };

inline const char* to_string(Knob k) {
    switch (k) {
        case Knob::lambda: return "lambda";
        case Knob::beta: return "beta";
        case Knob::importance_cap: return "importance_cap";
        case Knob::c1: return "c1";
    }
    return "?";
}

inline Knob knob_from_string(const std::string& s) {
    for (Knob k : {Knob::lambda, Knob::beta, Knob::importance_cap, Knob::c1})
        if (s == to_string(k)) return k;
    throw ConfigError("unknown knob '" + s + "' (expected lambda, beta, importance_cap or c1)", "knob");
}

/// Sets the knob on the arm; false when the knob does not apply to the arm's technique.
inline bool apply_knob(ArmSpec& arm, Knob knob, double v) {
    if (arm.kind == ArmKind::rlhf) {
        if (knob == Knob::lambda) return arm.rlhf.lambda = v, true;
        if (knob == Knob::beta) return arm.rlhf.beta = v, true;
        if (knob == Knob::c1) return arm.rlhf.c1 = v, true;
        return false;
    }
    if (arm.kind != ArmKind::centaur) return false;
    auto& c = arm.centaur;
    switch (knob) {
        case Knob::lambda:
            if (c.technique != Technique::constrained_cost) return false;
            c.lambda = v;
            return true;
        case Knob::importance_cap:
            if (c.technique != Technique::augment_model) return false;
            c.importance_cap = v;
            arm.cap_grid.clear();
            return true;
        case Knob::c1:
            if (c.technique != Technique::finetune) return false;
            c.c1 = v;
            return true;
        case Knob::beta: return false;
    }
    return false;
}

struct FrontierPoint {
    double value = 0.0;
    double phi_p_mean = 0.0;
    double phi_b_mean = 0.0;
    std::optional<double> mean_kl;
};

/// One full replication experiment per grid value with the knob set on the swept arm (by
/// name, or the first arm the knob applies to when `arm_name` is empty).
inline std::vector<FrontierPoint> frontier_sweep(const ExperimentSpec& spec, Knob knob, const std::vector<double>& grid,
                                                 std::uint64_t master_seed, const std::string& arm_name = {},
                                                 std::vector<ExperimentReport>* reports = nullptr) {
    if (grid.empty()) throw ConfigError("sweep grid must not be empty", "grid");
    if (!std::is_sorted(grid.begin(), grid.end())) throw ConfigError("sweep grid must be sorted ascending", "grid");
    for (double v : grid)
        if (!(v >= 0.0)) throw ConfigError("sweep values must be nonnegative", "grid");
    std::size_t target = spec.arms.size();
    for (std::size_t k = 0; k < spec.arms.size(); ++k) {
        if (!arm_name.empty() && spec.arms[k].name != arm_name) continue;
        ArmSpec probe = spec.arms[k];
        if (apply_knob(probe, knob, grid.front())) {
            target = k;
            break;
        }
        if (!arm_name.empty())
            throw ConfigError(std::string("knob ") + to_string(knob) + " does not apply to arm '" + arm_name + "'", "knob");
    }
    if (target == spec.arms.size())
        throw ConfigError(std::string("knob ") + to_string(knob) + " applies to no arm in the experiment", "knob");
    std::vector<FrontierPoint> out;
    for (double v : grid) {
        ExperimentSpec s = spec;
        apply_knob(s.arms[target], knob, v);
        auto rep = run_experiment(s, master_seed);
        const auto& a = rep.arms[target];
        FrontierPoint p{v, a.phi_p.mean, a.phi_b.mean, std::nullopt};
        if (auto it = a.extras.find("mean_kl"); it != a.extras.end()) p.mean_kl = it->second.mean;
        out.push_back(p);
        if (reports) reports->push_back(std::move(rep));
    }
    return out;
}

// ---------------------------------------------------------------------------
// report output

inline std::string hex64(std::uint64_t v) { return detail::hex64(v); }

inline Json summary_json(const Summary& s) { return {{"mean", s.mean}, {"stdev", s.stdev}, {"n", s.n}}; }

inline Json report_to_json(const ExperimentReport& r) {
    Json j;
    j["master_seed"] = r.master_seed;
    j["replications"] = r.replications;
    j["failed_replications"] = r.failed_replications;
    Json hashes = Json::array();
    for (auto h : r.data_hashes) hashes.push_back(hex64(h));
    j["data_hashes"] = hashes;
    Json arms = Json::array();
    for (const auto& a : r.arms) {
        Json aj;
        aj["name"] = a.name;
        aj["kind"] = to_string(a.kind);
        aj["phi_p"] = summary_json(a.phi_p);
        aj["phi_b"] = summary_json(a.phi_b);
        Json ex = Json::object();
        for (const auto& [k, s] : a.extras) ex[k] = summary_json(s);
        aj["extras"] = ex;
        Json reps = Json::array();
        for (const auto& oc : a.replications) {
            Json rj;
            if (oc.report) {
                rj["seed"] = oc.report->seed;
                rj["phi_p"] = oc.report->phi_p;
                rj["phi_b"] = oc.report->phi_b;
                rj["n_records"] = oc.report->n_records;
                Json e = Json::object();
                for (const auto& [k, v] : oc.report->extras) e[k] = v;
                rj["extras"] = e;
            } else {
                rj["error"] = oc.error;
            }
            reps.push_back(rj);
        }
        aj["per_replication"] = reps;
        arms.push_back(aj);
    }
    j["arms"] = arms;
    Json wins = Json::object();
    for (std::size_t i = 0; i < r.arms.size(); ++i) {
        Json row = Json::object();
        for (std::size_t k = 0; k < r.arms.size(); ++k)
            if (k != i) row[r.arms[k].name] = r.wins[i][k];
        wins[r.arms[i].name] = row;
    }
    j["wins"] = wins;
    return j;
}

inline std::string fmt_real(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Columns: arm, metric, mean, stdev, n.
inline std::string summary_csv(const ExperimentReport& r) {
    std::ostringstream os;
    os << "arm,metric,mean,stdev,n\n";
    for (const auto& a : r.arms) {
        os << a.name << ",phi_p," << fmt_real(a.phi_p.mean) << ',' << fmt_real(a.phi_p.stdev) << ',' << a.phi_p.n << '\n';
        os << a.name << ",phi_b," << fmt_real(a.phi_b.mean) << ',' << fmt_real(a.phi_b.stdev) << ',' << a.phi_b.n << '\n';
        for (const auto& [k, s] : a.extras)
            os << a.name << ',' << k << ',' << fmt_real(s.mean) << ',' << fmt_real(s.stdev) << ',' << s.n << '\n';
    }
    return os.str();
}

/// Columns: knob, phi_p_mean, phi_b_mean (plus mean_kl when the swept arm reports it).
inline std::string frontier_csv(const std::vector<FrontierPoint>& pts) {
    const bool kl = !pts.empty() && pts.front().mean_kl.has_value();
    std::ostringstream os;
    os << "knob,phi_p_mean,phi_b_mean" << (kl ? ",mean_kl" : "") << '\n';
    for (const auto& p : pts) {
        os << fmt_real(p.value) << ',' << fmt_real(p.phi_p_mean) << ',' << fmt_real(p.phi_b_mean);
        if (kl) os << ',' << fmt_real(*p.mean_kl);
        os << '\n';
    }
    return os.str();
}

}  // namespace centaur
