#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "centaur/centaur_supervised.hpp"
#include "centaur/datasets.hpp"
#include "centaur/error.hpp"
#include "centaur/models.hpp"
#include "centaur/rng.hpp"

namespace centaur {

/// Row i of the human's view: `view` when given, else the dataset's own features.
inline std::span<const double> human_row(const LabeledDataset& ds, const Matrix* view, std::size_t i) {
    return view ? view->row(i) : ds.row(i);
}

inline void check_view(const LabeledDataset& ds, const Matrix* view, const char* who) {
    if (view && view->rows != ds.size()) throw DimensionError(std::string(who) + " human view", ds.size(), view->rows);
}

/// The simulated human's answer for every record; record i uses stream stream_base + i.
inline std::vector<double> human_only(const SimulatedHuman& sim, const LabeledDataset& ds, const Matrix* view = nullptr,
                                      std::uint64_t stream_base = 0) {
    check_view(ds, view, "human_only");
    std::vector<double> out(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        auto rng = sim.stream(stream_base + i);
        out[i] = human_label(sim, human_row(ds, view, i), rng);
    }
    return out;
}

/// predict() on every record.
inline std::vector<double> machine_only(const Model& model, const LabeledDataset& ds) { return model.predict_all(ds); }

// ---------------------------------------------------------------------------
// active learning

enum class QueryStrategy { uncertainty, random };

inline const char* to_string(QueryStrategy s) { return s == QueryStrategy::uncertainty ? "uncertainty" : "random"; }

struct ActiveLearningStep {
    std::size_t n_labeled = 0;
    double pool_accuracy = 0.0;  // against the pool's hidden labels
};

struct ActiveLearningResult {
    Model model;
    std::vector<ActiveLearningStep> trace;
    std::vector<std::size_t> labeled;  // pool indices in query order
};

/// Queries `batch` records per round until `budget` are annotated by the simulated human and
/// refits from scratch on the annotated records after every round. The first round has no
/// model to consult and is drawn at random; later rounds pick the smallest |p - 0.5|
/// (uncertainty) or draw at random. The pool's labels are read only for the trace.
inline ActiveLearningResult active_learning(const LabeledDataset& pool, const SimulatedHuman& sim, std::size_t budget,
                                            std::size_t batch, QueryStrategy strategy, const FitOptions& opts,
                                            std::uint64_t seed, const Matrix* human_view = nullptr) {
    if (budget == 0) throw ConfigError("budget must be positive", "budget");
    if (batch == 0) throw ConfigError("batch must be positive", "batch");
    if (budget > pool.size())
        throw ConfigError("budget " + std::to_string(budget) + " exceeds the pool size " + std::to_string(pool.size()),
                          "budget");
    if (pool.task != TaskKind::binary) throw ConfigError("active learning needs a binary task", "task");
    check_view(pool, human_view, "active_learning");

    SplitMix64 rng(SplitMix64::derive(seed, 0));
    std::vector<bool> taken(pool.size(), false);
    std::vector<double> annotation(pool.size(), 0.0);
    ActiveLearningResult out;
    bool have_model = false;
    while (out.labeled.size() < budget) {
        const std::size_t want = std::min(batch, budget - out.labeled.size());
        std::vector<std::size_t> open;
        for (std::size_t i = 0; i < pool.size(); ++i)
            if (!taken[i]) open.push_back(i);
        std::vector<std::size_t> pick;
        if (!have_model || strategy == QueryStrategy::random) {
            rng.shuffle(open);
            pick.assign(open.begin(), open.begin() + static_cast<std::ptrdiff_t>(want));
        } else {
            std::vector<std::pair<double, std::size_t>> u;
            for (std::size_t i : open) u.push_back({std::abs(out.model.predict(pool.row(i)) - 0.5), i});
            std::partial_sort(u.begin(), u.begin() + static_cast<std::ptrdiff_t>(want), u.end());
            for (std::size_t k = 0; k < want; ++k) pick.push_back(u[k].second);
        }
        for (std::size_t i : pick) {
            taken[i] = true;
            auto hr = sim.stream(i);
            annotation[i] = human_label(sim, human_row(pool, human_view, i), hr);
            out.labeled.push_back(i);
        }
        std::vector<std::size_t> sorted = out.labeled;
        std::sort(sorted.begin(), sorted.end());
        std::vector<double> y;
        for (std::size_t i : sorted) y.push_back(annotation[i]);
        const auto train = pool.subset(sorted).with_labels(std::move(y));
        out.model = fit_from(make_model(opts.model, pool.n_features(), pool.task, opts.descent.seed), train,
                             opts.loss_for(pool.task), opts.l2, opts.descent);
        have_model = true;
        std::size_t hit = 0;
        for (std::size_t i = 0; i < pool.size(); ++i) hit += out.model.predict_class(pool.row(i)) == pool.labels[i];
        out.trace.push_back({out.labeled.size(), static_cast<double>(hit) / static_cast<double>(pool.size())});
    }
    return out;
}

// ---------------------------------------------------------------------------
// workload partitioning

struct RoutingReport {
    std::size_t n_to_human = 0;
    std::size_t n_to_machine = 0;
    std::vector<bool> to_human;
    std::vector<double> predictions;  // class decisions from whichever side handled the record
};

/// Confidence is the larger class probability. Records below tau go to the human, the rest
/// to the model; tau = 1 sends every record to the human. The human decides without seeing
/// the model's output.
inline RoutingReport workload_partition(const Model& model, const SimulatedHuman& sim, double tau,
                                        const LabeledDataset& ds, const Matrix* human_view = nullptr,
                                        std::uint64_t stream_base = 0) {
    if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("tau must lie in [0,1]", "tau");
    if (model.task != TaskKind::binary) throw ConfigError("workload partitioning needs a binary classifier", "task");
    check_view(ds, human_view, "workload_partition");
    RoutingReport r;
    r.to_human.resize(ds.size());
    r.predictions.resize(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const double p = model.predict(ds.row(i));
        const double confidence = std::max(p, 1.0 - p);
        const bool human = tau >= 1.0 || confidence < tau;
        r.to_human[i] = human;
        if (human) {
            auto rng = sim.stream(stream_base + i);
            r.predictions[i] = human_label(sim, human_row(ds, human_view, i), rng);
            ++r.n_to_human;
        } else {
            r.predictions[i] = p >= constants::kBinaryThreshold ? 1.0 : 0.0;
            ++r.n_to_machine;
        }
    }
    return r;
}

}  // namespace centaur
