#pragma once

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "centaur/datasets.hpp"
#include "centaur/error.hpp"
#include "centaur/hash.hpp"
#include "centaur/models.hpp"
#include "centaur/numerics.hpp"
#include "centaur/param_vector.hpp"
#include "centaur/serialize.hpp"

namespace centaur {

inline constexpr double kUnbounded = std::numeric_limits<double>::infinity();

enum class Technique {
    augment_raw,
    augment_knn,
    augment_model,
    finetune,
    ensemble_stack,
    reward_ensemble,
    constrained_cost,
};

inline const char* to_string(Technique t) {
    switch (t) {
        case Technique::augment_raw: return "augment_raw";
        case Technique::augment_knn: return "augment_knn";
        case Technique::augment_model: return "augment_model";
        case Technique::finetune: return "finetune";
        case Technique::ensemble_stack: return "ensemble_stack";
        case Technique::reward_ensemble: return "reward_ensemble";
        case Technique::constrained_cost: return "constrained_cost";
    }
    return "?";
}

inline Technique technique_from_string(const std::string& s) {
    for (auto t : {Technique::augment_raw, Technique::augment_knn, Technique::augment_model, Technique::finetune,
                   Technique::ensemble_stack, Technique::reward_ensemble, Technique::constrained_cost})
        if (s == to_string(t)) return t;
    throw ConfigError("unknown technique '" + s + "'", "technique");
}

/// Which technique to run and how strongly the human side may pull on the result.
/// Caps default to unbounded; a cap of 0 switches the human influence off.
struct CentaurSpec {
    Technique technique = Technique::augment_raw;
    double c1 = kUnbounded;               // finetune: L2 radius around the base parameters
    double c2 = kUnbounded;               // reserved for caps on the human model itself
    double lambda = 0.0;                  // constrained_cost penalty weight
    double importance_cap = kUnbounded;   // augment_model: |weight| on the preference feature
    double contribution_cap = kUnbounded; // ensemble_stack: L1 norm of human-member weights
    std::vector<std::string> tuning_mask; // finetune: segments allowed to move
    std::size_t k = 5;                    // augment_knn
    std::size_t adapter_rank = 1;         // reward_ensemble
    std::vector<std::size_t> extents;     // reward_ensemble: iterations per member

    void validate() const {
        auto nonneg = [](double v, const char* key) {
            if (!(v >= 0.0)) throw ConfigError(std::string(key) + " must be nonnegative", key);
        };
        nonneg(c1, "c1");
        nonneg(c2, "c2");
        nonneg(lambda, "lambda");
        nonneg(importance_cap, "importance_cap");
        nonneg(contribution_cap, "contribution_cap");
        if (technique == Technique::augment_knn && k == 0) throw ConfigError("k must be positive", "k");
        if (technique == Technique::finetune && tuning_mask.empty())
            throw ConfigError("finetune needs at least one segment in tuning_mask", "tuning_mask");
        if (technique == Technique::reward_ensemble && adapter_rank == 0)
            throw ConfigError("adapter_rank must be positive", "adapter_rank");
    }
};

struct FitOptions {
    ModelSpec model;
    std::optional<LossKind> loss;  // defaults to the task's natural loss
    double l2 = 0.0;
    DescentOptions descent;

    LossKind loss_for(TaskKind t) const { return loss.value_or(default_loss(t)); }
};

struct ConstraintResidual {
    std::string name;
    double value = 0.0;
    double cap = kUnbounded;

    bool satisfied() const noexcept { return value <= cap; }
};

struct Provenance {
    std::string technique;
    std::uint64_t base_hash = 0;
    std::uint64_t human_data_hash = 0;
};

/// One record as a centaur sees it at inference. `human_x` feeds human-side models whose
/// input space differs from the machine's; `human_signal` is the raw y^h for augment_raw.
struct CentaurInput {
    std::span<const double> x;
    std::span<const double> human_x = {};
    std::optional<double> human_signal = std::nullopt;
};

inline std::uint64_t params_hash(const ParamVector& p) { return Fnv1a().reals(p.values()).digest(); }

/// Low-rank adapter on one weight matrix of a frozen base: W_eff = W + B A.
struct LoraMember {
    std::string matrix;  // adapted segment of the base
    std::size_t rows = 0, cols = 0, rank = 0;
    ParamVector adapter; // "B" (rows x rank), "A" (rank x cols)

    /// Base parameters with the low-rank delta added to the adapted matrix.
    std::vector<double> effective(const ParamVector& base) const {
        std::vector<double> out = base.values();
        apply_delta(base, adapter.values(), out);
        return out;
    }

    void apply_delta(const ParamVector& base, std::span<const double> ad, std::span<double> out) const {
        const auto& seg = base.segment(matrix);
        const double* B = ad.data();
        const double* A = ad.data() + rows * rank;
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) {
                double d = 0.0;
                for (std::size_t r = 0; r < rank; ++r) d += B[i * rank + r] * A[r * cols + j];
                out[seg.offset + i * cols + j] += d;
            }
    }
};

struct CentaurModel {
    CentaurSpec spec;
    /// h_gamma: the model that produces the centaur's output. For ensemble_stack it is the
    /// linear combiner over member outputs; for reward_ensemble it is the frozen base.
    Model model;
    ParamVector symbiotic_params;
    std::optional<KnnIndex> knn;
    std::optional<Model> preference_model;
    std::vector<Model> machine_members;
    std::vector<Model> human_members;
    std::vector<LoraMember> adapters;
    Provenance provenance;
    std::vector<ConstraintResidual> residuals;

    bool constraints_hold() const {
        return std::all_of(residuals.begin(), residuals.end(), [](const auto& r) { return r.satisfied(); });
    }

    std::span<const double> human_input(const CentaurInput& in) const { return in.human_x.empty() ? in.x : in.human_x; }

    /// Inputs to h_gamma for this record (augmentation column appended when needed).
    std::vector<double> features(const CentaurInput& in) const {
        std::vector<double> f(in.x.begin(), in.x.end());
        switch (spec.technique) {
            case Technique::augment_raw:
                if (!in.human_signal)
                    throw CoverageError("augment_raw needs the human signal for every record, at inference too");
                f.push_back(*in.human_signal);
                break;
            case Technique::augment_knn: f.push_back(knn->feedback(human_input(in))); break;
            case Technique::augment_model: f.push_back(preference_model->predict(human_input(in))); break;
            case Technique::ensemble_stack: {
                f.clear();
                for (const auto& m : machine_members) f.push_back(m.score(in.x));
                for (const auto& m : human_members) f.push_back(m.score(human_input(in)));
                break;
            }
            default: break;
        }
        return f;
    }

    /// Raw output (logit for binary tasks).
    double score(const CentaurInput& in) const {
        if (spec.technique == Technique::reward_ensemble) {
            double s = 0.0;
            for (std::size_t k = 0; k < adapters.size(); ++k) s += member_score(k, in.x);
            return s / static_cast<double>(adapters.size());
        }
        return model.score(features(in));
    }

    double member_score(std::size_t k, std::span<const double> x) const {
        return model.score_at(adapters.at(k).effective(model.params), x);
    }

    double predict(const CentaurInput& in) const {
        const double z = score(in);
        return model.task == TaskKind::binary ? sigmoid(z) : z;
    }
    double predict_class(const CentaurInput& in) const { return predict(in) >= constants::kBinaryThreshold ? 1.0 : 0.0; }
};

namespace detail {

inline CentaurModel finish(CentaurModel c) {
    if (c.spec.technique != Technique::reward_ensemble) c.symbiotic_params = c.model.params;
    c.provenance.technique = to_string(c.spec.technique);
    if (!c.constraints_hold()) throw InvariantError("centaur constraint residual exceeds its cap");
    return c;
}

inline const LabeledDataset& require_labels(const HumanSignalDataset& h, const char* who) {
    if (!h.labeled || h.labeled->empty())
        throw CoverageError(std::string(who) + " needs labeled human signals");
    return *h.labeled;
}

/// Human signals aligned with d_data by record index.
inline std::vector<double> aligned_signals(const LabeledDataset& d_data, const HumanSignalDataset& d_human,
                                           const char* who) {
    const auto& h = require_labels(d_human, who);
    if (h.size() < d_data.size())
        throw CoverageError(std::string(who) + " needs a human signal for every record of d_data (|d_human| >= |d_data|): got " +
                            std::to_string(h.size()) + " signals for " + std::to_string(d_data.size()) + " records");
    return {h.labels.begin(), h.labels.begin() + static_cast<std::ptrdiff_t>(d_data.size())};
}

inline Model fresh_model(const FitOptions& opts, std::size_t n_features, TaskKind task) {
    return make_model(opts.model, n_features, task, opts.descent.seed);
}

}  // namespace detail

/// Trains h_gamma on (x_i + y^h_i, y_i); the appended column is named "human_signal".
inline CentaurModel augment_raw(const LabeledDataset& d_data, const HumanSignalDataset& d_human,
                                const FitOptions& opts) {
    const auto signals = detail::aligned_signals(d_data, d_human, "augment_raw");
    const auto aug = d_data.with_column("human_signal", signals);
    CentaurModel c;
    c.spec.technique = Technique::augment_raw;
    c.model = fit_from(detail::fresh_model(opts, aug.n_features(), aug.task), aug, opts.loss_for(aug.task), opts.l2,
                       opts.descent);
    c.provenance.human_data_hash = d_human.hash();
    return detail::finish(std::move(c));
}

/// Appends the k-NN vote of the human reference set. Neighbours are searched in the space of
/// d_human's features: d_data's own features by default, or `human_view` (rows aligned with
/// d_data) when the human records live in a different view.
inline CentaurModel augment_knn(const LabeledDataset& d_data, const HumanSignalDataset& d_human, std::size_t k,
                                const FitOptions& opts, const Matrix* human_view = nullptr) {
    const auto& ref = detail::require_labels(d_human, "augment_knn");
    const std::size_t dim = human_view ? human_view->cols : d_data.n_features();
    if (ref.n_features() != dim) throw DimensionError("augment_knn reference features", dim, ref.n_features());
    if (human_view && human_view->rows != d_data.size())
        throw DimensionError("augment_knn human view", d_data.size(), human_view->rows);
    CentaurModel c;
    c.spec.technique = Technique::augment_knn;
    c.spec.k = k;
    c.knn.emplace(ref, k);
    std::vector<double> column(d_data.size());
    for (std::size_t i = 0; i < d_data.size(); ++i)
        column[i] = c.knn->feedback(human_view ? human_view->row(i) : d_data.row(i));
    const auto aug = d_data.with_column("human_signal", column);
    c.model = fit_from(detail::fresh_model(opts, aug.n_features(), aug.task), aug, opts.loss_for(aug.task), opts.l2,
                       opts.descent);
    c.provenance.human_data_hash = d_human.hash();
    return detail::finish(std::move(c));
}

/// Appends the preference model's prediction as a feature whose weight is boxed into
/// [-importance_cap, importance_cap]. `pref_inputs` (rows aligned with d_data) feeds the
/// preference model when it reads a different view than the machine; by default it reads
/// d_data's own features.
inline CentaurModel augment_model(const LabeledDataset& d_data, const Model& preference_model, double importance_cap,
                                  const FitOptions& opts, const Matrix* pref_inputs = nullptr) {
    if (!(importance_cap >= 0.0)) throw ConfigError("importance_cap must be nonnegative", "importance_cap");
    if (pref_inputs && pref_inputs->rows != d_data.size())
        throw DimensionError("augment_model preference inputs", d_data.size(), pref_inputs->rows);
    std::vector<double> column(d_data.size());
    for (std::size_t i = 0; i < d_data.size(); ++i)
        column[i] = preference_model.predict(pref_inputs ? pref_inputs->row(i) : d_data.row(i));
    const auto aug = d_data.with_column("human_model", column);

    CentaurModel c;
    c.spec.technique = Technique::augment_model;
    c.spec.importance_cap = importance_cap;
    c.preference_model = preference_model;
    Model init = detail::fresh_model(opts, aug.n_features(), aug.task);
    if (init.kind != ModelKind::linear)
        throw ConfigError("augment_model constrains a single feature weight and needs a linear h_gamma", "model");
    const std::size_t slot = aug.n_features() - 1;
    auto project = [slot, importance_cap](std::span<double> t) {
        t[slot] = std::clamp(t[slot], -importance_cap, importance_cap);
    };
    c.model = fit_from(std::move(init), aug, opts.loss_for(aug.task), opts.l2, opts.descent, project);
    c.residuals.push_back({"importance", std::abs(c.model.params[slot]), importance_cap});
    c.provenance.human_data_hash = params_hash(preference_model.params);
    return detail::finish(std::move(c));
}

/// Moves only the masked segments of `base`, inside an L2 ball of radius c1 around their
/// starting values, to fit the human labels. Everything else stays bit-identical.
inline CentaurModel finetune(const Model& base, const HumanSignalDataset& d_human,
                             const std::vector<std::string>& tuning_mask, double c1, const FitOptions& opts) {
    if (tuning_mask.empty()) throw ConfigError("tuning_mask must select at least one segment", "tuning_mask");
    if (!(c1 >= 0.0)) throw ConfigError("c1 must be nonnegative", "c1");
    const auto& data = detail::require_labels(d_human, "finetune");

    std::vector<bool> tunable(base.params.size(), false);
    for (const auto& name : tuning_mask) {
        const auto& s = base.params.segment(name);
        for (std::size_t j = s.offset; j < s.offset + s.length; ++j) tunable[j] = true;
    }
    const std::vector<double> origin = base.params.values();
    std::vector<std::size_t> idx;
    for (std::size_t j = 0; j < tunable.size(); ++j)
        if (tunable[j]) idx.push_back(j);
    std::vector<double> center(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) center[i] = origin[idx[i]];

    auto project = [&](std::span<double> t) {
        for (std::size_t j = 0; j < t.size(); ++j)
            if (!tunable[j]) t[j] = origin[j];
        std::vector<double> g(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) g[i] = t[idx[i]];
        project_l2_ball(g, center, c1);
        for (std::size_t i = 0; i < idx.size(); ++i) t[idx[i]] = g[i];
    };

    CentaurModel c;
    c.spec.technique = Technique::finetune;
    c.spec.c1 = c1;
    c.spec.tuning_mask = tuning_mask;
    c.model = fit_from(base, data, opts.loss_for(base.task), opts.l2, opts.descent, project);
    std::vector<double> gamma(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) gamma[i] = c.model.params[idx[i]];
    c.residuals.push_back({"drift_l2", l2_distance(gamma, center), c1});
    c.provenance.base_hash = params_hash(base.params);
    c.provenance.human_data_hash = d_human.hash();
    return detail::finish(std::move(c));
}

/// Linear stacking combiner over member raw outputs, trained on d_data. Machine members start
/// at weight 1/N, human members at 0; the L1 norm of the human weights stays within
/// contribution_cap. `human_inputs` (rows aligned with d_data) feeds the human members.
inline CentaurModel ensemble_stack(const std::vector<Model>& machine_models, const std::vector<Model>& human_models,
                                   const LabeledDataset& d_data, double contribution_cap, const FitOptions& opts,
                                   const Matrix* human_inputs = nullptr) {
    if (machine_models.empty()) throw ConfigError("ensemble_stack needs at least one machine member", "machine_models");
    if (!(contribution_cap >= 0.0)) throw ConfigError("contribution_cap must be nonnegative", "contribution_cap");
    for (const auto& m : machine_models) {
        if (m.n_features != d_data.n_features())
            throw DimensionError("machine member input", d_data.n_features(), m.n_features);
        if (m.task != d_data.task) throw ConfigError("members disagree on their output space", "machine_models");
    }
    for (const auto& m : human_models) {
        if (m.task != d_data.task) throw ConfigError("members disagree on their output space", "human_models");
        const std::size_t in = human_inputs ? human_inputs->cols : d_data.n_features();
        if (m.n_features != in) throw DimensionError("human member input", in, m.n_features);
    }
    if (human_inputs && human_inputs->rows != d_data.size())
        throw DimensionError("ensemble_stack human inputs", d_data.size(), human_inputs->rows);

    CentaurModel c;
    c.spec.technique = Technique::ensemble_stack;
    c.spec.contribution_cap = contribution_cap;
    c.machine_members = machine_models;
    c.human_members = human_models;

    const std::size_t N = machine_models.size(), K = human_models.size();
    LabeledDataset meta;
    meta.task = d_data.task;
    meta.labels = d_data.labels;
    meta.features = Matrix(d_data.size(), N + K);
    for (std::size_t n = 0; n < N; ++n) meta.feature_names.push_back("machine_" + std::to_string(n));
    for (std::size_t k = 0; k < K; ++k) meta.feature_names.push_back("human_" + std::to_string(k));
    for (std::size_t i = 0; i < d_data.size(); ++i) {
        for (std::size_t n = 0; n < N; ++n) meta.features(i, n) = machine_models[n].score(d_data.row(i));
        for (std::size_t k = 0; k < K; ++k)
            meta.features(i, N + k) = human_models[k].score(human_inputs ? human_inputs->row(i) : d_data.row(i));
    }

    Model combiner = Model::linear(N + K, d_data.task);
    for (std::size_t n = 0; n < N; ++n) combiner.params[n] = 1.0 / static_cast<double>(N);
    auto project = [N, K, contribution_cap](std::span<double> t) {
        if (K > 0) project_l1_ball(t.subspan(N, K), contribution_cap);
    };
    c.model = fit_from(std::move(combiner), meta, opts.loss_for(d_data.task), opts.l2, opts.descent, project);
    double human_l1 = 0.0;
    for (std::size_t k = 0; k < K; ++k) human_l1 += std::abs(c.model.params[N + k]);
    c.residuals.push_back({"human_contribution_l1", human_l1, contribution_cap});
    Fnv1a h;
    for (const auto& m : machine_models) h.reals(m.params.values());
    c.provenance.base_hash = h.digest();
    Fnv1a hh;
    for (const auto& m : human_models) hh.reals(m.params.values());
    c.provenance.human_data_hash = hh.digest();
    return detail::finish(std::move(c));
}

/// Adapted matrix of a base model and its shape: the hidden layer W1 of an MLP, or the
/// weight row (1 x d) of a linear model.
struct AdaptedMatrix {
    std::string segment;
    std::size_t rows, cols;
};

inline AdaptedMatrix adapted_matrix(const Model& base) {
    if (base.kind == ModelKind::mlp) return {"W1", base.hidden_width, base.n_features};
    return {"weights", 1, base.n_features};
}

/// Objective over adapter parameters of one LoRA member.
struct LoraObjective {
    const Model* base;
    const LoraMember* shape;
    const LabeledDataset* data;
    LossKind loss;
    double l2 = 0.0;

    double operator()(std::span<const double> ad, std::span<double> grad) const {
        const auto& P = base->params;
        std::vector<double> eff = P.values();
        shape->apply_delta(P, ad, eff);
        std::vector<double> g_eff(eff.size(), 0.0);
        SupervisedObjective obj{base, data, loss, l2};
        const double v = obj(eff, g_eff);
        const auto& seg = P.segment(shape->matrix);
        const std::size_t R = shape->rows, C = shape->cols, r = shape->rank;
        const double* B = ad.data();
        const double* A = ad.data() + R * r;
        const double* G = g_eff.data() + seg.offset;
        std::fill(grad.begin(), grad.end(), 0.0);
        double* gB = grad.data();
        double* gA = grad.data() + R * r;
        for (std::size_t i = 0; i < R; ++i)
            for (std::size_t j = 0; j < C; ++j) {
                const double gij = G[i * C + j];
                if (gij == 0.0) continue;
                for (std::size_t q = 0; q < r; ++q) {
                    gB[i * r + q] += gij * A[q * C + j];
                    gA[q * C + j] += gij * B[i * r + q];
                }
            }
        return v;
    }
};

/// K reward members share the frozen base; member k learns a rank-limited delta on the
/// adapted matrix for extents[k] iterations on its own human dataset. The ensemble scores
/// with the mean member output.
inline CentaurModel reward_ensemble(const Model& base, const std::vector<HumanSignalDataset>& human_datasets,
                                    const std::vector<std::size_t>& extents, std::size_t adapter_rank,
                                    const FitOptions& opts) {
    if (human_datasets.empty()) throw ConfigError("reward_ensemble needs at least one human dataset", "human_datasets");
    if (extents.size() != human_datasets.size())
        throw ConfigError("reward_ensemble needs one extent per human dataset", "extents");
    const auto shape = adapted_matrix(base);
    if (adapter_rank == 0 || adapter_rank > std::min(shape.rows, shape.cols))
        throw ConfigError("adapter_rank " + std::to_string(adapter_rank) + " exceeds the adapted matrix's smaller dimension (" +
                              std::to_string(std::min(shape.rows, shape.cols)) + ")",
                          "adapter_rank");
    return detail::finish([&] {
        CentaurModel c;
        c.spec.technique = Technique::reward_ensemble;
        c.spec.adapter_rank = adapter_rank;
        c.spec.extents = extents;
        c.model = base;
        Fnv1a hh;
        for (std::size_t k = 0; k < human_datasets.size(); ++k) {
            LoraMember m;
            m.matrix = shape.segment;
            m.rows = shape.rows;
            m.cols = shape.cols;
            m.rank = adapter_rank;
            m.adapter.add_segment("B", shape.rows * adapter_rank).add_segment("A", adapter_rank * shape.cols);
            SplitMix64 rng(SplitMix64::derive(opts.descent.seed, k));
            const double s = 1.0 / std::sqrt(static_cast<double>(adapter_rank));
            for (double& a : m.adapter.view("A")) a = s * rng.normal();
            if (extents[k] > 0) {
                const auto& data = detail::require_labels(human_datasets[k], "reward_ensemble");
                if (data.n_features() != base.n_features)
                    throw DimensionError("reward_ensemble human features", base.n_features, data.n_features());
                check_loss_task(opts.loss_for(base.task), data.task);
                LoraObjective obj{&base, &m, &data, opts.loss_for(base.task), opts.l2};
                auto d = opts.descent;
                d.max_iters = extents[k];
                m.adapter = gradient_descent(obj, m.adapter, d).params;
            }
            hh.u64(human_datasets[k].hash());
            c.adapters.push_back(std::move(m));
        }
        ParamVector gamma;
        for (std::size_t k = 0; k < c.adapters.size(); ++k) {
            const auto& ad = c.adapters[k].adapter;
            gamma.add_segment("member" + std::to_string(k) + ".B", ad.segment("B").length);
            gamma.add_segment("member" + std::to_string(k) + ".A", ad.segment("A").length);
            const auto& src = ad.values();
            std::copy(src.begin(), src.end(), gamma.values().end() - static_cast<std::ptrdiff_t>(src.size()));
        }
        c.symbiotic_params = std::move(gamma);
        c.residuals.push_back({"adapter_rank", static_cast<double>(adapter_rank),
                               static_cast<double>(std::min(shape.rows, shape.cols))});
        c.provenance.base_hash = params_hash(base.params);
        c.provenance.human_data_hash = hh.digest();
        return c;
    }());
}

// ---------------------------------------------------------------------------
// preference-constrained cost

/// f1 / f2 in the combined loss: identity on labels/predictions, or the model's
/// gradient-magnitude feature-importance profile.
enum class SignalTransform { identity, gradient_importance };
/// l1 / l2: a per-record loss on predictions, or squared distance between importance profiles.
enum class PenaltyKind { logistic, squared, profile_distance };

/// Smoothing in |g| ~ sqrt(g^2 + delta^2) so the importance profile is differentiable at 0.
inline constexpr double kImportanceSmoothing = 1e-6;

/// Mean smoothed |d score / d x_j| over records, normalised to sum 1.
inline std::vector<double> feature_importance(const Model& m, std::span<const double> theta, const LabeledDataset& ds) {
    std::vector<double> mag(m.n_features, 0.0);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto g = m.input_gradient_at(theta, ds.row(i));
        for (std::size_t j = 0; j < g.size(); ++j)
            mag[j] += std::sqrt(g[j] * g[j] + kImportanceSmoothing * kImportanceSmoothing);
    }
    double total = 0.0;
    for (double v : mag) total += v;
    for (double& v : mag) v /= total;
    return mag;
}

/// mean_i l1(y_i, h(x_i)) + lambda * l2(f1(y^h), f2(h)) + (l2_reg / 2) ||w||^2.
struct ConstrainedCostObjective {
    const Model* model;
    const LabeledDataset* data;        // (x_i, y_i)
    const LabeledDataset* human;       // identity case: (x_i, y^h_i), aligned with data
    std::vector<double> target;        // feature case: normalised human importance profile
    LossKind l1 = LossKind::logistic;
    PenaltyKind l2 = PenaltyKind::logistic;
    SignalTransform f2 = SignalTransform::identity;
    double lambda = 0.0;
    double l2_reg = 0.0;

    double operator()(std::span<const double> theta, std::span<double> grad) const {
        SupervisedObjective base{model, data, l1, l2_reg};
        double v = base(theta, grad);
        if (f2 == SignalTransform::identity) {
            std::vector<double> g2(grad.size(), 0.0);
            const LossKind k = l2 == PenaltyKind::logistic ? LossKind::logistic : LossKind::squared;
            SupervisedObjective pen{model, human, k, 0.0};
            const double p = pen(theta, g2);
            v += lambda * p;
            for (std::size_t j = 0; j < grad.size(); ++j) grad[j] += lambda * g2[j];
            return v;
        }
        // Feature alignment: ||I(theta) - target||^2 with I_j = m_j / S, m_j = mean_i |g_ij|.
        const std::size_t d = model->n_features;
        const double inv_n = 1.0 / static_cast<double>(data->size());
        std::vector<double> mag(d, 0.0);
        std::vector<std::vector<double>> g_all(data->size());
        for (std::size_t i = 0; i < data->size(); ++i) {
            g_all[i] = model->input_gradient_at(theta, data->row(i));
            for (std::size_t j = 0; j < d; ++j)
                mag[j] += inv_n * std::sqrt(g_all[i][j] * g_all[i][j] + kImportanceSmoothing * kImportanceSmoothing);
        }
        double S = 0.0;
        for (double m : mag) S += m;
        std::vector<double> I(d), dI(d);
        double dist = 0.0, cross = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            I[j] = mag[j] / S;
            dI[j] = 2.0 * (I[j] - target[j]);
            dist += (I[j] - target[j]) * (I[j] - target[j]);
            cross += dI[j] * I[j];
        }
        v += lambda * dist;
        if (lambda == 0.0) return v;
        std::vector<double> dm(d);
        for (std::size_t k = 0; k < d; ++k) dm[k] = lambda * (dI[k] - cross) / S;
        std::vector<double> up(d);
        for (std::size_t i = 0; i < data->size(); ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                const double g = g_all[i][j];
                up[j] = dm[j] * inv_n * g / std::sqrt(g * g + kImportanceSmoothing * kImportanceSmoothing);
            }
            model->input_gradient_backward(theta, data->row(i), up, grad);
        }
        return v;
    }
};

/// Preference-constrained cost. Supported (l2, f1, f2):
///   (logistic | squared, identity, identity)  - y^h per record, aligned by index
///   (profile_distance, identity, gradient_importance) - d_human.importance_profile
/// Per-record terms are averaged, so lambda does not scale with dataset size.
inline CentaurModel fit_constrained_cost(const LabeledDataset& d_data, const HumanSignalDataset& d_human, double lambda,
                                         LossKind l1_kind, PenaltyKind l2_kind, SignalTransform f1_kind,
                                         SignalTransform f2_kind, const FitOptions& opts) {
    if (!(lambda >= 0.0)) throw ConfigError("lambda must be nonnegative", "lambda");
    if (d_data.empty()) throw EmptyDataError("constrained cost needs a nonempty d_data");
    if (f1_kind != SignalTransform::identity)
        throw ConfigError("f1 must be the identity on the human signal", "f1");
    const bool identity_case = f2_kind == SignalTransform::identity && l2_kind != PenaltyKind::profile_distance;
    const bool feature_case = f2_kind == SignalTransform::gradient_importance && l2_kind == PenaltyKind::profile_distance;
    if (!identity_case && !feature_case)
        throw ConfigError("unsupported (l2, f1, f2) combination for the constrained cost", "l2");
    check_loss_task(l1_kind, d_data.task);

    Model init = detail::fresh_model(opts, d_data.n_features(), d_data.task);
    ConstrainedCostObjective obj{&init, &d_data, nullptr, {}, l1_kind, l2_kind, f2_kind, lambda, opts.l2};
    LabeledDataset human_view;
    if (identity_case) {
        human_view = d_data.with_labels(detail::aligned_signals(d_data, d_human, "fit_constrained_cost"));
        if (l2_kind == PenaltyKind::logistic && d_data.task != TaskKind::binary)
            throw ConfigError("logistic penalty needs a binary task", "l2");
        obj.human = &human_view;
    } else {
        const auto& t = d_human.importance_profile;
        if (t.size() != d_data.n_features())
            throw CoverageError("feature alignment needs one human importance value per feature");
        double s = 0.0;
        for (double v : t) {
            if (!(v >= 0.0)) throw ConfigError("importance profile entries must be nonnegative", "importance_profile");
            s += v;
        }
        if (!(s > 0.0)) throw ConfigError("importance profile must have positive mass", "importance_profile");
        for (double v : t) obj.target.push_back(v / s);
    }

    CentaurModel c;
    c.spec.technique = Technique::constrained_cost;
    c.spec.lambda = lambda;
    auto res = gradient_descent(obj, init.params, opts.descent);
    c.model = std::move(init);
    c.model.params = std::move(res.params);
    c.provenance.human_data_hash = d_human.hash();
    return detail::finish(std::move(c));
}

// ---------------------------------------------------------------------------
// snapshots

namespace detail {
inline Json cap_json(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }
inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}
}  // namespace detail

/// Unbounded caps serialize as null.
inline Json spec_to_json(const CentaurSpec& s) {
    Json j;
    j["technique"] = to_string(s.technique);
    j["c1"] = detail::cap_json(s.c1);
    j["c2"] = detail::cap_json(s.c2);
    j["lambda"] = s.lambda;
    j["importance_cap"] = detail::cap_json(s.importance_cap);
    j["contribution_cap"] = detail::cap_json(s.contribution_cap);
    j["tuning_mask"] = s.tuning_mask;
    j["k"] = s.k;
    j["adapter_rank"] = s.adapter_rank;
    j["extents"] = s.extents;
    return j;
}

/// Model snapshot of h_gamma plus a provenance block and the constraint residuals.
inline Json centaur_to_json(const CentaurModel& c) {
    Json j = model_to_json(c.model);
    j["symbiotic_params"] = params_to_json(c.symbiotic_params);
    j["provenance"] = {{"technique", c.provenance.technique},
                       {"spec", spec_to_json(c.spec)},
                       {"base_hash", detail::hex64(c.provenance.base_hash)},
                       {"human_data_hash", detail::hex64(c.provenance.human_data_hash)}};
    Json res = Json::array();
    for (const auto& r : c.residuals) res.push_back({{"name", r.name}, {"value", r.value}, {"cap", detail::cap_json(r.cap)}});
    j["residuals"] = std::move(res);
    return j;
}

}  // namespace centaur
