#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "centaur/constants.hpp"
#include "centaur/datasets.hpp"
#include "centaur/error.hpp"
#include "centaur/numerics.hpp"
#include "centaur/param_vector.hpp"
#include "centaur/rng.hpp"

namespace centaur {

enum class ModelKind { linear, mlp };
enum class LossKind { logistic, squared };

inline const char* to_string(ModelKind k) { return k == ModelKind::linear ? "linear" : "mlp"; }
inline const char* to_string(LossKind k) { return k == LossKind::logistic ? "logistic" : "squared"; }

inline LossKind default_loss(TaskKind t) { return t == TaskKind::binary ? LossKind::logistic : LossKind::squared; }

/// Linear model (segments "weights", "intercept") or one-hidden-layer tanh network
/// (segments "W1" hidden x in row-major, "b1", "W2", "b2") with a single raw output.
/// Binary models read the raw output as a logit.
class Model {
public:
    ModelKind kind = ModelKind::linear;
    TaskKind task = TaskKind::binary;
    std::size_t n_features = 0;
    std::size_t hidden_width = 0;
    ParamVector params;

    static Model linear(std::size_t n_features, TaskKind task) {
        Model m;
        m.kind = ModelKind::linear;
        m.task = task;
        m.n_features = n_features;
        m.params.add_segment("weights", n_features).add_segment("intercept", 1);
        return m;
    }

    /// Weights drawn N(0, init_scale^2 / fan_in) from `seed`; biases zero.
    static Model mlp(std::size_t n_features, std::size_t hidden, TaskKind task, std::uint64_t seed,
                     double init_scale = 1.0) {
        if (hidden == 0) throw ConfigError("hidden_width must be positive", "hidden_width");
        if (n_features == 0) throw ConfigError("an MLP needs at least one input feature", "n_features");
        Model m;
        m.kind = ModelKind::mlp;
        m.task = task;
        m.n_features = n_features;
        m.hidden_width = hidden;
        m.params.add_segment("W1", hidden * n_features)
            .add_segment("b1", hidden)
            .add_segment("W2", hidden)
            .add_segment("b2", 1);
        SplitMix64 rng(seed);
        const double s1 = init_scale / std::sqrt(static_cast<double>(n_features));
        const double s2 = init_scale / std::sqrt(static_cast<double>(hidden));
        for (double& w : m.params.view("W1")) w = s1 * rng.normal();
        for (double& w : m.params.view("W2")) w = s2 * rng.normal();
        return m;
    }

    /// Segments whose values count as weights (L2-penalized), as opposed to biases.
    std::vector<std::string> weight_segments() const {
        if (kind == ModelKind::linear) return {"weights"};
        return {"W1", "W2"};
    }

    void check_input(std::span<const double> x) const {
        if (x.size() != n_features) throw DimensionError("model input", n_features, x.size());
    }

    double score_at(std::span<const double> theta, std::span<const double> x) const {
        check_input(x);
        if (kind == ModelKind::linear) {
            double z = theta[n_features];
            for (std::size_t j = 0; j < n_features; ++j) z += theta[j] * x[j];
            return z;
        }
        const auto L = layout();
        double z = theta[L.b2];
        for (std::size_t k = 0; k < hidden_width; ++k) {
            double a = theta[L.b1 + k];
            const double* w = theta.data() + L.w1 + k * n_features;
            for (std::size_t j = 0; j < n_features; ++j) a += w[j] * x[j];
            z += theta[L.w2 + k] * std::tanh(a);
        }
        return z;
    }

    /// grad += upstream * d score / d theta.
    void backward(std::span<const double> theta, std::span<const double> x, double upstream,
                  std::span<double> grad) const {
        check_input(x);
        if (kind == ModelKind::linear) {
            for (std::size_t j = 0; j < n_features; ++j) grad[j] += upstream * x[j];
            grad[n_features] += upstream;
            return;
        }
        const auto L = layout();
        grad[L.b2] += upstream;
        for (std::size_t k = 0; k < hidden_width; ++k) {
            double a = theta[L.b1 + k];
            const double* w = theta.data() + L.w1 + k * n_features;
            for (std::size_t j = 0; j < n_features; ++j) a += w[j] * x[j];
            const double t = std::tanh(a);
            grad[L.w2 + k] += upstream * t;
            const double da = upstream * theta[L.w2 + k] * (1.0 - t * t);
            grad[L.b1 + k] += da;
            double* gw = grad.data() + L.w1 + k * n_features;
            for (std::size_t j = 0; j < n_features; ++j) gw[j] += da * x[j];
        }
    }

    /// d score / d x.
    std::vector<double> input_gradient_at(std::span<const double> theta, std::span<const double> x) const {
        check_input(x);
        std::vector<double> g(n_features, 0.0);
        if (kind == ModelKind::linear) {
            std::copy(theta.begin(), theta.begin() + static_cast<std::ptrdiff_t>(n_features), g.begin());
            return g;
        }
        const auto L = layout();
        for (std::size_t k = 0; k < hidden_width; ++k) {
            double a = theta[L.b1 + k];
            const double* w = theta.data() + L.w1 + k * n_features;
            for (std::size_t j = 0; j < n_features; ++j) a += w[j] * x[j];
            const double t = std::tanh(a);
            const double c = theta[L.w2 + k] * (1.0 - t * t);
            for (std::size_t j = 0; j < n_features; ++j) g[j] += c * w[j];
        }
        return g;
    }

    /// grad += d/dtheta of sum_j upstream_j * (d score / d x_j).
    void input_gradient_backward(std::span<const double> theta, std::span<const double> x,
                                 std::span<const double> upstream, std::span<double> grad) const {
        check_input(x);
        if (kind == ModelKind::linear) {
            for (std::size_t j = 0; j < n_features; ++j) grad[j] += upstream[j];
            return;
        }
        const auto L = layout();
        for (std::size_t k = 0; k < hidden_width; ++k) {
            const double* w = theta.data() + L.w1 + k * n_features;
            double a = theta[L.b1 + k];
            double q = 0.0;
            for (std::size_t j = 0; j < n_features; ++j) {
                a += w[j] * x[j];
                q += upstream[j] * w[j];
            }
            const double t = std::tanh(a);
            const double s = 1.0 - t * t;
            const double w2 = theta[L.w2 + k];
            const double dsa = -2.0 * t * s;  // d s / d a
            grad[L.w2 + k] += q * s;
            grad[L.b1 + k] += q * w2 * dsa;
            double* gw = grad.data() + L.w1 + k * n_features;
            for (std::size_t j = 0; j < n_features; ++j) gw[j] += upstream[j] * w2 * s + q * w2 * dsa * x[j];
        }
    }

    double score(std::span<const double> x) const { return score_at(params.values(), x); }

    /// Probability of class 1 for binary models, the raw output for regression.
    double predict(std::span<const double> x) const {
        const double z = score(x);
        return task == TaskKind::binary ? sigmoid(z) : z;
    }

    double predict_class(std::span<const double> x) const {
        return predict(x) >= constants::kBinaryThreshold ? 1.0 : 0.0;
    }

    std::vector<double> predict_all(const LabeledDataset& ds) const {
        std::vector<double> out(ds.size());
        for (std::size_t i = 0; i < ds.size(); ++i) out[i] = predict(ds.row(i));
        return out;
    }

    struct Layout {
        std::size_t w1, b1, w2, b2;
    };
    Layout layout() const {
        const std::size_t w1 = 0, b1 = hidden_width * n_features, w2 = b1 + hidden_width;
        return {w1, b1, w2, w2 + hidden_width};
    }

    bool operator==(const Model&) const = default;
};

/// Mean per-record loss over `ds` plus (l2 / 2) * ||weights||^2, with analytic gradient.
/// Logistic loss accepts soft targets in [0, 1].
struct SupervisedObjective {
    const Model* model;
    const LabeledDataset* data;
    LossKind loss = LossKind::logistic;
    double l2 = 0.0;

    static double loss_value(LossKind loss, double z, double y) {
        return loss == LossKind::logistic ? softplus(z) - y * z : 0.5 * (z - y) * (z - y);
    }
    static double loss_slope(LossKind loss, double z, double y) {
        return loss == LossKind::logistic ? sigmoid(z) - y : z - y;
    }

    double operator()(std::span<const double> theta, std::span<double> grad) const {
        std::fill(grad.begin(), grad.end(), 0.0);
        const double inv_n = 1.0 / static_cast<double>(data->size());
        double total = 0.0;
        for (std::size_t i = 0; i < data->size(); ++i) {
            const auto x = data->row(i);
            const double z = model->score_at(theta, x);
            const double y = data->labels[i];
            double slope;
            if (loss == LossKind::logistic) {
                // one exp serves both softplus(z) and sigmoid(z)
                const double e = std::exp(-std::abs(z));
                total += std::max(z, 0.0) + std::log1p(e) - y * z;
                slope = (z >= 0.0 ? 1.0 / (1.0 + e) : e / (1.0 + e)) - y;
            } else {
                total += 0.5 * (z - y) * (z - y);
                slope = z - y;
            }
            model->backward(theta, x, slope * inv_n, grad);
        }
        double value = total * inv_n;
        if (l2 > 0.0) {
            for (const auto& name : model->weight_segments()) {
                const auto& s = model->params.segment(name);
                for (std::size_t j = s.offset; j < s.offset + s.length; ++j) {
                    value += 0.5 * l2 * theta[j] * theta[j];
                    grad[j] += l2 * theta[j];
                }
            }
        }
        return value;
    }
};

inline void check_loss_task(LossKind loss, TaskKind task) {
    if (loss == LossKind::logistic && task != TaskKind::binary)
        throw ConfigError("logistic loss needs a binary task", "loss");
    if (loss == LossKind::squared && task != TaskKind::regression)
        throw ConfigError("squared loss needs a regression task", "loss");
}

struct ModelSpec {
    ModelKind kind = ModelKind::linear;
    std::size_t hidden_width = 8;
    double init_scale = 1.0;
};

inline Model make_model(const ModelSpec& spec, std::size_t n_features, TaskKind task, std::uint64_t seed) {
    return spec.kind == ModelKind::linear ? Model::linear(n_features, task)
                                          : Model::mlp(n_features, spec.hidden_width, task, seed, spec.init_scale);
}

/// Trains `init` on `ds` from its current parameters (warm start) under an optional projector.
template <Projector P = IdentityProjector>
Model fit_from(Model init, const LabeledDataset& ds, LossKind loss, double l2, const DescentOptions& opts,
               const P& project = {}) {
    if (ds.empty()) throw EmptyDataError("cannot fit a model on an empty dataset");
    if (ds.n_features() != init.n_features) throw DimensionError("training data", init.n_features, ds.n_features());
    if (l2 < 0.0) throw ConfigError("l2_reg must be nonnegative", "l2_reg");
    check_loss_task(loss, init.task);
    SupervisedObjective obj{&init, &ds, loss, l2};
    auto res = projected_descent(obj, init.params, project, opts);
    init.params = std::move(res.params);
    return init;
}

/// Linear models start at zero, MLPs at a seeded random draw (opts.seed).
inline Model fit_supervised(const ModelSpec& spec, const LabeledDataset& ds, LossKind loss, double l2,
                            const DescentOptions& opts) {
    if (ds.empty()) throw EmptyDataError("cannot fit a model on an empty dataset");
    return fit_from(make_model(spec, ds.n_features(), ds.task, opts.seed), ds, loss, l2, opts);
}

inline double training_loss(const Model& m, const LabeledDataset& ds, LossKind loss, double l2 = 0.0) {
    SupervisedObjective obj{&m, &ds, loss, l2};
    std::vector<double> g(m.params.size());
    return obj(m.params.values(), g);
}

// ---------------------------------------------------------------------------
// k-nearest-neighbour human feedback

/// Reference records are z-scored with their own statistics; queries use the same scaling.
class KnnIndex {
public:
    KnnIndex(const LabeledDataset& reference, std::size_t k) : k_(k), task_(reference.task) {
        if (reference.empty()) throw EmptyDataError("k-NN reference set is empty");
        if (k == 0) throw ConfigError("k must be positive", "k");
        if (k > reference.size())
            throw ConfigError("k (" + std::to_string(k) + ") exceeds the human reference size (" +
                                  std::to_string(reference.size()) + ")",
                              "k");
        scaler_ = Standardizer::fit(reference.features);
        points_ = scaler_.apply(reference.features);
        signals_ = reference.labels;
    }

    std::size_t k() const noexcept { return k_; }
    std::size_t size() const noexcept { return signals_.size(); }

    /// Indices of the k nearest references, nearest first; equal distances keep index order.
    std::vector<std::size_t> neighbours(std::span<const double> x) const {
        if (x.size() != points_.cols) throw DimensionError("k-NN query", points_.cols, x.size());
        const auto q = scaler_.apply(x);
        std::vector<std::pair<double, std::size_t>> dist(size());
        for (std::size_t i = 0; i < size(); ++i) {
            double d = 0.0;
            const auto p = points_.row(i);
            for (std::size_t j = 0; j < q.size(); ++j) d += (p[j] - q[j]) * (p[j] - q[j]);
            dist[i] = {d, i};
        }
        std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k_), dist.end());
        std::vector<std::size_t> out(k_);
        for (std::size_t i = 0; i < k_; ++i) out[i] = dist[i].second;
        return out;
    }

    /// Majority vote (ties go to class 1) for binary signals, mean for regression.
    double feedback(std::span<const double> x) const {
        const auto nn = neighbours(x);
        double sum = 0.0;
        for (auto i : nn) sum += signals_[i];
        if (task_ == TaskKind::regression) return sum / static_cast<double>(nn.size());
        return 2.0 * sum >= static_cast<double>(nn.size()) ? 1.0 : 0.0;
    }

private:
    std::size_t k_;
    TaskKind task_;
    Standardizer scaler_;
    Matrix points_;
    std::vector<double> signals_;
};

inline double knn_feedback(const KnnIndex& index, std::span<const double> x) { return index.feedback(x); }

// ---------------------------------------------------------------------------
// reward model

/// How a (context, candidate) pair is presented to the reward network.
/// concat: [x, y]. interaction: [x, y, y (x) x] so a linear scorer can rank candidates
/// differently in different contexts.
enum class RewardEncoding { concat, interaction };

inline const char* to_string(RewardEncoding e) { return e == RewardEncoding::concat ? "concat" : "interaction"; }

inline std::size_t encoded_size(RewardEncoding e, std::size_t dx, std::size_t dy) {
    return e == RewardEncoding::concat ? dx + dy : dx + dy + dx * dy;
}

inline std::vector<double> encode_pair(RewardEncoding e, std::span<const double> x, std::span<const double> y) {
    std::vector<double> out;
    out.reserve(encoded_size(e, x.size(), y.size()));
    out.insert(out.end(), x.begin(), x.end());
    out.insert(out.end(), y.begin(), y.end());
    if (e == RewardEncoding::interaction)
        for (double ya : y)
            for (double xj : x) out.push_back(ya * xj);
    return out;
}

struct RewardModel {
    Model net;  // regression-kind scorer over the encoded pair
    RewardEncoding encoding = RewardEncoding::concat;
    std::size_t context_dim = 0;
    std::size_t output_dim = 0;

    static RewardModel create(const ModelSpec& spec, RewardEncoding enc, std::size_t dx, std::size_t dy,
                              std::uint64_t seed) {
        RewardModel rm;
        rm.encoding = enc;
        rm.context_dim = dx;
        rm.output_dim = dy;
        rm.net = make_model(spec, encoded_size(enc, dx, dy), TaskKind::regression, seed);
        return rm;
    }

    std::vector<double> encode(std::span<const double> x, std::span<const double> y) const {
        if (x.size() != context_dim) throw DimensionError("reward context", context_dim, x.size());
        if (y.size() != output_dim) throw DimensionError("reward candidate", output_dim, y.size());
        return encode_pair(encoding, x, y);
    }

    double score_at(std::span<const double> theta, std::span<const double> x, std::span<const double> y) const {
        return net.score_at(theta, encode(x, y));
    }
    double score(std::span<const double> x, std::span<const double> y) const {
        return score_at(net.params.values(), x, y);
    }

    bool operator==(const RewardModel&) const = default;
};

inline double reward_score(const RewardModel& rm, std::span<const double> x, std::span<const double> y) {
    const double r = rm.score(x, y);
    if (!std::isfinite(r)) throw InvariantError("reward model produced a non-finite score");
    return r;
}

// ---------------------------------------------------------------------------
// softmax policy

/// pi(a | x) = softmax_a(W_a . x + b_a) over a fixed discrete action set.
struct SoftmaxPolicy {
    std::size_t context_dim = 0;
    std::vector<std::vector<double>> actions;  // candidate encodings
    std::vector<std::string> action_names;
    ParamVector params;                        // "W" (m x d, row-major), "b" (m)

    static SoftmaxPolicy zeros(std::size_t context_dim, std::vector<std::vector<double>> actions,
                               std::vector<std::string> names = {}) {
        if (actions.empty()) throw ConfigError("policy needs a nonempty action set", "actions");
        SoftmaxPolicy p;
        p.context_dim = context_dim;
        if (names.empty())
            for (std::size_t a = 0; a < actions.size(); ++a) names.push_back("action " + std::to_string(a));
        p.actions = std::move(actions);
        p.action_names = std::move(names);
        if (context_dim > 0) p.params.add_segment("W", p.actions.size() * context_dim);
        p.params.add_segment("b", p.actions.size());
        return p;
    }

    /// One-hot encodings e_0 .. e_{m-1}.
    static std::vector<std::vector<double>> one_hot_actions(std::size_t m) {
        std::vector<std::vector<double>> out(m, std::vector<double>(m, 0.0));
        for (std::size_t a = 0; a < m; ++a) out[a][a] = 1.0;
        return out;
    }

    std::size_t n_actions() const noexcept { return actions.size(); }

    std::vector<double> scores_at(std::span<const double> theta, std::span<const double> x) const {
        if (x.size() != context_dim) throw DimensionError("policy context", context_dim, x.size());
        const std::size_t m = actions.size();
        const std::size_t boff = m * context_dim;
        std::vector<double> s(m);
        for (std::size_t a = 0; a < m; ++a) {
            double v = theta[boff + a];
            for (std::size_t j = 0; j < context_dim; ++j) v += theta[a * context_dim + j] * x[j];
            s[a] = v;
        }
        return s;
    }

    std::vector<double> distribution_at(std::span<const double> theta, std::span<const double> x) const {
        return softmax(scores_at(theta, x));
    }
    std::vector<double> distribution(std::span<const double> x) const { return distribution_at(params.values(), x); }

    /// grad += d/dtheta of sum_a upstream_a * score_a.
    void backward(std::span<const double> x, std::span<const double> upstream, std::span<double> grad) const {
        const std::size_t m = actions.size();
        const std::size_t boff = m * context_dim;
        for (std::size_t a = 0; a < m; ++a) {
            grad[boff + a] += upstream[a];
            for (std::size_t j = 0; j < context_dim; ++j) grad[a * context_dim + j] += upstream[a] * x[j];
        }
    }

    bool same_actions(const SoftmaxPolicy& other) const { return actions == other.actions; }

    bool operator==(const SoftmaxPolicy&) const = default;
};

inline std::vector<double> policy_distribution(const SoftmaxPolicy& p, std::span<const double> x) {
    if (p.actions.empty()) throw ConfigError("policy has an empty action set", "actions");
    return p.distribution(x);
}

}  // namespace centaur
