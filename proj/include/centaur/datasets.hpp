#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "centaur/constants.hpp"
#include "centaur/error.hpp"
#include "centaur/hash.hpp"
#include "centaur/numerics.hpp"
#include "centaur/rng.hpp"

namespace centaur {

enum class TaskKind { binary, regression };

inline const char* to_string(TaskKind k) { return k == TaskKind::binary ? "binary" : "regression"; }

/// Dense row-major matrix. Just enough for desk-scale data.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) noexcept { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const noexcept { return data[i * cols + j]; }

    std::span<double> row(std::size_t i) noexcept { return {data.data() + i * cols, cols}; }
    std::span<const double> row(std::size_t i) const noexcept { return {data.data() + i * cols, cols}; }

    bool operator==(const Matrix&) const = default;
};

struct LabeledDataset {
    Matrix features;
    std::vector<double> labels;
    std::vector<std::string> feature_names;
    TaskKind task = TaskKind::binary;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t n_features() const noexcept { return features.cols; }
    bool empty() const noexcept { return labels.empty(); }
    std::span<const double> row(std::size_t i) const noexcept { return features.row(i); }

    void validate() const {
        if (features.rows != labels.size())
            throw InvariantError("feature rows (" + std::to_string(features.rows) +
                                 ") differ from label count (" + std::to_string(labels.size()) + ")");
        if (feature_names.size() != features.cols)
            throw InvariantError("feature_names length differs from feature count");
        for (double v : features.data)
            if (!std::isfinite(v)) throw InvariantError("dataset holds a non-finite feature");
        for (double v : labels)
            if (!std::isfinite(v)) throw InvariantError("dataset holds a non-finite label");
    }

    LabeledDataset subset(std::span<const std::size_t> idx) const {
        LabeledDataset out;
        out.task = task;
        out.feature_names = feature_names;
        out.features = Matrix(idx.size(), features.cols);
        out.labels.reserve(idx.size());
        for (std::size_t r = 0; r < idx.size(); ++r) {
            const auto src = row(idx[r]);
            std::copy(src.begin(), src.end(), out.features.row(r).begin());
            out.labels.push_back(labels[idx[r]]);
        }
        return out;
    }

    LabeledDataset select_columns(std::span<const std::size_t> cols) const {
        LabeledDataset out;
        out.task = task;
        out.labels = labels;
        out.features = Matrix(size(), cols.size());
        for (std::size_t c : cols) {
            if (c >= n_features()) throw DimensionError("select_columns: column out of range");
            out.feature_names.push_back(feature_names[c]);
        }
        for (std::size_t r = 0; r < size(); ++r)
            for (std::size_t j = 0; j < cols.size(); ++j) out.features(r, j) = features(r, cols[j]);
        return out;
    }

    /// Copy with one extra feature column appended last.
    LabeledDataset with_column(const std::string& name, std::span<const double> column) const {
        if (column.size() != size()) throw DimensionError("with_column", size(), column.size());
        LabeledDataset out;
        out.task = task;
        out.labels = labels;
        out.feature_names = feature_names;
        out.feature_names.push_back(name);
        out.features = Matrix(size(), n_features() + 1);
        for (std::size_t r = 0; r < size(); ++r) {
            const auto src = row(r);
            auto dst = out.features.row(r);
            std::copy(src.begin(), src.end(), dst.begin());
            dst[n_features()] = column[r];
        }
        return out;
    }

    LabeledDataset with_labels(std::vector<double> new_labels) const {
        if (new_labels.size() != size()) throw DimensionError("with_labels", size(), new_labels.size());
        LabeledDataset out = *this;
        out.labels = std::move(new_labels);
        return out;
    }

    std::uint64_t hash() const {
        Fnv1a h;
        h.u64(features.rows).u64(features.cols).reals(features.data).reals(labels);
        return h.digest();
    }

    bool operator==(const LabeledDataset&) const = default;
};

/// (context, preferred output, rejected output).
struct PreferenceTriplet {
    std::vector<double> context;
    std::vector<double> preferred;
    std::vector<double> rejected;

    bool operator==(const PreferenceTriplet&) const = default;
};

enum class HumanSignalKind { labels, preferences, both, importance };

struct HumanSignalDataset {
    std::optional<LabeledDataset> labeled;
    std::vector<PreferenceTriplet> triplets;
    /// Human-stated relative importance of each machine feature (nonnegative).
    std::vector<double> importance_profile;

    HumanSignalKind kind() const {
        const bool has_labels = labeled && !labeled->empty();
        const bool has_prefs = !triplets.empty();
        if (has_labels && has_prefs) return HumanSignalKind::both;
        if (has_labels) return HumanSignalKind::labels;
        if (has_prefs) return HumanSignalKind::preferences;
        if (!importance_profile.empty()) return HumanSignalKind::importance;
        throw EmptyDataError("human signal dataset holds neither labels nor preferences");
    }

    void validate() const {
        (void)kind();
        if (labeled) labeled->validate();
        for (const auto& t : triplets) {
            if (t.preferred == t.rejected)
                throw InvariantError("preference triplet with preferred == rejected");
            if (t.context.size() != triplets.front().context.size())
                throw DimensionError("triplet context", triplets.front().context.size(), t.context.size());
        }
    }

    static HumanSignalDataset from_labels(LabeledDataset ds) {
        HumanSignalDataset h;
        h.labeled = std::move(ds);
        return h;
    }
    static HumanSignalDataset from_triplets(std::vector<PreferenceTriplet> t) {
        HumanSignalDataset h;
        h.triplets = std::move(t);
        return h;
    }

    std::uint64_t hash() const {
        Fnv1a h;
        if (labeled) h.u64(labeled->hash());
        for (const auto& t : triplets) h.reals(t.context).reals(t.preferred).reals(t.rejected);
        h.reals(importance_profile);
        return h.digest();
    }
};

/// Stand-in for human intuition: a logistic response over a private view of the features,
/// pulled toward a fixed prior (anchoring) and flipped with probability noise_rate.
///
/// Binary response: p = (1 - a) * sigmoid(w . x_visible) + a * bias_anchor, class 1 iff
/// p >= 0.5 (ties go to class 1), then flipped with probability noise_rate.
/// Regression response: p itself, mirrored to 1 - p with probability noise_rate.
///
/// Preferences use a separate utility u(x, y) = y' U x_visible + c' y over candidate
/// encodings y; the preferred candidate is the higher-utility one, swapped with
/// probability noise_rate.
struct SimulatedHuman {
    std::vector<bool> visible_mask;
    std::vector<double> weights;  // one per visible feature
    double bias_anchor = 0.5;
    double anchor_strength = 0.0;
    double noise_rate = 0.0;
    std::uint64_t seed = 0;
    TaskKind task = TaskKind::binary;
    Matrix utility_matrix;              // dim(y) x n_visible, may be empty
    std::vector<double> utility_bias;   // dim(y), may be empty

    std::size_t n_features() const noexcept { return visible_mask.size(); }
    std::size_t n_visible() const noexcept {
        return static_cast<std::size_t>(std::count(visible_mask.begin(), visible_mask.end(), true));
    }

    void validate() const {
        if (weights.size() != n_visible())
            throw InvariantError("simulated human needs one weight per visible feature");
        auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
        if (!unit(anchor_strength)) throw ConfigError("anchor_strength must lie in [0,1]", "anchor_strength");
        if (!unit(noise_rate)) throw ConfigError("noise_rate must lie in [0,1]", "noise_rate");
        if (!unit(bias_anchor)) throw ConfigError("bias_anchor must lie in [0,1]", "bias_anchor");
        if (!utility_matrix.data.empty() && utility_matrix.cols != n_visible())
            throw InvariantError("utility matrix columns must match the visible feature count");
    }

    std::vector<double> visible(std::span<const double> x) const {
        if (x.size() != n_features()) throw DimensionError("simulated human input", n_features(), x.size());
        std::vector<double> out;
        out.reserve(n_visible());
        for (std::size_t j = 0; j < x.size(); ++j)
            if (visible_mask[j]) out.push_back(x[j]);
        return out;
    }

    /// Noise-free anchored response in [0, 1].
    double response(std::span<const double> x) const {
        const auto xv = visible(x);
        const double p = sigmoid(dot(weights, xv));
        return (1.0 - anchor_strength) * p + anchor_strength * bias_anchor;
    }

    double utility(std::span<const double> x, std::span<const double> y) const {
        double u = 0.0;
        if (!utility_bias.empty()) u += dot(utility_bias, y);
        if (!utility_matrix.data.empty()) {
            if (y.size() != utility_matrix.rows)
                throw DimensionError("candidate encoding", utility_matrix.rows, y.size());
            const auto xv = visible(x);
            for (std::size_t a = 0; a < y.size(); ++a)
                if (y[a] != 0.0) u += y[a] * dot(utility_matrix.row(a), xv);
        }
        return u;
    }

    /// Independent generator for stream `id` of this human (e.g. one per record).
    SplitMix64 stream(std::uint64_t id) const noexcept { return SplitMix64(SplitMix64::derive(seed, id)); }
};

/// One human signal y^h for record x. Always consumes exactly one uniform draw.
inline double human_label(const SimulatedHuman& sim, std::span<const double> x, SplitMix64& rng) {
    const double p = sim.response(x);
    const bool flip = rng.uniform() < sim.noise_rate;
    if (sim.task == TaskKind::binary) {
        const double cls = p >= constants::kBinaryThreshold ? 1.0 : 0.0;
        return flip ? 1.0 - cls : cls;
    }
    return flip ? 1.0 - p : p;
}

/// Labels every row of `ds` with stream `stream_base + row` of the human, so a record's
/// signal does not depend on the order records are visited in.
inline std::vector<double> human_labels(const SimulatedHuman& sim, const LabeledDataset& ds,
                                        std::uint64_t stream_base = 0) {
    std::vector<double> out(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        auto rng = sim.stream(stream_base + i);
        out[i] = human_label(sim, ds.row(i), rng);
    }
    return out;
}

using CandidatePair = std::pair<std::vector<double>, std::vector<double>>;

inline PreferenceTriplet elicit_one(const SimulatedHuman& sim, std::span<const double> context,
                                    const CandidatePair& pair, SplitMix64& rng) {
    if (pair.first.empty() || pair.second.empty())
        throw InvariantError("empty candidate in preference pair");
    if (pair.first == pair.second)
        throw InvariantError("preference pair violates preferred != rejected: candidates are identical");
    const double u1 = sim.utility(context, pair.first);
    const double u2 = sim.utility(context, pair.second);
    bool first_wins = u1 >= u2;
    if (rng.uniform() < sim.noise_rate) first_wins = !first_wins;
    PreferenceTriplet t;
    t.context.assign(context.begin(), context.end());
    t.preferred = first_wins ? pair.first : pair.second;
    t.rejected = first_wins ? pair.second : pair.first;
    return t;
}

inline std::vector<PreferenceTriplet> elicit_preferences(const SimulatedHuman& sim,
                                                         const std::vector<std::vector<double>>& contexts,
                                                         const std::vector<CandidatePair>& candidates,
                                                         std::uint64_t seed) {
    if (contexts.size() != candidates.size())
        throw DimensionError("elicit_preferences: one candidate pair per context", contexts.size(),
                             candidates.size());
    SplitMix64 rng(seed);
    std::vector<PreferenceTriplet> out;
    out.reserve(contexts.size());
    for (std::size_t i = 0; i < contexts.size(); ++i)
        out.push_back(elicit_one(sim, contexts[i], candidates[i], rng));
    return out;
}

// ---------------------------------------------------------------------------
// synthetic generator

struct GeneratorSpec {
    std::size_t n_records = 1000;
    std::size_t d_shared = 2;
    std::size_t d_private = 1;
    std::vector<double> true_weights;  // d_shared + d_private
    double label_noise = 0.0;
    TaskKind task = TaskKind::binary;

    std::size_t n_features() const noexcept { return d_shared + d_private; }

    void validate() const {
        if (n_records == 0) throw ConfigError("n_records must be positive", "n_records");
        if (n_features() == 0) throw ConfigError("d_shared + d_private must be at least 1", "d_shared");
        if (true_weights.size() != n_features())
            throw ConfigError("true_weights must have d_shared + d_private entries", "true_weights");
        if (!(label_noise >= 0.0 && label_noise <= 1.0))
            throw ConfigError("label_noise must lie in [0,1]", "label_noise");
    }
};

struct ComplementaryData {
    LabeledDataset machine;  // shared columns only
    LabeledDataset full;     // shared + private columns, same rows and labels
    SimulatedHuman human;    // sees every column, weighted by the true weights
};

/// Features are iid N(0,1). Binary labels are 1[w . x > 0] flipped with probability
/// label_noise; regression labels are w . x + label_noise * N(0,1).
inline ComplementaryData generate_complementary(const GeneratorSpec& spec, std::uint64_t seed,
                                                bool require_private = true) {
    spec.validate();
    if (require_private && spec.d_private == 0)
        throw ConfigError("complementary generation needs d_private > 0", "d_private");

    const std::size_t d = spec.n_features();
    SplitMix64 feat_rng(SplitMix64::derive(seed, 0));
    SplitMix64 noise_rng(SplitMix64::derive(seed, 1));

    ComplementaryData out;
    auto& full = out.full;
    full.task = spec.task;
    full.features = Matrix(spec.n_records, d);
    for (std::size_t j = 0; j < spec.d_shared; ++j) full.feature_names.push_back("s" + std::to_string(j));
    for (std::size_t j = 0; j < spec.d_private; ++j) full.feature_names.push_back("p" + std::to_string(j));
    full.labels.resize(spec.n_records);
    for (std::size_t i = 0; i < spec.n_records; ++i) {
        auto row = full.features.row(i);
        for (double& v : row) v = feat_rng.normal();
        const double z = dot(spec.true_weights, row);
        if (spec.task == TaskKind::binary) {
            double y = z > 0.0 ? 1.0 : 0.0;
            if (noise_rng.uniform() < spec.label_noise) y = 1.0 - y;
            full.labels[i] = y;
        } else {
            full.labels[i] = z + spec.label_noise * noise_rng.normal();
        }
    }

    std::vector<std::size_t> shared(spec.d_shared);
    std::iota(shared.begin(), shared.end(), 0);
    out.machine = full.select_columns(shared);

    out.human.visible_mask.assign(d, true);
    out.human.weights = spec.true_weights;
    out.human.task = spec.task;
    out.human.seed = SplitMix64::derive(seed, 2);
    return out;
}

// ---------------------------------------------------------------------------
// splitting and scaling

/// Seeded shuffle, then part sizes floor(f_i * n) with the remaining records handed one
/// each to the parts with the largest fractional remainders (lower index wins ties).
inline std::vector<std::vector<std::size_t>> split_indices(std::size_t n, std::span<const double> fractions,
                                                           std::uint64_t seed) {
    if (fractions.empty()) throw ConfigError("split needs at least one fraction", "fractions");
    double total = 0.0;
    for (double f : fractions) {
        if (!(f > 0.0)) throw ConfigError("split fractions must be positive", "fractions");
        total += f;
    }
    if (std::abs(total - 1.0) > constants::kFractionSumTol)
        throw ConfigError("split fractions must sum to 1", "fractions");

    std::vector<std::size_t> counts(fractions.size());
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < fractions.size(); ++k) {
        const double exact = fractions[k] * static_cast<double>(n);
        counts[k] = static_cast<std::size_t>(std::floor(exact + 1e-9));
        assigned += counts[k];
        remainders.emplace_back(exact - static_cast<double>(counts[k]), k);
    }
    while (assigned > n) {  // only reachable through the rounding guard above
        for (auto& c : counts)
            if (c > 0 && assigned > n) --c, --assigned;
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; assigned < n; ++r, ++assigned) ++counts[remainders[r % remainders.size()].second];

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    SplitMix64 rng(seed);
    rng.shuffle(order);

    std::vector<std::vector<std::size_t>> parts(fractions.size());
    std::size_t cursor = 0;
    for (std::size_t k = 0; k < fractions.size(); ++k) {
        parts[k].assign(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                        order.begin() + static_cast<std::ptrdiff_t>(cursor + counts[k]));
        cursor += counts[k];
    }
    return parts;
}

inline std::vector<LabeledDataset> split(const LabeledDataset& ds, std::span<const double> fractions,
                                         std::uint64_t seed) {
    std::vector<LabeledDataset> out;
    for (const auto& idx : split_indices(ds.size(), fractions, seed)) out.push_back(ds.subset(idx));
    return out;
}

/// Per-column z-scoring; statistics come from the data it is fitted on.
struct Standardizer {
    std::vector<double> mean;
    std::vector<double> scale;

    static Standardizer fit(const Matrix& x) {
        Standardizer s;
        s.mean.assign(x.cols, 0.0);
        s.scale.assign(x.cols, 1.0);
        if (x.rows == 0) return s;
        for (std::size_t j = 0; j < x.cols; ++j) {
            double m = 0.0;
            for (std::size_t i = 0; i < x.rows; ++i) m += x(i, j);
            m /= static_cast<double>(x.rows);
            double v = 0.0;
            for (std::size_t i = 0; i < x.rows; ++i) v += (x(i, j) - m) * (x(i, j) - m);
            v /= static_cast<double>(x.rows);
            s.mean[j] = m;
            s.scale[j] = v > 0.0 ? std::sqrt(v) : 1.0;
        }
        return s;
    }

    std::vector<double> apply(std::span<const double> row) const {
        if (row.size() != mean.size()) throw DimensionError("standardize", mean.size(), row.size());
        std::vector<double> out(row.size());
        for (std::size_t j = 0; j < row.size(); ++j) out[j] = (row[j] - mean[j]) / scale[j];
        return out;
    }

    Matrix apply(const Matrix& x) const {
        Matrix out(x.rows, x.cols);
        for (std::size_t i = 0; i < x.rows; ++i) {
            const auto z = apply(x.row(i));
            std::copy(z.begin(), z.end(), out.row(i).begin());
        }
        return out;
    }

    LabeledDataset apply(const LabeledDataset& ds) const {
        LabeledDataset out = ds;
        out.features = apply(ds.features);
        return out;
    }
};

}  // namespace centaur
