#pragma once

#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "centaur/error.hpp"
#include "centaur/evaluation.hpp"
#include "centaur/hash.hpp"
#include "centaur/serialize.hpp"

namespace centaur {

inline constexpr int kSchemaVersion = 1;

/// JSON form of an experiment plus run-level settings.
struct RunConfig {
    int schema_version = kSchemaVersion;
    std::uint64_t master_seed = 0;
    ExperimentSpec experiment;
    RlhfArmParams session;  // live-session loop settings
    bool pretty = true;     // indent report.json
};

namespace detail {

/// Reads one JSON object; every key must be consumed before finish() or it is reported as
/// unknown with its full path.
class ObjectReader {
public:
    ObjectReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where("") + " must be an object", path_.empty() ? "(root)" : path_);
    }

    bool has(const char* key) const { return j_.contains(key) && !j_.at(key).is_null(); }

    const Json* take(const char* key) {
        seen_.insert(key);
        if (!j_.contains(key)) return nullptr;
        return &j_.at(key);
    }

    template <class T>
    void get(const char* key, T& out) {
        const Json* v = take(key);
        if (!v) return;
        out = convert<T>(*v, key);
    }

    /// Numbers, or null for an unbounded cap.
    void cap(const char* key, double& out) {
        const Json* v = take(key);
        if (!v) return;
        out = v->is_null() ? std::numeric_limits<double>::infinity() : convert<double>(*v, key);
    }

    template <class E>
    void choice(const char* key, E& out, std::initializer_list<E> all) {
        const Json* v = take(key);
        if (!v) return;
        const auto s = convert<std::string>(*v, key);
        std::string opts;
        for (E e : all) {
            if (s == to_string(e)) {
                out = e;
                return;
            }
            opts += std::string(opts.empty() ? "" : ", ") + to_string(e);
        }
        throw ConfigError(where(key) + ": unknown value '" + s + "' (expected one of " + opts + ")", child(key));
    }

    std::string child(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!seen_.count(k)) throw ConfigError("unknown key '" + child(k.c_str()) + "'", child(k.c_str()));
    }

private:
    std::string where(const char* key) const {
        const auto p = *key ? child(key) : path_;
        return "config key '" + (p.empty() ? std::string("(root)") : p) + "'";
    }

    template <class T>
    T convert(const Json& v, const char* key) const {
        const char* want = "a value of the right type";
        if constexpr (std::is_same_v<T, bool>) {
            want = "a boolean";
            if (v.is_boolean()) return v.get<bool>();
        } else if constexpr (std::is_same_v<T, std::string>) {
            want = "a string";
            if (v.is_string()) return v.get<std::string>();
        } else if constexpr (std::is_floating_point_v<T>) {
            want = "a number";
            if (v.is_number()) return v.get<T>();
        } else if constexpr (std::is_integral_v<T>) {
            want = "a nonnegative integer";
            if (v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0)) return v.get<T>();
            if (std::is_signed_v<T> && v.is_number_integer()) return v.get<T>();
        } else if constexpr (std::is_same_v<T, std::vector<double>>) {
            want = "an array of numbers";
            if (v.is_array() && std::all_of(v.begin(), v.end(), [](const Json& e) { return e.is_number(); }))
                return v.get<T>();
        } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
            want = "an array of nonnegative integers";
            if (v.is_array() && std::all_of(v.begin(), v.end(), [](const Json& e) { return e.is_number_unsigned(); }))
                return v.get<T>();
        } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
            want = "an array of strings";
            if (v.is_array() && std::all_of(v.begin(), v.end(), [](const Json& e) { return e.is_string(); }))
                return v.get<T>();
        }
        throw ConfigError(where(key) + " must be " + want, child(key));
    }

    const Json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline void read_descent(const Json& j, const std::string& path, DescentOptions& d) {
    ObjectReader r(j, path);
    r.get("step_size", d.step_size);
    r.get("max_iters", d.max_iters);
    r.get("grad_tol", d.grad_tol);
    r.finish();
}

inline void read_model(const Json& j, const std::string& path, ModelSpec& m) {
    ObjectReader r(j, path);
    r.choice("kind", m.kind, {ModelKind::linear, ModelKind::mlp});
    r.get("hidden_width", m.hidden_width);
    r.get("init_scale", m.init_scale);
    r.finish();
}

inline void read_fit(const Json& j, const std::string& path, FitOptions& f) {
    ObjectReader r(j, path);
    if (const Json* m = r.take("model")) read_model(*m, r.child("model"), f.model);
    if (r.has("loss")) {
        LossKind k = LossKind::logistic;
        r.choice("loss", k, {LossKind::logistic, LossKind::squared});
        f.loss = k;
    } else {
        r.take("loss");
    }
    r.get("l2", f.l2);
    if (const Json* d = r.take("descent")) read_descent(*d, r.child("descent"), f.descent);
    r.finish();
}

inline void read_centaur(const Json& j, const std::string& path, CentaurSpec& c) {
    ObjectReader r(j, path);
    r.choice("technique", c.technique,
             {Technique::augment_raw, Technique::augment_knn, Technique::augment_model, Technique::finetune,
              Technique::ensemble_stack, Technique::reward_ensemble, Technique::constrained_cost});
    r.cap("c1", c.c1);
    r.cap("c2", c.c2);
    r.get("lambda", c.lambda);
    r.cap("importance_cap", c.importance_cap);
    r.cap("contribution_cap", c.contribution_cap);
    r.get("tuning_mask", c.tuning_mask);
    r.get("k", c.k);
    r.get("adapter_rank", c.adapter_rank);
    r.get("extents", c.extents);
    r.finish();
}

inline void read_rlhf(const Json& j, const std::string& path, RlhfArmParams& p) {
    ObjectReader r(j, path);
    r.get("n_actions", p.n_actions);
    r.get("rounds", p.rounds);
    r.get("pairs_per_round", p.pairs_per_round);
    r.get("pool_size", p.pool_size);
    r.get("n_contexts", p.n_contexts);
    r.get("beta", p.beta);
    r.get("lambda", p.lambda);
    r.cap("c1", p.c1);
    r.get("reward_iters", p.reward_iters);
    r.get("policy_iters", p.policy_iters);
    r.get("step_size", p.step_size);
    r.finish();
}

inline ArmSpec read_arm(const Json& j, const std::string& path) {
    ObjectReader r(j, path);
    ArmSpec a;
    r.get("name", a.name);
    r.choice("kind", a.kind,
             {ArmKind::machine_only, ArmKind::human_only, ArmKind::centaur, ArmKind::workload_partition,
              ArmKind::active_learning, ArmKind::rlhf});
    if (a.name.empty()) a.name = to_string(a.kind);
    if (const Json* c = r.take("centaur")) read_centaur(*c, r.child("centaur"), a.centaur);
    if (const Json* f = r.take("fit")) read_fit(*f, r.child("fit"), a.fit);
    r.get("tau", a.tau);
    r.get("budget", a.budget);
    r.get("batch", a.batch);
    r.choice("strategy", a.strategy, {QueryStrategy::uncertainty, QueryStrategy::random});
    r.get("n_human", a.n_human);
    r.get("cap_grid", a.cap_grid);
    r.get("validation_fraction", a.validation_fraction);
    if (const Json* p = r.take("rlhf")) read_rlhf(*p, r.child("rlhf"), a.rlhf);
    r.finish();
    if (a.kind == ArmKind::centaur) {
        try {
            validate_arm_centaur(a.centaur);
        } catch (const ConfigError& e) {
            const auto key = r.child("centaur") + "." + e.key();
            throw ConfigError("config key '" + key + "': " + e.what(), key);
        }
    }
    return a;
}

}  // namespace detail

/// Parses and validates a run configuration. Unknown keys, wrong types and invalid values raise
/// ConfigError whose key() is the dotted path of the offending entry.
inline RunConfig run_config_from_json(const Json& j) {
    using detail::ObjectReader;
    RunConfig c;
    ObjectReader r(j, "");
    if (!j.contains("schema_version")) throw ConfigError("missing key 'schema_version'", "schema_version");
    r.get("schema_version", c.schema_version);
    if (c.schema_version != kSchemaVersion)
        throw ConfigError("unsupported schema_version " + std::to_string(c.schema_version) + " (expected " +
                              std::to_string(kSchemaVersion) + ")",
                          "schema_version");
    r.get("master_seed", c.master_seed);
    auto& e = c.experiment;
    if (const Json* g = r.take("generator")) {
        ObjectReader gr(*g, "generator");
        gr.get("n_records", e.generator.n_records);
        gr.get("d_shared", e.generator.d_shared);
        gr.get("d_private", e.generator.d_private);
        gr.get("true_weights", e.generator.true_weights);
        gr.get("label_noise", e.generator.label_noise);
        gr.choice("task", e.generator.task, {TaskKind::binary, TaskKind::regression});
        gr.finish();
    }
    if (e.generator.true_weights.empty()) e.generator.true_weights.assign(e.generator.n_features(), 1.0);
    if (const Json* h = r.take("human")) {
        ObjectReader hr(*h, "human");
        hr.choice("view", e.human.view, {HumanView::all, HumanView::shared, HumanView::private_only});
        hr.get("anchor_strength", e.human.anchor_strength);
        hr.get("bias_anchor", e.human.bias_anchor);
        hr.get("noise_rate", e.human.noise_rate);
        hr.finish();
    }
    if (const Json* a = r.take("arms")) {
        if (!a->is_array()) throw ConfigError("config key 'arms' must be an array", "arms");
        for (std::size_t i = 0; i < a->size(); ++i)
            e.arms.push_back(detail::read_arm((*a)[i], "arms[" + std::to_string(i) + "]"));
    }
    r.get("replications", e.replications);
    r.get("holdout_fraction", e.holdout_fraction);
    r.choice("phi_p", e.phi_p, {PhiPKind::accuracy, PhiPKind::auc, PhiPKind::neg_mse});
    r.choice("phi_b", e.phi_b, {PhiBKind::agreement, PhiBKind::concordance});
    if (const Json* s = r.take("session")) detail::read_rlhf(*s, "session", c.session);
    if (const Json* o = r.take("output")) {
        ObjectReader orr(*o, "output");
        orr.get("pretty", c.pretty);
        orr.finish();
    }
    r.finish();
    e.validate();
    if (c.session.n_actions < 2) throw ConfigError("session.n_actions must be at least 2", "session.n_actions");
    return c;
}

inline RunConfig run_config_from_text(const std::string& text) {
    Json j;
    try {
        j = Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what(), "(root)");
    }
    return run_config_from_json(j);
}

/// Missing or unreadable files are configuration errors naming the path.
inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file '" + path + "'", path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline RunConfig load_run_config(const std::string& path) { return run_config_from_text(read_text_file(path)); }

/// Small complementary setting with a private-view, anchored, noisy human; used when a
/// session or service starts without an explicit configuration.
inline Json default_run_config_json() {
    return Json::parse(R"({
  "schema_version": 1,
  "master_seed": 0,
  "generator": {"n_records": 400, "d_shared": 3, "d_private": 2,
                "true_weights": [1.5, -1.5, 1.5, 1.0, -1.0], "label_noise": 0.05},
  "human": {"view": "private", "anchor_strength": 0.3, "bias_anchor": 0.5, "noise_rate": 0.1},
  "arms": [{"name": "machine_only", "kind": "machine_only"}],
  "session": {"n_actions": 4, "n_contexts": 100, "pool_size": 16, "beta": 0.1, "lambda": 1.0,
              "reward_iters": 50, "policy_iters": 50, "step_size": 0.5}
})");
}

/// Hash of the parsed configuration document (key order and whitespace of the file ignored).
inline std::uint64_t config_hash(const std::string& text) {
    const auto j = nlohmann::json::parse(text);  // unordered: keys sorted on dump
    return Fnv1a{}.text(j.dump()).digest();
}

}  // namespace centaur
