#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "centaur/error.hpp"
#include "centaur/models.hpp"
#include "centaur/param_vector.hpp"

// Model snapshots: {"kind", "segments": [{"name","offset","length"}], "values", "metadata"}.
// Values are written with shortest round-trip formatting, so reloading is exact.

namespace centaur {

using Json = nlohmann::ordered_json;

inline Json params_to_json(const ParamVector& p) {
    Json segs = Json::array();
    for (const auto& s : p.segments()) segs.push_back({{"name", s.name}, {"offset", s.offset}, {"length", s.length}});
    return {{"segments", segs}, {"values", p.values()}};
}

inline ParamVector params_from_json(const Json& j) {
    try {
        std::vector<Segment> segs;
        for (const auto& s : j.at("segments"))
            segs.push_back({s.at("name").get<std::string>(), s.at("offset").get<std::size_t>(),
                            s.at("length").get<std::size_t>()});
        return ParamVector(j.at("values").get<std::vector<double>>(), std::move(segs));
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("malformed parameter snapshot: ") + e.what(), "segments");
    }
}

inline Json model_to_json(const Model& m) {
    Json j = {{"kind", to_string(m.kind)}};
    auto p = params_to_json(m.params);
    j["segments"] = p["segments"];
    j["values"] = p["values"];
    j["metadata"] = {{"task", to_string(m.task)}, {"n_features", m.n_features}, {"hidden_width", m.hidden_width}};
    return j;
}

inline TaskKind task_from_string(const std::string& s) {
    if (s == "binary") return TaskKind::binary;
    if (s == "regression") return TaskKind::regression;
    throw ConfigError("unknown task kind '" + s + "'", "task");
}

inline Model model_from_json(const Json& j) {
    try {
        Model m;
        const auto kind = j.at("kind").get<std::string>();
        if (kind == "linear")
            m.kind = ModelKind::linear;
        else if (kind == "mlp")
            m.kind = ModelKind::mlp;
        else
            throw ConfigError("unknown model kind '" + kind + "'", "kind");
        const auto& meta = j.at("metadata");
        m.task = task_from_string(meta.at("task").get<std::string>());
        m.n_features = meta.at("n_features").get<std::size_t>();
        m.hidden_width = meta.at("hidden_width").get<std::size_t>();
        m.params = params_from_json(j);
        const std::size_t expected = m.kind == ModelKind::linear
                                         ? m.n_features + 1
                                         : m.hidden_width * (m.n_features + 2) + 1;
        if (m.params.size() != expected) throw ConfigError("snapshot size does not match its metadata", "values");
        return m;
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("malformed model snapshot: ") + e.what(), "metadata");
    }
}

inline Json reward_to_json(const RewardModel& rm) {
    Json j = model_to_json(rm.net);
    j["kind"] = "reward";
    j["metadata"]["net_kind"] = to_string(rm.net.kind);
    j["metadata"]["encoding"] = to_string(rm.encoding);
    j["metadata"]["context_dim"] = rm.context_dim;
    j["metadata"]["output_dim"] = rm.output_dim;
    return j;
}

inline RewardModel reward_from_json(const Json& j) {
    try {
        Json net = j;
        net["kind"] = j.at("metadata").at("net_kind");
        RewardModel rm;
        rm.net = model_from_json(net);
        const auto enc = j.at("metadata").at("encoding").get<std::string>();
        rm.encoding = enc == "concat" ? RewardEncoding::concat : RewardEncoding::interaction;
        rm.context_dim = j.at("metadata").at("context_dim").get<std::size_t>();
        rm.output_dim = j.at("metadata").at("output_dim").get<std::size_t>();
        return rm;
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("malformed reward snapshot: ") + e.what(), "metadata");
    }
}

inline Json policy_to_json(const SoftmaxPolicy& p) {
    Json j = {{"kind", "policy"}};
    auto pj = params_to_json(p.params);
    j["segments"] = pj["segments"];
    j["values"] = pj["values"];
    j["metadata"] = {{"context_dim", p.context_dim}, {"actions", p.actions}, {"action_names", p.action_names}};
    return j;
}

inline SoftmaxPolicy policy_from_json(const Json& j) {
    try {
        SoftmaxPolicy p;
        p.context_dim = j.at("metadata").at("context_dim").get<std::size_t>();
        p.actions = j.at("metadata").at("actions").get<std::vector<std::vector<double>>>();
        p.action_names = j.at("metadata").at("action_names").get<std::vector<std::string>>();
        p.params = params_from_json(j);
        return p;
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("malformed policy snapshot: ") + e.what(), "metadata");
    }
}

}  // namespace centaur
