#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "centaur/centaur_rewards.hpp"
#include "centaur/config.hpp"
#include "centaur/error.hpp"
#include "centaur/evaluation.hpp"
#include "centaur/serialize.hpp"

namespace centaur {

class NotFoundError : public Error {
public:
    using Error::Error;
};

/// A mutation that does not match the session's current state (stale or missing query).
class ConflictError : public Error {
public:
    using Error::Error;
};

struct MetricsPoint {
    std::size_t round = 0;
    double phi_p = 0.0;             // policy argmax matches the simulated utility argmax, held-out contexts
    std::optional<double> phi_b;    // agreement with the recorded choices; null before the first one
    double concordance = 0.0;       // Kendall concordance with the simulated utilities, held-out contexts
    double mean_kl = 0.0;           // to the reference policy over the loop contexts
    double mean_reward = 0.0;
};

inline Json metrics_to_json(const MetricsPoint& m) {
    return {{"round", m.round},
            {"phi_p", m.phi_p},
            {"phi_b", m.phi_b ? Json(*m.phi_b) : Json(nullptr)},
            {"concordance", m.concordance},
            {"mean_kl", m.mean_kl},
            {"mean_reward", m.mean_reward}};
}

struct FeedbackEvent {
    std::string query_id;
    Choice choice = Choice::skip;
    std::string received_at;
};

inline std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// One live preference session. The simulated human only supplies the utilities used for
/// phi_p and concordance; choices come from whoever answers the queries.
class Session {
public:
    Session(std::string id, Json config_json)
        : id_(std::move(id)), config_json_(std::move(config_json)), config_(run_config_from_json(config_json_)),
          data_(make_replication(config_.experiment, config_.master_seed, 0)),
          setup_(rlhf_setup(config_.session, data_)), state_(setup_.init, setup_.config) {
        baseline_ = measure();
    }

    const std::string& id() const noexcept { return id_; }
    const Json& config_json() const noexcept { return config_json_; }
    const RlhfSetup& setup() const noexcept { return setup_; }
    const RlhfState& state() const noexcept { return state_; }
    const std::vector<FeedbackEvent>& history() const noexcept { return history_; }
    const std::vector<MetricsPoint>& series() const noexcept { return series_; }
    const MetricsPoint& baseline() const noexcept { return baseline_; }
    bool has_pending() const noexcept { return pending_.has_value(); }
    const std::optional<Query>& pending() const noexcept { return pending_; }
    std::shared_mutex& mutex() const noexcept { return mutex_; }

    /// The pending query, proposing one first if none is pending.
    Json next_query() {
        if (!pending_) {
            pending_ = state_.propose();
            pending_id_ = "q" + hex64(SplitMix64::derive(setup_.config.seed ^ 0x7175657279ULL, n_queries_++));
        }
        return query_json();
    }

    const std::string& pending_id() const noexcept { return pending_id_; }

    MetricsPoint submit(const std::string& query_id, Choice choice, std::string received_at) {
        if (!pending_) throw ConflictError("no query is pending for session " + id_);
        if (query_id != pending_id_)
            throw ConflictError("query '" + query_id + "' is not the pending query '" + pending_id_ + "'");
        state_.record(*pending_, choice);
        pending_.reset();
        history_.push_back({query_id, choice, std::move(received_at)});
        const auto t = state_.refit();
        auto m = measure();
        m.mean_reward = t.mean_reward;
        series_.push_back(m);
        return m;
    }

    /// Only present keys change; every value must be a nonnegative number.
    Json update_constraints(const Json& body) {
        if (!body.is_object()) throw ConfigError("constraints body must be an object", "(root)");
        for (const auto& [k, v] : body.items()) {
            if (k == "importance_cap")
                throw ConfigError("importance_cap does not apply to preference-loop sessions", k);
            if (k != "lambda" && k != "beta" && k != "c1") throw ConfigError("unknown constraint '" + k + "'", k);
            if (!(v.is_number() || (k == "c1" && v.is_null()))) throw ConfigError(k + " must be a number", k);
            if (v.is_number() && !(v.get<double>() >= 0.0)) throw ConfigError(k + " must be nonnegative", k);
        }
        auto next = state_;  // apply all or nothing
        for (const auto& [k, v] : body.items()) {
            const double x = v.is_null() ? kUnbounded : v.get<double>();
            if (k == "lambda") next.set_lambda(x);
            if (k == "beta") next.set_beta(x);
            if (k == "c1") next.set_c1(x);
        }
        state_ = std::move(next);
        return constraints_json();
    }

    Json constraints_json() const {
        const auto& c = state_.config();
        return {{"lambda", c.lambda}, {"beta", c.beta}, {"c1", std::isfinite(c.c1) ? Json(c.c1) : Json(nullptr)}};
    }

    Json metrics_json() const {
        Json series = Json::array();
        for (const auto& m : series_) series.push_back(metrics_to_json(m));
        return {{"session_id", id_}, {"baseline", metrics_to_json(baseline_)}, {"series", series}};
    }

    Json snapshot() const {
        return {{"session_id", id_},
                {"round", state_.round()},
                {"constraints", constraints_json()},
                {"n_triplets", state_.triplets().size()},
                {"policy", policy_to_json(state_.policy())},
                {"reference", policy_to_json(state_.reference())},
                {"reward", reward_to_json(state_.reward())}};
    }

    /// Hash of everything observable about the session.
    std::uint64_t state_hash() const {
        Fnv1a h;
        h.text(snapshot().dump()).text(metrics_json().dump()).text(pending_id_);
        for (const auto& e : history_) h.text(e.query_id).text(to_string(e.choice));
        return h.digest();
    }

private:
    MetricsPoint measure() const {
        const auto pm = policy_metrics(state_.policy(), setup_.init, setup_.sim, data_.test_full);
        MetricsPoint m;
        m.round = state_.round();
        m.phi_p = pm.phi_p;
        m.concordance = pm.phi_b;
        m.phi_b = state_.preference_agreement();
        const PolicyLoss loss(state_.objective(), state_.policy());
        m.mean_kl = loss.mean_kl(state_.policy().params.values());
        m.mean_reward = loss.mean_reward(state_.policy().params.values());
        return m;
    }

    Json query_json() const {
        const auto& q = *pending_;
        const auto& names = data_.train_full.feature_names;
        Json features = Json::array();
        for (std::size_t j = 0; j < q.context.size(); ++j)
            features.push_back({{"name", j < names.size() ? names[j] : "x" + std::to_string(j)}, {"value", q.context[j]}});
        const auto& p = state_.policy();
        auto cand = [&](std::size_t a) {
            return Json{{"action", a}, {"label", p.action_names[a]}, {"encoding", p.actions[a]}};
        };
        return {{"query_id", pending_id_},
                {"context", {{"index", q.context_index}, {"features", features}}},
                {"candidates", Json::array({cand(q.first), cand(q.second)})},
                {"gap", q.gap}};
    }

    std::string id_;
    Json config_json_;
    RunConfig config_;
    ReplicationData data_;
    RlhfSetup setup_;
    RlhfState state_;
    std::optional<Query> pending_;
    std::string pending_id_;
    std::uint64_t n_queries_ = 0;
    std::vector<FeedbackEvent> history_;
    MetricsPoint baseline_;
    std::vector<MetricsPoint> series_;
    mutable std::shared_mutex mutex_;
};

/// Owns every session. Mutations of one session hold its exclusive lock, reads a shared lock;
/// distinct sessions never share a lock. With a log directory, every mutation is appended to
/// <dir>/<id>.jsonl and restore() rebuilds sessions by replaying those files.
class SessionManager {
public:
    explicit SessionManager(Json default_config = Json::object(), std::optional<std::filesystem::path> log_dir = {})
        : default_config_(std::move(default_config)), log_dir_(std::move(log_dir)) {
        if (log_dir_) std::filesystem::create_directories(*log_dir_);
    }

    /// Empty or null bodies use the default configuration.
    std::string create(const Json& config) {
        const Json& cfg = (config.is_null() || (config.is_object() && config.empty())) ? default_config_ : config;
        std::string id;
        {
            std::unique_lock lk(map_mutex_);
            do id = "s" + hex64(SplitMix64::derive(0x5e5510ULL, next_id_++));
            while (sessions_.count(id));
        }
        auto s = std::make_shared<Session>(id, cfg);
        log(id, {{"event", "create"}, {"config", cfg}});
        std::unique_lock lk(map_mutex_);
        sessions_[id] = std::move(s);
        return id;
    }

    Json baseline(const std::string& id) const {
        auto s = get(id);
        std::shared_lock lk(s->mutex());
        return metrics_to_json(s->baseline());
    }

    Json next_query(const std::string& id) {
        auto s = get(id);
        std::unique_lock lk(s->mutex());
        const bool fresh = !s->has_pending();
        auto q = s->next_query();
        if (fresh) log(id, {{"event", "query"}, {"query_id", q["query_id"]}});
        return q;
    }

    Json submit(const std::string& id, const std::string& query_id, Choice choice) {
        auto s = get(id);
        std::unique_lock lk(s->mutex());
        const auto at = utc_now();
        const auto m = s->submit(query_id, choice, at);
        log(id, {{"event", "feedback"}, {"query_id", query_id}, {"choice", to_string(choice)}, {"received_at", at}});
        return metrics_to_json(m);
    }

    Json update_constraints(const std::string& id, const Json& body) {
        auto s = get(id);
        std::unique_lock lk(s->mutex());
        auto out = s->update_constraints(body);
        log(id, {{"event", "constraints"}, {"values", body}});
        return out;
    }

    Json metrics(const std::string& id) const {
        auto s = get(id);
        std::shared_lock lk(s->mutex());
        return s->metrics_json();
    }

    Json snapshot(const std::string& id) const {
        auto s = get(id);
        std::shared_lock lk(s->mutex());
        return s->snapshot();
    }

    std::uint64_t state_hash(const std::string& id) const {
        auto s = get(id);
        std::shared_lock lk(s->mutex());
        return s->state_hash();
    }

    std::size_t history_size(const std::string& id) const {
        auto s = get(id);
        std::shared_lock lk(s->mutex());
        return s->history().size();
    }

    std::shared_ptr<Session> get(const std::string& id) const {
        std::shared_lock lk(map_mutex_);
        auto it = sessions_.find(id);
        if (it == sessions_.end()) throw NotFoundError("unknown session '" + id + "'");
        return it->second;
    }

    std::vector<std::string> ids() const {
        std::shared_lock lk(map_mutex_);
        std::vector<std::string> out;
        for (const auto& [k, v] : sessions_) out.push_back(k);
        return out;
    }

    /// Rebuilds one session from its event log.
    std::string replay(const std::filesystem::path& file) {
        std::ifstream in(file);
        if (!in) throw ConfigError("cannot read event log '" + file.string() + "'", file.string());
        std::string line, id = file.stem().string();
        std::shared_ptr<Session> s;
        std::size_t n = 0;
        while (std::getline(in, line)) {
            ++n;
            if (line.empty()) continue;
            Json e;
            try {
                e = Json::parse(line);
            } catch (const Json::parse_error&) {
                throw ParseError("malformed event in " + file.string(), n);
            }
            const auto kind = e.at("event").get<std::string>();
            if (kind == "create") {
                s = std::make_shared<Session>(id, e.at("config"));
                continue;
            }
            if (!s) throw ParseError("event before session creation in " + file.string(), n);
            if (kind == "query") {
                const auto q = s->next_query();
                if (q["query_id"] != e.at("query_id"))
                    throw InvariantError("replayed query id differs from the logged one at line " + std::to_string(n));
            } else if (kind == "feedback") {
                s->submit(e.at("query_id").get<std::string>(), choice_from_string(e.at("choice").get<std::string>()),
                          e.value("received_at", std::string{}));
            } else if (kind == "constraints") {
                s->update_constraints(e.at("values"));
            } else {
                throw ParseError("unknown event '" + kind + "'", n);
            }
        }
        if (!s) throw ParseError("event log has no create event: " + file.string(), n);
        std::unique_lock lk(map_mutex_);
        sessions_[id] = std::move(s);
        ++next_id_;
        return id;
    }

    /// Replays every log in the log directory; returns the restored ids.
    std::vector<std::string> restore() {
        std::vector<std::string> out;
        if (!log_dir_) return out;
        std::vector<std::filesystem::path> files;
        for (const auto& f : std::filesystem::directory_iterator(*log_dir_))
            if (f.path().extension() == ".jsonl") files.push_back(f.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) out.push_back(replay(f));
        return out;
    }

private:
    void log(const std::string& id, const Json& event) {
        if (!log_dir_) return;
        std::ofstream out(*log_dir_ / (id + ".jsonl"), std::ios::app);
        out << event.dump() << '\n';
        if (!out) throw Error("cannot append to the event log of session " + id);
    }

    Json default_config_;
    std::optional<std::filesystem::path> log_dir_;
    mutable std::shared_mutex map_mutex_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::uint64_t next_id_ = 0;
};

}  // namespace centaur
