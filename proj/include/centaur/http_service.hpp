#pragma once

#include <functional>
#include <iostream>
#include <mutex>
#include <string>

#include <httplib.h>

#include "centaur/service.hpp"

namespace centaur {

namespace detail {

inline void send_json(httplib::Response& res, int status, const Json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

inline Json error_body(const std::string& msg, const std::string& key = {}) {
    Json j{{"error", msg}};
    if (!key.empty()) j["key"] = key;
    return j;
}

/// Maps toolkit errors onto status codes: unknown session 404, stale query 409, invalid input
/// 422, anything else 500.
inline void guarded(httplib::Response& res, const std::function<void()>& body) {
    try {
        body();
    } catch (const NotFoundError& e) {
        send_json(res, 404, error_body(e.what()));
    } catch (const ConflictError& e) {
        send_json(res, 409, error_body(e.what()));
    } catch (const ConfigError& e) {
        send_json(res, 422, error_body(e.what(), e.key()));
    } catch (const Json::exception& e) {
        send_json(res, 422, error_body(std::string("malformed request body: ") + e.what()));
    } catch (const std::exception& e) {
        send_json(res, 500, error_body(e.what()));
    }
}

inline Json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return Json(nullptr);
    try {
        return Json::parse(req.body);
    } catch (const Json::parse_error& e) {
        throw ConfigError(std::string("request body is not valid JSON: ") + e.what(), "(root)");
    }
}

}  // namespace detail

/// Registers the session endpoints on `server`. Every request is logged as one line to `log`
/// when it is non-null.
inline void install_routes(httplib::Server& server, SessionManager& sessions, std::ostream* log = &std::cerr) {
    using detail::guarded;
    using detail::send_json;

    server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
        send_json(res, 200, {{"status", "ok"}});
    });

    server.Post("/sessions", [&sessions](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const auto id = sessions.create(detail::parse_body(req));
            send_json(res, 201, {{"id", id}, {"baseline", sessions.baseline(id)}});
        });
    });

    server.Get(R"(/sessions/([^/]+)/query)", [&sessions](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { send_json(res, 200, sessions.next_query(req.matches[1])); });
    });

    server.Post(R"(/sessions/([^/]+)/feedback)", [&sessions](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const std::string id = req.matches[1];
            (void)sessions.get(id);  // unknown session wins over a bad body
            const auto body = detail::parse_body(req);
            if (!body.is_object() || !body.contains("query_id") || !body.contains("choice"))
                throw ConfigError("feedback needs query_id and choice", "(root)");
            const auto qid = body.at("query_id").get<std::string>();
            Choice c;
            try {
                c = choice_from_string(body.at("choice").get<std::string>());
            } catch (const ConfigError& e) {
                throw ConfigError(e.what(), "choice");
            }
            send_json(res, 200, sessions.submit(id, qid, c));
        });
    });

    server.Get(R"(/sessions/([^/]+)/metrics)", [&sessions](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { send_json(res, 200, sessions.metrics(req.matches[1])); });
    });

    server.Patch(R"(/sessions/([^/]+)/constraints)", [&sessions](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const std::string id = req.matches[1];
            (void)sessions.get(id);
            send_json(res, 200, sessions.update_constraints(id, detail::parse_body(req)));
        });
    });

    server.Get(R"(/sessions/([^/]+)/model)", [&sessions](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { send_json(res, 200, sessions.snapshot(req.matches[1])); });
    });

    if (log)
        server.set_logger([log](const httplib::Request& req, const httplib::Response& res) {
            static std::mutex m;
            std::lock_guard lk(m);
            *log << utc_now() << ' ' << req.method << ' ' << req.path << ' ' << res.status << '\n';
            log->flush();
        });
}

}  // namespace centaur
