#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "centaur/config.hpp"
#include "centaur/evaluation.hpp"
#include "centaur/gradcheck.hpp"
#include "centaur/http_service.hpp"

namespace fs = std::filesystem;
using namespace centaur;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

struct Loaded {
    RunConfig config;
    std::string text;
    std::string seed_source = "config";
};

Loaded load(const std::string& path) {
    Loaded l;
    l.text = read_text_file(path);
    l.config = run_config_from_text(l.text);
    if (const char* env = std::getenv("CENTAUR_SEED")) {
        try {
            std::size_t used = 0;
            const auto v = std::stoull(env, &used, 0);
            if (used != std::string(env).size()) throw std::invalid_argument("trailing characters");
            l.config.master_seed = v;
            l.seed_source = "CENTAUR_SEED";
        } catch (const std::exception&) {
            throw ConfigError(std::string("CENTAUR_SEED is not an unsigned integer: '") + env + "'", "CENTAUR_SEED");
        }
    }
    return l;
}

void write_file(const fs::path& p, const std::string& content) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << content;
    if (!out) throw Error("cannot write " + p.string());
}

fs::path prepare_out(const std::string& dir) {
    fs::path p(dir);
    std::error_code ec;
    fs::create_directories(p, ec);
    if (!fs::is_directory(p)) throw Error("cannot create output directory '" + dir + "'");
    return p;
}

std::string dump(const Json& j, bool pretty) { return (pretty ? j.dump(2) : j.dump()) + "\n"; }

Json manifest(const Loaded& l, const std::string& config_path, const std::string& command, Json outputs) {
    return {{"command", command},
            {"config_path", config_path},
            {"config_hash", hex64(config_hash(l.text))},
            {"schema_version", l.config.schema_version},
            {"master_seed", l.config.master_seed},
            {"seed_source", l.seed_source},
            {"outputs", std::move(outputs)}};
}

int cmd_run(const std::string& config_path, const std::string& out_dir) {
    const auto l = load(config_path);
    const auto dir = prepare_out(out_dir);
    const auto report = run_experiment(l.config.experiment, l.config.master_seed);
    write_file(dir / "report.json", dump(report_to_json(report), l.config.pretty));
    write_file(dir / "summary.csv", summary_csv(report));
    write_file(dir / "manifest.json",
               dump(manifest(l, config_path, "run", {"report.json", "summary.csv"}), true));
    std::cout << "wrote " << (dir / "report.json").string() << '\n';
    return kExitOk;
}

std::vector<double> parse_grid(const std::string& text) {
    std::vector<double> grid;
    std::size_t start = 0;
    while (start <= text.size() && !text.empty()) {
        const auto end = text.find(',', start);
        const auto tok = text.substr(start, end == std::string::npos ? std::string::npos : end - start);
        try {
            std::size_t used = 0;
            grid.push_back(std::stod(tok, &used));
            if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
            throw ConfigError("grid entry '" + tok + "' is not a number", "grid");
        }
        if (end == std::string::npos) break;
        start = end + 1;
    }
    return grid;
}

int cmd_sweep(const std::string& config_path, const std::string& knob_name, const std::string& grid_text,
              const std::string& arm, const std::string& out_dir) {
    const auto knob = knob_from_string(knob_name);
    const auto grid = parse_grid(grid_text);
    if (grid.empty()) throw ConfigError("sweep grid must not be empty", "grid");
    const auto l = load(config_path);
    const auto dir = prepare_out(out_dir);
    std::vector<ExperimentReport> reports;
    const auto pts = frontier_sweep(l.config.experiment, knob, grid, l.config.master_seed, arm, &reports);
    Json points = Json::array();
    std::string summary = "value,arm,metric,mean,stdev,n\n";
    for (std::size_t i = 0; i < pts.size(); ++i) {
        points.push_back({{"value", pts[i].value}, {"report", report_to_json(reports[i])}});
        std::istringstream rows(summary_csv(reports[i]));
        std::string line;
        std::getline(rows, line);  // header
        while (std::getline(rows, line)) summary += fmt_real(pts[i].value) + "," + line + "\n";
    }
    write_file(dir / "report.json", dump({{"knob", to_string(knob)}, {"points", points}}, l.config.pretty));
    write_file(dir / "summary.csv", summary);
    write_file(dir / "frontier.csv", frontier_csv(pts));
    write_file(dir / "manifest.json",
               dump(manifest(l, config_path, "sweep", {"report.json", "summary.csv", "frontier.csv"}), true));
    std::cout << "wrote " << (dir / "frontier.csv").string() << '\n';
    return kExitOk;
}

int cmd_gradcheck(bool with_faulty) {
    auto entries = gradcheck_registry();
    if (with_faulty) entries.push_back(sign_flipped_entry());
    const bool ok = run_gradchecks(entries, std::cout);
    std::cout << (ok ? "all gradients match finite differences\n" : "gradient check FAILED\n");
    return ok ? kExitOk : kExitRuntime;
}

httplib::Server* g_server = nullptr;

void on_signal(int) {
    if (g_server) g_server->stop();
}

int cmd_serve(const std::string& bind, const std::string& config_path, const std::string& log_dir) {
    Json defaults = default_run_config_json();
    if (!config_path.empty()) {
        const auto l = load(config_path);
        defaults = Json::parse(l.text);
        defaults["master_seed"] = l.config.master_seed;
    }
    const auto colon = bind.rfind(':');
    int port = -1;
    if (colon != std::string::npos) {
        try {
            std::size_t used = 0;
            port = std::stoi(bind.substr(colon + 1), &used);
            if (used != bind.size() - colon - 1) port = -1;
        } catch (const std::exception&) {
            port = -1;
        }
    }
    if (colon == std::string::npos || colon == 0 || port < 0 || port > 65535) {
        std::cerr << "error: bind address must look like host:port, got '" << bind << "'\n";
        return kExitRuntime;
    }
    const std::string host = bind.substr(0, colon);
    SessionManager sessions(defaults, log_dir.empty() ? std::nullopt : std::optional<fs::path>(log_dir));
    const auto restored = sessions.restore();
    httplib::Server server;
    install_routes(server, sessions, &std::cerr);
    if (!server.bind_to_port(host, port)) {
        std::cerr << "error: cannot bind to " << bind << '\n';
        return kExitRuntime;
    }
    g_server = &server;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::cerr << "listening on " << bind;
    if (!restored.empty()) std::cerr << " (restored " << restored.size() << " sessions)";
    std::cerr << std::endl;
    server.listen_after_bind();
    g_server = nullptr;
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Human-algorithm centaur experiments, sweeps, gradient checks and live sessions"};
    app.require_subcommand(1);

    std::string config, out, knob, grid, arm, bind, log_dir;
    bool faulty = false;

    auto* run = app.add_subcommand("run", "Run a replication experiment");
    run->add_option("config", config, "Run configuration (JSON)")->required();
    run->add_option("--out", out, "Output directory")->required();

    auto* sweep = app.add_subcommand("sweep", "Sweep one constraint knob and write the frontier");
    sweep->add_option("config", config, "Run configuration (JSON)")->required();
    sweep->add_option("--knob", knob, "lambda, beta, importance_cap or c1")->required();
    sweep->add_option("--grid", grid, "Comma-separated ascending values")->required();
    sweep->add_option("--arm", arm, "Arm to sweep (default: first arm the knob applies to)");
    sweep->add_option("--out", out, "Output directory")->required();

    auto* gc = app.add_subcommand("gradcheck", "Compare every analytic gradient with finite differences");
    gc->add_flag("--with-sign-flip-double", faulty, "Also check a deliberately wrong gradient (must fail)");

    auto* serve = app.add_subcommand("serve", "Serve live preference sessions over HTTP");
    serve->add_option("--bind", bind, "host:port")->default_val("127.0.0.1:8080");
    serve->add_option("--config", config, "Default session configuration (JSON)");
    serve->add_option("--log-dir", log_dir, "Directory for session event logs (replayed on start)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*run) return cmd_run(config, out);
        if (*sweep) return cmd_sweep(config, knob, grid, arm, out);
        if (*gc) return cmd_gradcheck(faulty);
        if (*serve) return cmd_serve(bind, config, log_dir);
    } catch (const ConfigError& e) {
        std::cerr << "configuration error";
        if (!e.key().empty()) std::cerr << " [" << e.key() << "]";
        std::cerr << ": " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitRuntime;
}
