// One PASS/FAIL line per acceptance criterion; exit status 1 if any criterion fails.

#include <sys/wait.h>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "centaur/config.hpp"
#include "centaur/evaluation.hpp"
#include "centaur/gradcheck.hpp"
#include "centaur/http_service.hpp"

using namespace centaur;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    std::string name;
    double runtime_limit_s;  // 0 = no limit
    std::function<Verdict()> check;
};

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

int run_cli(const std::string& args) {
    const int st = std::system((std::string(CENTAUR_CLI_PATH) + " " + args + " > /dev/null 2>&1").c_str());
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

double log1pexp(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

// ---------------------------------------------------------------------------

Verdict gradient_integrity() {
    std::ostringstream lines;
    const bool lib = run_gradchecks(gradcheck_registry(), lines, 1, 10);
    const int code = run_cli("gradcheck");
    const auto n = gradcheck_registry().size();
    return {lib && code == 0, std::to_string(n) + " objectives x 10 points, rel tol 1e-4; cli gradcheck exit " +
                                  std::to_string(code)};
}

Verdict constrained_cost_oracle() {
    LabeledDataset ds;
    ds.features = Matrix(8, 1);
    ds.features.data = {-2.0, -1.2, -0.7, -0.1, 0.3, 0.8, 1.5, 2.2};
    ds.labels = {0, 0, 1, 0, 1, 0, 1, 1};
    const std::vector<double> human{0, 1, 0, 0, 1, 1, 1, 1};
    const double lambda = 1.0;
    auto combined = [&](double w, double b) {
        double s = 0.0;
        for (int i = 0; i < 8; ++i) {
            const double z = w * ds.features.data[i] + b;
            s += log1pexp(z) - ds.labels[i] * z + lambda * (log1pexp(z) - human[i] * z);
        }
        return s / 8.0;
    };
    double best = INFINITY, bw = 0.0, bb = 0.0;
    for (int i = -3000; i <= 3000; ++i)
        for (int k = -3000; k <= 3000; ++k) {
            const double w = i * 1e-3, b = k * 1e-3;
            const double v = combined(w, b);
            if (v < best) best = v, bw = w, bb = b;
        }
    FitOptions o;
    o.descent = {.step_size = 0.5, .max_iters = 100000, .grad_tol = 1e-12};
    const auto c = fit_constrained_cost(ds, HumanSignalDataset::from_labels(ds.with_labels(human)), lambda,
                                        LossKind::logistic, PenaltyKind::logistic, SignalTransform::identity,
                                        SignalTransform::identity, o);
    const double dw = std::abs(c.model.params[0] - bw), db = std::abs(c.model.params[1] - bb);
    return {dw <= 2e-3 && db <= 2e-3, "grid argmin (" + fmt("%.3f", bw) + ", " + fmt("%.3f", bb) +
                                          "), coordinate gaps " + fmt("%.2e", dw) + " / " + fmt("%.2e", db) +
                                          ", tol 2e-3"};
}

Verdict gibbs_closed_form() {
    const std::vector<double> r{0.3, 0.1, -0.2};
    auto ref = SoftmaxPolicy::zeros(1, SoftmaxPolicy::one_hot_actions(3));
    ref.params.view("b")[0] = 0.4;
    ref.params.view("b")[2] = -0.3;
    ref.params.view("W")[1] = 0.8;
    const std::vector<double> x{0.6};
    RewardFn reward = [r](std::span<const double>, std::span<const double> y) {
        return r[static_cast<std::size_t>(std::max_element(y.begin(), y.end()) - y.begin())];
    };
    double worst = 0.0;
    for (double beta : {0.1, 1.0, 10.0}) {
        PolicyObjective obj{reward, &ref, beta, {x}};
        const auto res = optimize_policy(obj, ref, {.step_size = 1.0 / beta, .max_iters = 20000, .grad_tol = 1e-12});
        const auto rho = ref.distribution(x);
        std::vector<double> gibbs(3);
        double z = 0.0;
        for (int a = 0; a < 3; ++a) z += gibbs[a] = rho[a] * std::exp(r[a] / beta);
        for (auto& g : gibbs) g /= z;
        worst = std::max(worst, total_variation(res.policy.distribution(x), gibbs));
    }
    return {worst <= 1e-3, "max total variation over beta {0.1,1,10} " + fmt("%.2e", worst) + ", tol 1e-3"};
}

Verdict reduction_identities() {
    GeneratorSpec g{.n_records = 300, .d_shared = 2, .d_private = 2, .true_weights = {1, 1, 1, 1}, .label_noise = 0.05};
    const auto cd = generate_complementary(g, 6);
    const auto hl = human_labels(cd.human, cd.full);
    const auto h = HumanSignalDataset::from_labels(cd.machine.with_labels(hl));
    std::ostringstream detail;
    double worst = 0.0;
    auto note = [&](const char* what, double d) {
        worst = std::max(worst, d);
        detail << what << ' ' << fmt("%.1e", d) << "; ";
    };

    for (ModelKind kind : {ModelKind::linear, ModelKind::mlp}) {
        FitOptions o;
        o.model = {.kind = kind, .hidden_width = 3};
        o.descent = {.step_size = 0.3, .max_iters = 200, .seed = 12};
        const auto c = fit_constrained_cost(cd.machine, h, 0.0, LossKind::logistic, PenaltyKind::logistic,
                                            SignalTransform::identity, SignalTransform::identity, o);
        const auto m = fit_supervised(o.model, cd.machine, LossKind::logistic, 0.0, o.descent);
        note(kind == ModelKind::linear ? "lambda=0 linear" : "lambda=0 mlp",
             l2_distance(c.model.params.values(), m.params.values()));
    }

    FitOptions lo;
    lo.descent = {.step_size = 0.5, .max_iters = 400};
    {
        const auto pref = fit_supervised({}, cd.full.with_labels(hl), LossKind::logistic, 0.0, lo.descent);
        const auto c = augment_model(cd.machine, pref, 0.0, lo, &cd.full.features);
        const auto m = fit_supervised({}, cd.machine, LossKind::logistic, 0.0, lo.descent);
        auto gamma = c.model.params.values();
        const double human_weight = gamma[cd.machine.n_features()];
        gamma.erase(gamma.begin() + static_cast<std::ptrdiff_t>(cd.machine.n_features()));
        note("importance_cap=0", l2_distance(gamma, m.params.values()) + std::abs(human_weight));
    }
    {
        const auto base = fit_supervised({}, cd.machine, LossKind::logistic, 0.0, lo.descent);
        const auto c = finetune(base, h, {"weights", "intercept"}, 0.0, lo);
        note("c1=0", l2_distance(c.model.params.values(), base.params.values()));
    }
    {
        FitOptions o;
        o.model = {.kind = ModelKind::mlp, .hidden_width = 4};
        o.descent = {.step_size = 0.3, .max_iters = 50, .seed = 8};
        const auto base = fit_supervised(o.model, cd.machine, LossKind::logistic, 0.0, o.descent);
        const auto c = reward_ensemble(base, {h, h, h}, {0, 0, 0}, 2, o);
        double d = l2_distance(c.model.params.values(), base.params.values());
        for (const auto& a : c.adapters) d = std::max(d, l2_distance(a.effective(base.params), base.params.values()));
        note("extents=0", d);
    }
    detail << "tol 1e-8";
    return {worst <= 1e-8, detail.str()};
}

Verdict reward_recovery() {
    const std::size_t dy = 4;
    SplitMix64 rng(21);
    std::vector<double> w(dy);
    for (auto& v : w) v = rng.normal();
    auto candidate = [&] {
        std::vector<double> y(dy);
        for (auto& v : y) v = rng.normal();
        return y;
    };
    auto u = [&](const std::vector<double>& y) { return dot(w, y); };
    std::vector<PreferenceTriplet> train;
    for (int i = 0; i < 500; ++i) {
        auto a = candidate(), b = candidate();
        if (u(a) < u(b)) std::swap(a, b);
        train.push_back({{rng.normal()}, a, b});
    }
    RewardFitOptions o;
    o.encoding = RewardEncoding::concat;
    o.descent = {.step_size = 1.0, .max_iters = 2000};
    const auto rm = fit_reward(train, o);
    int agree = 0;
    for (int i = 0; i < 200; ++i) {
        const auto a = candidate(), b = candidate();
        const std::vector<double> x{rng.normal()};
        agree += (rm.score(x, a) > rm.score(x, b)) == (u(a) > u(b));
    }
    const double frac = agree / 200.0;
    return {frac >= 0.95, "held-out pairwise agreement " + fmt("%.3f", frac) + ", need >= 0.95"};
}

ExperimentSpec complementary_spec(double noise_rate, double anchor) {
    ExperimentSpec s;
    s.generator = {.n_records = 600, .d_shared = 3, .d_private = 2, .true_weights = {1.5, -1.5, 1.5, 1.0, -1.0},
                   .label_noise = 0.05};
    s.human = {.view = HumanView::private_only, .anchor_strength = anchor, .bias_anchor = 0.5, .noise_rate = noise_rate};
    return s;
}

ArmSpec linear_arm(const std::string& name, ArmKind kind) {
    ArmSpec a;
    a.name = name;
    a.kind = kind;
    a.fit.descent = {.step_size = 0.5, .max_iters = 300};
    return a;
}

Verdict ranking_reproduction() {
    auto s = complementary_spec(0.1, 0.3);
    s.replications = 50;
    auto c = linear_arm("centaur", ArmKind::centaur);
    c.centaur.technique = Technique::augment_model;
    s.arms = {linear_arm("human_only", ArmKind::human_only), linear_arm("machine_only", ArmKind::machine_only), c};
    const auto r = ranking_experiment(s, 2024);
    const double cm = r.orderings[0].fraction, mh = r.orderings[1].fraction;
    return {cm >= 0.9 && mh >= 0.9, "centaur > machine in " + fmt("%.2f", cm) + ", machine > human in " +
                                        fmt("%.2f", mh) + " of 50 replications, need >= 0.90 each"};
}

Verdict intuition_filtering() {
    auto s = complementary_spec(0.5, 0.0);
    s.replications = 20;
    auto c = linear_arm("centaur", ArmKind::centaur);
    c.centaur.technique = Technique::augment_model;
    c.cap_grid = {0.0, 0.25, 0.5, 1.0, 2.0, kUnbounded};
    s.arms = {linear_arm("machine_only", ArmKind::machine_only), c};
    const auto r = run_experiment(s, 2024);
    const double gap = r.arm("centaur").phi_p.mean - r.arm("machine_only").phi_p.mean;
    return {std::abs(gap) <= 0.005, "20-seed mean accuracy gap centaur - machine " + fmt("%+.4f", gap) +
                                        ", tol 0.005"};
}

Verdict kl_monotonicity() {
    ExperimentSpec s;
    s.generator = {.n_records = 300, .d_shared = 2, .d_private = 2, .true_weights = {1.0, -1.0, 1.5, 1.5}};
    s.replications = 20;
    ArmSpec a;
    a.name = "rlhf";
    a.kind = ArmKind::rlhf;
    a.rlhf.rounds = 3;
    a.rlhf.pairs_per_round = 5;
    a.rlhf.n_contexts = 60;
    s.arms = {a};
    const auto pts = frontier_sweep(s, Knob::beta, {0.01, 0.1, 1.0, 10.0, 100.0}, 31);
    bool ok = true;
    std::string kl;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        kl += fmt("%.3e", *pts[i].mean_kl) + (i + 1 < pts.size() ? " " : "");
        if (i > 0 && *pts[i].mean_kl > *pts[i - 1].mean_kl + 1e-6) ok = false;
    }
    return {ok, "mean KL over beta {0.01..100}: " + kl + ", slack 1e-6"};
}

Verdict incremental_batch_equivalence() {
    auto cfg = default_run_config_json();
    cfg["master_seed"] = 17;
    SessionManager sessions(cfg);
    httplib::Server server;
    install_routes(server, sessions, nullptr);
    const int port = server.bind_to_any_port("127.0.0.1");
    if (port <= 0) return {false, "could not bind a local port"};
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    httplib::Client c("127.0.0.1", port);
    Verdict v;
    try {
        const auto created = c.Post("/sessions", cfg.dump(), "application/json");
        if (!created || created->status != 201) throw Error("session creation failed");
        const std::string id = Json::parse(created->body)["id"];
        const auto s = sessions.get(id);
        for (std::uint64_t n = 0; n < 20; ++n) {
            const auto q = Json::parse(c.Get("/sessions/" + id + "/query")->body);
            Query query;
            query.context_index = q["context"]["index"];
            for (const auto& f : q["context"]["features"]) query.context.push_back(f["value"]);
            query.first = q["candidates"][0]["action"];
            query.second = q["candidates"][1]["action"];
            const auto choice = simulated_choice(s->setup().sim, query, s->state().policy(), n);
            const auto r = c.Post("/sessions/" + id + "/feedback",
                                  Json{{"query_id", q["query_id"]}, {"choice", to_string(choice)}}.dump(),
                                  "application/json");
            if (!r || r->status != 200) throw Error("feedback rejected");
        }
        const auto snap = Json::parse(c.Get("/sessions/" + id + "/model")->body);
        const auto batch = rlhf_loop(s->setup().sim, s->setup().init, 20, 1, s->setup().config);
        const auto served = policy_from_json(snap["policy"]).params.values();
        const auto reward = reward_from_json(snap["reward"]).net.params.values();
        double d = 0.0;
        for (std::size_t i = 0; i < served.size(); ++i) d = std::max(d, std::abs(served[i] - batch.policy.params[i]));
        for (std::size_t i = 0; i < reward.size(); ++i)
            d = std::max(d, std::abs(reward[i] - batch.reward.net.params[i]));
        v = {d <= 1e-9, "20 choices over HTTP, max parameter drift " + fmt("%.1e", d) + ", tol 1e-9"};
    } catch (const std::exception& e) {
        v = {false, e.what()};
    }
    server.stop();
    th.join();
    return v;
}

Verdict determinism() {
    const auto dir = fs::temp_directory_path() / "centaur_acceptance_determinism";
    fs::remove_all(dir);
    fs::create_directories(dir);
    std::ofstream(dir / "config.json") << R"({
  "schema_version": 1,
  "master_seed": 99,
  "generator": {"n_records": 400, "d_shared": 3, "d_private": 2, "true_weights": [1.5, -1.5, 1.5, 1.0, -1.0]},
  "human": {"view": "private", "anchor_strength": 0.3, "noise_rate": 0.1},
  "replications": 3,
  "arms": [{"name": "human_only", "kind": "human_only"},
           {"name": "machine_only", "kind": "machine_only"},
           {"name": "centaur", "kind": "centaur", "centaur": {"technique": "augment_model"}},
           {"name": "rlhf", "kind": "rlhf", "rlhf": {"rounds": 2}}]
})";
    const auto cfg = (dir / "config.json").string();
    const int a = run_cli("run " + cfg + " --out " + (dir / "a").string());
    const int b = run_cli("run " + cfg + " --out " + (dir / "b").string());
    const auto ra = slurp(dir / "a" / "report.json"), rb = slurp(dir / "b" / "report.json");
    const bool same = a == 0 && b == 0 && !ra.empty() && ra == rb;
    return {same, "two cli runs exit " + std::to_string(a) + "/" + std::to_string(b) + ", report.json " +
                      std::to_string(ra.size()) + " bytes, " + (ra == rb ? "identical" : "different")};
}

}  // namespace

int main() {
    const std::vector<Criterion> criteria{
        {"gradient integrity", 30, gradient_integrity},
        {"constrained-cost grid oracle", 60, constrained_cost_oracle},
        {"Gibbs closed form", 10, gibbs_closed_form},
        {"reduction identities", 0, reduction_identities},
        {"reward recovery", 30, reward_recovery},
        {"ranking reproduction", 300, ranking_reproduction},
        {"intuition filtering", 0, intuition_filtering},
        {"KL monotonicity in beta", 0, kl_monotonicity},
        {"incremental/batch equivalence", 0, incremental_batch_equivalence},
        {"determinism", 0, determinism},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = c.check();
        } catch (const std::exception& e) {
            v = {false, std::string("threw: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::string timing = fmt("%.1fs", secs);
        if (c.runtime_limit_s > 0) {
            timing += fmt(", limit %.0fs", c.runtime_limit_s);
            if (secs > c.runtime_limit_s) {
                v.pass = false;
                timing += " EXCEEDED";
            }
        }
        std::cout << (v.pass ? "PASS " : "FAIL ") << c.name << ": " << v.detail << " (" << timing << ")" << std::endl;
        failed += !v.pass;
    }
    std::cout << (criteria.size() - failed) << "/" << criteria.size() << " acceptance criteria passed" << std::endl;
    return failed == 0 ? 0 : 1;
}
