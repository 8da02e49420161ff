#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "centaur/datasets.hpp"
#include "centaur/error.hpp"
#include "centaur/models.hpp"
#include "centaur/numerics.hpp"
#include "centaur/rng.hpp"
#include "centaur/serialize.hpp"

namespace centaur {

struct RewardFitOptions {
    ModelSpec model;
    RewardEncoding encoding = RewardEncoding::interaction;
    double l2_reg = 0.0;
    DescentOptions descent;

    void validate() const {
        if (!(l2_reg >= 0.0)) throw ConfigError("l2_reg must be nonnegative", "l2_reg");
        descent.validate();
    }
};

/// Mean over triplets of -ln sigmoid(r(x, y+) - r(x, y-)) plus (l2 / 2) ||weights||^2.
struct RewardObjective {
    const RewardModel* reward;
    std::vector<std::vector<double>> preferred;  // encoded (x, y+)
    std::vector<std::vector<double>> rejected;   // encoded (x, y-)
    double l2 = 0.0;

    RewardObjective(const RewardModel& rm, std::span<const PreferenceTriplet> triplets, double l2_reg)
        : reward(&rm), l2(l2_reg) {
        for (const auto& t : triplets) {
            preferred.push_back(rm.encode(t.context, t.preferred));
            rejected.push_back(rm.encode(t.context, t.rejected));
        }
    }

    double operator()(std::span<const double> theta, std::span<double> grad) const {
        std::fill(grad.begin(), grad.end(), 0.0);
        const Model& net = reward->net;
        const double inv_n = 1.0 / static_cast<double>(preferred.size());
        double total = 0.0;
        for (std::size_t i = 0; i < preferred.size(); ++i) {
            const double gap = net.score_at(theta, preferred[i]) - net.score_at(theta, rejected[i]);
            total += softplus(-gap);
            const double slope = -sigmoid(-gap) * inv_n;
            net.backward(theta, preferred[i], slope, grad);
            net.backward(theta, rejected[i], -slope, grad);
        }
        double value = total * inv_n;
        if (l2 > 0.0)
            for (const auto& name : net.weight_segments()) {
                const auto& s = net.params.segment(name);
                for (std::size_t j = s.offset; j < s.offset + s.length; ++j) {
                    value += 0.5 * l2 * theta[j] * theta[j];
                    grad[j] += l2 * theta[j];
                }
            }
        return value;
    }
};

inline void check_triplets(std::span<const PreferenceTriplet> triplets) {
    if (triplets.empty()) throw EmptyDataError("reward fitting needs at least one preference triplet");
    const auto& t0 = triplets.front();
    for (const auto& t : triplets) {
        if (t.context.size() != t0.context.size())
            throw DimensionError("triplet context", t0.context.size(), t.context.size());
        if (t.preferred.size() != t0.preferred.size() || t.rejected.size() != t0.preferred.size())
            throw DimensionError("triplet candidate", t0.preferred.size(),
                                 t.preferred.size() != t0.preferred.size() ? t.preferred.size() : t.rejected.size());
    }
}

/// Untrained reward model for these options; linear scorers start at zero.
inline RewardModel initial_reward(const RewardFitOptions& opts, std::size_t dx, std::size_t dy) {
    return RewardModel::create(opts.model, opts.encoding, dx, dy, opts.descent.seed);
}

/// Continues training `init` on the triplets (warm start).
inline RewardModel fit_reward_from(RewardModel init, std::span<const PreferenceTriplet> triplets,
                                   const RewardFitOptions& opts) {
    opts.validate();
    check_triplets(triplets);
    RewardObjective obj(init, triplets, opts.l2_reg);
    init.net.params = gradient_descent(obj, init.net.params, opts.descent).params;
    return init;
}

inline RewardModel fit_reward(std::span<const PreferenceTriplet> triplets, const RewardFitOptions& opts) {
    check_triplets(triplets);
    return fit_reward_from(initial_reward(opts, triplets.front().context.size(), triplets.front().preferred.size()),
                           triplets, opts);
}

inline double reward_loss(const RewardModel& rm, std::span<const PreferenceTriplet> triplets, double l2 = 0.0) {
    check_triplets(triplets);
    RewardObjective obj(rm, triplets, l2);
    std::vector<double> g(rm.net.params.size());
    return obj(rm.net.params.values(), g);
}

// ---------------------------------------------------------------------------
// KL-regularised policy optimisation

using RewardFn = std::function<double(std::span<const double> x, std::span<const double> y)>;

inline RewardFn reward_fn(const RewardModel& rm) {
    return [&rm](std::span<const double> x, std::span<const double> y) { return rm.score(x, y); };
}

struct PolicyObjective {
    RewardFn reward;
    const SoftmaxPolicy* reference = nullptr;
    double beta = 0.0;
    std::vector<std::vector<double>> contexts;
    double reward_scale = 1.0;  // weight on the human reward

    void validate() const {
        if (!reward) throw ConfigError("policy objective needs a reward", "reward");
        if (!reference) throw ConfigError("policy objective needs a reference policy", "reference");
        if (!(beta >= 0.0)) throw ConfigError("beta must be nonnegative", "beta");
        if (!(reward_scale >= 0.0)) throw ConfigError("lambda must be nonnegative", "lambda");
        if (contexts.empty()) throw EmptyDataError("policy objective needs at least one context");
    }
};

/// -J(theta) with J = mean_x [ scale * sum_a pi(a|x) r(x,a) - beta * KL(pi(.|x) || ref(.|x)) ],
/// rewards tabulated once per (context, action).
struct PolicyLoss {
    const SoftmaxPolicy* policy;
    std::vector<std::vector<double>> contexts;
    std::vector<std::vector<double>> rewards;      // per context, per action
    std::vector<std::vector<double>> log_ref;      // per context, per action
    double beta = 0.0;
    double scale = 1.0;

    PolicyLoss(const PolicyObjective& obj, const SoftmaxPolicy& p)
        : policy(&p), contexts(obj.contexts), beta(obj.beta), scale(obj.reward_scale) {
        obj.validate();
        if (!p.same_actions(*obj.reference) || p.context_dim != obj.reference->context_dim)
            throw ConfigError("policy and reference have different action sets", "actions");
        for (const auto& x : contexts) {
            std::vector<double> r(p.n_actions());
            for (std::size_t a = 0; a < r.size(); ++a) {
                r[a] = obj.reward(x, p.actions[a]);
                if (!std::isfinite(r[a])) throw InvariantError("reward is not finite for a context/action pair");
            }
            rewards.push_back(std::move(r));
            log_ref.push_back(log_softmax(obj.reference->scores_at(obj.reference->params.values(), x)));
        }
    }

    static std::vector<double> log_softmax(const std::vector<double>& s) {
        const double mx = *std::max_element(s.begin(), s.end());
        double z = 0.0;
        for (double v : s) z += std::exp(v - mx);
        const double lse = mx + std::log(z);
        std::vector<double> out(s.size());
        for (std::size_t a = 0; a < s.size(); ++a) out[a] = s[a] - lse;
        return out;
    }

    double operator()(std::span<const double> theta, std::span<double> grad) const {
        std::fill(grad.begin(), grad.end(), 0.0);
        const double inv_n = 1.0 / static_cast<double>(contexts.size());
        const std::size_t m = policy->n_actions();
        std::vector<double> v(m), up(m);
        double J = 0.0;
        for (std::size_t i = 0; i < contexts.size(); ++i) {
            const auto lp = log_softmax(policy->scores_at(theta, contexts[i]));
            double vbar = 0.0;
            for (std::size_t a = 0; a < m; ++a) {
                const double pa = std::exp(lp[a]);
                v[a] = scale * rewards[i][a] - beta * (lp[a] - log_ref[i][a]);
                J += inv_n * pa * v[a];
                vbar += pa * v[a];
            }
            for (std::size_t a = 0; a < m; ++a) up[a] = -inv_n * std::exp(lp[a]) * (v[a] - vbar);
            policy->backward(contexts[i], up, grad);
        }
        return -J;
    }

    double mean_kl(std::span<const double> theta) const {
        double s = 0.0;
        for (std::size_t i = 0; i < contexts.size(); ++i) {
            const auto lp = log_softmax(policy->scores_at(theta, contexts[i]));
            double kl = 0.0;
            for (std::size_t a = 0; a < lp.size(); ++a) kl += std::exp(lp[a]) * (lp[a] - log_ref[i][a]);
            s += std::max(kl, 0.0);
        }
        return s / static_cast<double>(contexts.size());
    }

    double mean_reward(std::span<const double> theta) const {
        double s = 0.0;
        for (std::size_t i = 0; i < contexts.size(); ++i) {
            const auto p = policy->distribution_at(theta, contexts[i]);
            for (std::size_t a = 0; a < p.size(); ++a) s += p[a] * rewards[i][a];
        }
        return s / static_cast<double>(contexts.size());
    }
};

struct PolicyResult {
    SoftmaxPolicy policy;
    double objective = 0.0;  // J at the returned parameters
    double mean_kl = 0.0;
    double mean_reward = 0.0;
    std::size_t iterations = 0;
};

/// Maximises J from `init`; with c1 finite the parameters stay within an L2 ball of radius
/// c1 around the reference's parameters.
inline PolicyResult optimize_policy(const PolicyObjective& obj, SoftmaxPolicy init, const DescentOptions& opts,
                                    double c1 = std::numeric_limits<double>::infinity()) {
    if (!(c1 >= 0.0)) throw ConfigError("c1 must be nonnegative", "c1");
    PolicyLoss loss(obj, init);
    const std::vector<double> center = obj.reference->params.values();
    auto project = [&](std::span<double> t) {
        if (std::isfinite(c1)) project_l2_ball(t, center, c1);
    };
    auto res = projected_descent(loss, init.params, project, opts);
    PolicyResult out;
    out.mean_kl = loss.mean_kl(res.params.values());
    out.mean_reward = loss.mean_reward(res.params.values());
    out.objective = -res.value;
    out.iterations = res.iterations;
    init.params = std::move(res.params);
    out.policy = std::move(init);
    return out;
}

// ---------------------------------------------------------------------------
// joint loop

enum class PairSampling { top2, uniform };

inline const char* to_string(PairSampling s) { return s == PairSampling::top2 ? "top2" : "uniform"; }

enum class Choice { first, second, skip };

inline const char* to_string(Choice c) {
    return c == Choice::first ? "first" : c == Choice::second ? "second" : "skip";
}

inline Choice choice_from_string(const std::string& s) {
    if (s == "first") return Choice::first;
    if (s == "second") return Choice::second;
    if (s == "skip") return Choice::skip;
    throw ConfigError("choice must be first, second or skip", "choice");
}

struct RlhfConfig {
    std::vector<std::vector<double>> contexts;  // query pool source and policy-objective contexts
    double beta = 0.1;
    double lambda = 1.0;                        // weight on the human reward
    double c1 = std::numeric_limits<double>::infinity();
    std::size_t pool_size = 16;
    PairSampling sampling = PairSampling::top2;
    RewardFitOptions reward;                    // descent.max_iters is the per-round refit budget
    DescentOptions policy;
    std::uint64_t seed = 0;

    void validate() const {
        if (contexts.empty()) throw EmptyDataError("the loop needs at least one context");
        if (!(beta >= 0.0)) throw ConfigError("beta must be nonnegative", "beta");
        if (!(lambda >= 0.0)) throw ConfigError("lambda must be nonnegative", "lambda");
        if (!(c1 >= 0.0)) throw ConfigError("c1 must be nonnegative", "c1");
        if (pool_size == 0) throw ConfigError("pool_size must be positive", "pool_size");
        reward.validate();
        policy.validate();
    }
};

struct Query {
    std::size_t context_index = 0;
    std::vector<double> context;
    std::size_t first = 0, second = 1;  // action indices
    double gap = 0.0;                   // top-2 probability gap at selection time
    std::vector<std::size_t> pool;      // context indices considered
};

struct TracePoint {
    std::size_t round = 0;
    double mean_reward = 0.0;
    double mean_kl = 0.0;
    std::optional<double> phi_b;  // undefined until a preference is recorded
    std::uint64_t seed = 0;
};

inline Json trace_to_json(const TracePoint& t) {
    Json j;
    j["round"] = t.round;
    j["mean_reward"] = t.mean_reward;
    j["mean_kl"] = t.mean_kl;
    j["phi_b"] = t.phi_b ? Json(*t.phi_b) : Json(nullptr);
    j["seed"] = t.seed;
    return j;
}

/// JSON lines, one record per round.
inline std::string trace_to_jsonl(const std::vector<TracePoint>& trace) {
    std::string out;
    for (const auto& t : trace) out += trace_to_json(t).dump() + "\n";
    return out;
}

/// State of the alternating reward / policy loop. The batch loop and a live session both drive
/// this: propose a query, record the answer, refit.
class RlhfState {
public:
    RlhfState(SoftmaxPolicy init_policy, RlhfConfig config)
        : config_(std::move(config)), reference_(init_policy), policy_(std::move(init_policy)),
          rng_(SplitMix64::derive(config_.seed, 0)) {
        config_.validate();
        if (policy_.n_actions() < 2) throw ConfigError("the loop needs at least two actions", "actions");
        for (const auto& x : config_.contexts)
            if (x.size() != policy_.context_dim) throw DimensionError("loop context", policy_.context_dim, x.size());
        reward_ = initial_reward(config_.reward, policy_.context_dim, policy_.actions.front().size());
    }

    const SoftmaxPolicy& policy() const noexcept { return policy_; }
    const SoftmaxPolicy& reference() const noexcept { return reference_; }
    const RewardModel& reward() const noexcept { return reward_; }
    const std::vector<PreferenceTriplet>& triplets() const noexcept { return triplets_; }
    const RlhfConfig& config() const noexcept { return config_; }
    std::size_t round() const noexcept { return round_; }

    /// Constraint knobs take effect from the next refit.
    void set_beta(double v) { config_.beta = nonneg(v, "beta"); }
    void set_lambda(double v) { config_.lambda = nonneg(v, "lambda"); }
    void set_c1(double v) { config_.c1 = nonneg(v, "c1"); }

    /// Draws a context pool; with top-2 sampling returns the context whose two most probable
    /// actions are closest in probability, paired as (most probable, runner-up). Exact
    /// probability ties are broken by a random action order drawn once per proposal.
    Query propose() {
        const std::size_t n = config_.contexts.size();
        const std::size_t m = policy_.n_actions();
        std::vector<std::size_t> pool(config_.pool_size);
        for (auto& i : pool) i = static_cast<std::size_t>(rng_.below(n));
        Query q;
        if (config_.sampling == PairSampling::uniform) {
            q.context_index = pool.front();
            q.first = static_cast<std::size_t>(rng_.below(m));
            q.second = static_cast<std::size_t>(rng_.below(m - 1));
            if (q.second >= q.first) ++q.second;
        } else {
            std::vector<std::size_t> tie_order(m);
            for (std::size_t a = 0; a < m; ++a) tie_order[a] = a;
            rng_.shuffle(tie_order);
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t i : pool) {
                const auto [a, b, gap] = top_two(config_.contexts[i], tie_order);
                if (gap < best) {
                    best = gap;
                    q.context_index = i;
                    q.first = a;
                    q.second = b;
                }
            }
            q.gap = best;
        }
        q.context = config_.contexts[q.context_index];
        q.pool = std::move(pool);
        return q;
    }

    /// Most and second-most probable actions and their probability gap; ties follow
    /// `tie_order` (a permutation of the actions), or index order when it is empty.
    std::tuple<std::size_t, std::size_t, double> top_two(std::span<const double> x,
                                                         std::span<const std::size_t> tie_order = {}) const {
        const auto p = policy_.distribution(x);
        std::vector<std::size_t> order(p.size()), rank(p.size());
        for (std::size_t a = 0; a < order.size(); ++a) order[a] = tie_order.empty() ? a : tie_order[a];
        for (std::size_t k = 0; k < order.size(); ++k) rank[order[k]] = k;
        std::sort(order.begin(), order.end(),
                  [&](std::size_t a, std::size_t b) { return p[a] != p[b] ? p[a] > p[b] : rank[a] < rank[b]; });
        return {order[0], order[1], p[order[0]] - p[order[1]]};
    }

    void record(const Query& q, Choice c) {
        if (c == Choice::skip) return;
        PreferenceTriplet t;
        t.context = q.context;
        const bool first = c == Choice::first;
        t.preferred = policy_.actions[first ? q.first : q.second];
        t.rejected = policy_.actions[first ? q.second : q.first];
        triplets_.push_back(std::move(t));
    }

    /// Warm-started refit of the reward (when any preference exists) and then the policy.
    TracePoint refit() {
        if (!triplets_.empty()) reward_ = fit_reward_from(std::move(reward_), triplets_, config_.reward);
        const auto res = optimize_policy(objective(), policy_, config_.policy, config_.c1);
        policy_ = res.policy;
        ++round_;
        TracePoint t;
        t.round = round_;
        t.mean_reward = res.mean_reward;
        t.mean_kl = res.mean_kl;
        t.phi_b = preference_agreement();
        t.seed = config_.seed;
        return t;
    }

    PolicyObjective objective() const {
        return PolicyObjective{reward_fn(reward_), &reference_, config_.beta, config_.contexts, config_.lambda};
    }

    /// Fraction of recorded preferences on which the policy gives the chosen candidate the
    /// higher probability.
    std::optional<double> preference_agreement() const {
        if (triplets_.empty()) return std::nullopt;
        std::size_t agree = 0;
        for (const auto& t : triplets_) {
            const auto p = policy_.distribution(t.context);
            const auto idx = [&](const std::vector<double>& y) {
                return static_cast<std::size_t>(std::find(policy_.actions.begin(), policy_.actions.end(), y) -
                                                policy_.actions.begin());
            };
            agree += p[idx(t.preferred)] > p[idx(t.rejected)];
        }
        return static_cast<double>(agree) / static_cast<double>(triplets_.size());
    }

private:
    static double nonneg(double v, const char* key) {
        if (!(v >= 0.0) || std::isnan(v)) throw ConfigError(std::string(key) + " must be nonnegative", key);
        return v;
    }

    RlhfConfig config_;
    SoftmaxPolicy reference_;
    SoftmaxPolicy policy_;
    RewardModel reward_;
    std::vector<PreferenceTriplet> triplets_;
    SplitMix64 rng_;
    std::size_t round_ = 0;
};

/// Simulated answer to a query; query number `n` uses human stream n.
inline Choice simulated_choice(const SimulatedHuman& sim, const Query& q, const SoftmaxPolicy& p, std::uint64_t n) {
    auto rng = sim.stream(n);
    const auto t = elicit_one(sim, q.context, {p.actions[q.first], p.actions[q.second]}, rng);
    return t.preferred == p.actions[q.first] ? Choice::first : Choice::second;
}

struct RlhfResult {
    SoftmaxPolicy policy;
    RewardModel reward;
    std::vector<TracePoint> trace;
    std::vector<PreferenceTriplet> triplets;
};

/// Alternates: query pairs from the current policy, elicit the simulated human's choices,
/// refit the reward, re-optimise the policy against the frozen initial policy.
inline RlhfResult rlhf_loop(const SimulatedHuman& sim, const SoftmaxPolicy& init_policy, std::size_t rounds,
                            std::size_t pairs_per_round, const RlhfConfig& config) {
    if (rounds == 0) throw ConfigError("rounds must be positive", "rounds");
    if (pairs_per_round == 0) throw ConfigError("pairs_per_round must be positive", "pairs_per_round");
    if (init_policy.n_actions() < 2) throw ConfigError("the loop needs at least two actions", "actions");
    RlhfState state(init_policy, config);
    RlhfResult out;
    std::uint64_t asked = 0;
    for (std::size_t r = 0; r < rounds; ++r) {
        for (std::size_t k = 0; k < pairs_per_round; ++k) {
            const auto q = state.propose();
            state.record(q, simulated_choice(sim, q, state.policy(), asked++));
        }
        out.trace.push_back(state.refit());
    }
    out.policy = state.policy();
    out.reward = state.reward();
    out.triplets = state.triplets();
    return out;
}

}  // namespace centaur
