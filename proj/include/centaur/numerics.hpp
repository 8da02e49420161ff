#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "centaur/constants.hpp"
#include "centaur/error.hpp"
#include "centaur/param_vector.hpp"

namespace centaur {

/// f(theta, grad) -> value; writes d f / d theta into grad (same length as theta).
template <class F>
concept DifferentiableObjective =
    requires(const F& f, std::span<const double> theta, std::span<double> grad) {
        { f(theta, grad) } -> std::convertible_to<double>;
    };

template <class F>
concept ScalarObjective = requires(const F& f, std::span<const double> theta) {
    { f(theta) } -> std::convertible_to<double>;
};

/// In-place map onto a feasible set.
template <class P>
concept Projector = requires(const P& p, std::span<double> theta) { p(theta); };

using Objective = std::function<double(std::span<const double>, std::span<double>)>;

struct DescentOptions {
    double step_size = 0.1;
    std::size_t max_iters = 1000;
    double grad_tol = constants::kGradTol;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(step_size > 0.0) || !std::isfinite(step_size))
            throw ConfigError("step_size must be positive", "step_size");
        if (!(grad_tol > 0.0)) throw ConfigError("grad_tol must be positive", "grad_tol");
    }
};

struct DescentResult {
    ParamVector params;
    double value = 0.0;
    std::size_t iterations = 0;
    /// Projected-gradient norm dropped below grad_tol.
    bool converged = false;
};

struct IdentityProjector {
    void operator()(std::span<double>) const noexcept {}
};

namespace detail {

inline void require_finite(std::span<const double> v, std::size_t iteration) {
    for (double x : v)
        if (!std::isfinite(x)) throw DivergenceError(iteration);
}

template <Projector P>
void project_checked(const P& project, std::span<double> theta) {
    project(theta);
    for (double x : theta)
        if (!std::isfinite(x)) throw ProjectionError("projector produced a non-finite value");
}

}  // namespace detail

/// Full-batch projected gradient descent with a fixed step size.
///
/// Each iteration proposes P(theta - step * grad). A proposal that raises the objective is
/// retried with the step halved (at most kMaxStepHalvings times), so the objective never
/// increases across accepted iterates. Stops when the gradient mapping
/// ||theta - P(theta - step * grad)|| / step falls to grad_tol, or after max_iters.
template <DifferentiableObjective F, Projector P>
DescentResult projected_descent(const F& objective, ParamVector init, const P& project,
                                const DescentOptions& opts) {
    opts.validate();
    std::vector<double>& x = init.values();
    const std::size_t n = x.size();
    detail::project_checked(project, std::span<double>(x));

    std::vector<double> grad(n, 0.0), cand(n), cand_grad(n, 0.0);
    double value = objective(std::span<const double>(x), std::span<double>(grad));
    if (!std::isfinite(value)) throw DivergenceError(0);
    detail::require_finite(grad, 0);

    DescentResult result;
    std::size_t it = 0;
    for (; it < opts.max_iters; ++it) {
        double step = opts.step_size;
        auto propose = [&](double s) {
            for (std::size_t i = 0; i < n; ++i) cand[i] = x[i] - s * grad[i];
            detail::project_checked(project, std::span<double>(cand));
        };
        propose(step);
        double mapping = 0.0;
        for (std::size_t i = 0; i < n; ++i) mapping += (x[i] - cand[i]) * (x[i] - cand[i]);
        if (std::sqrt(mapping) / step <= opts.grad_tol) {
            result.converged = true;
            break;
        }

        bool accepted = false;
        for (int halving = 0; halving <= constants::kMaxStepHalvings; ++halving) {
            if (halving > 0) {
                step *= 0.5;
                propose(step);
            }
            const double v = objective(std::span<const double>(cand), std::span<double>(cand_grad));
            if (!std::isfinite(v)) throw DivergenceError(it + 1);
            detail::require_finite(cand_grad, it + 1);
            if (v <= value) {
                x.swap(cand);
                grad.swap(cand_grad);
                value = v;
                accepted = true;
                break;
            }
        }
        if (!accepted) break;  // numerically stationary
    }
    result.iterations = it;
    result.value = value;
    result.params = std::move(init);
    return result;
}

template <DifferentiableObjective F>
DescentResult gradient_descent(const F& objective, ParamVector init, const DescentOptions& opts) {
    return projected_descent(objective, std::move(init), IdentityProjector{}, opts);
}

template <class F>
double evaluate(const F& f, std::span<const double> theta) {
    if constexpr (ScalarObjective<F>) {
        return f(theta);
    } else {
        static_assert(DifferentiableObjective<F>, "objective must be scalar or differentiable");
        std::vector<double> scratch(theta.size(), 0.0);
        return f(theta, std::span<double>(scratch));
    }
}

/// Central differences (f(theta + h e_i) - f(theta - h e_i)) / 2h per coordinate.
template <class F>
std::vector<double> finite_diff_gradient(const F& objective, std::span<const double> at,
                                         double h = constants::kFiniteDiffStep) {
    if (!(h > 0.0)) throw ConfigError("finite-difference step must be positive", "h");
    std::vector<double> theta(at.begin(), at.end());
    std::vector<double> out(theta.size(), 0.0);
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double orig = theta[i];
        theta[i] = orig + h;
        const double up = evaluate(objective, theta);
        theta[i] = orig - h;
        const double down = evaluate(objective, theta);
        theta[i] = orig;
        if (!std::isfinite(up) || !std::isfinite(down))
            throw DivergenceError("non-finite objective during finite differencing at coordinate " +
                                  std::to_string(i));
        out[i] = (up - down) / (2.0 * h);
    }
    return out;
}

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    bool passed = true;
};

inline double relative_error(double a, double b, double floor = constants::kGradCheckFloor) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

template <DifferentiableObjective F>
GradCheckReport check_gradient(const F& objective, std::span<const double> at,
                               double tol = constants::kGradCheckRelTol,
                               double h = constants::kFiniteDiffStep) {
    std::vector<double> analytic(at.size(), 0.0);
    objective(at, std::span<double>(analytic));
    const auto numeric = finite_diff_gradient(objective, at, h);
    GradCheckReport rep;
    for (std::size_t i = 0; i < at.size(); ++i) {
        const double e = relative_error(analytic[i], numeric[i]);
        if (e > rep.max_rel_error) {
            rep.max_rel_error = e;
            rep.worst_index = i;
        }
    }
    rep.passed = rep.max_rel_error <= tol;
    return rep;
}

// ---------------------------------------------------------------------------
// distributions

inline void require_distribution(std::span<const double> p, const char* what) {
    if (p.empty()) throw DimensionError(std::string(what) + " is empty");
    double s = 0.0;
    for (double v : p) {
        if (!(v >= 0.0) || !std::isfinite(v))
            throw InvariantError(std::string(what) + " has a negative or non-finite entry");
        s += v;
    }
    if (std::abs(s - 1.0) > constants::kDistributionSumTol)
        throw InvariantError(std::string(what) + " does not sum to 1");
}

/// KL(p || q) = sum_i p_i ln(p_i / q_i), with 0 ln(0/q) = 0.
inline double kl_categorical(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw DimensionError("kl_categorical", p.size(), q.size());
    require_distribution(p, "p");
    require_distribution(q, "q");
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] == 0.0) continue;
        if (q[i] == 0.0)
            throw SupportError("p has mass at index " + std::to_string(i) + " where q is zero");
        kl += p[i] * std::log(p[i] / q[i]);
    }
    return std::max(kl, 0.0);
}

/// Max-subtracted softmax; never overflows for finite scores.
inline std::vector<double> softmax(std::span<const double> scores) {
    if (scores.empty()) throw DimensionError("softmax of an empty score vector");
    const double m = *std::max_element(scores.begin(), scores.end());
    std::vector<double> out(scores.size());
    double z = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        out[i] = std::exp(scores[i] - m);
        z += out[i];
    }
    for (double& v : out) v /= z;
    return out;
}

inline double sigmoid(double z) noexcept {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

/// ln(1 + e^z) without overflow.
inline double softplus(double z) noexcept {
    return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError("dot", a.size(), b.size());
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double total_variation(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw DimensionError("total_variation", p.size(), q.size());
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
    return 0.5 * s;
}

// ---------------------------------------------------------------------------
// projections onto common feasible sets

/// Clamp every coordinate into [lo, hi].
inline void project_box(std::span<double> v, double lo, double hi) {
    for (double& x : v) x = std::clamp(x, lo, hi);
}

/// Euclidean projection onto {v : ||v - center|| <= radius}.
inline void project_l2_ball(std::span<double> v, std::span<const double> center, double radius) {
    if (v.size() != center.size()) throw DimensionError("project_l2_ball", center.size(), v.size());
    if (std::isinf(radius)) return;
    double norm2 = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) norm2 += (v[i] - center[i]) * (v[i] - center[i]);
    if (norm2 <= radius * radius) return;
    if (radius == 0.0) {
        std::copy(center.begin(), center.end(), v.begin());
        return;
    }
    double scale = radius / std::sqrt(norm2);
    std::vector<double> diff(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) diff[i] = v[i] - center[i];
    for (;;) {
        double n2 = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) {
            v[i] = center[i] + diff[i] * scale;
            n2 += (v[i] - center[i]) * (v[i] - center[i]);
        }
        if (std::sqrt(n2) <= radius) return;
        scale *= 1.0 - 1e-14;  // rounding pushed us just outside
    }
}

/// Euclidean projection onto {v : sum |v_i| <= radius} (sort-based, Duchi et al. 2008).
inline void project_l1_ball(std::span<double> v, double radius) {
    if (std::isinf(radius)) return;
    double l1 = 0.0;
    for (double x : v) l1 += std::abs(x);
    if (l1 <= radius) return;
    if (radius == 0.0) {
        std::fill(v.begin(), v.end(), 0.0);
        return;
    }
    std::vector<double> u(v.size());
    std::transform(v.begin(), v.end(), u.begin(), [](double x) { return std::abs(x); });
    std::sort(u.begin(), u.end(), std::greater<>());
    double cumsum = 0.0, theta = 0.0;
    for (std::size_t j = 0; j < u.size(); ++j) {
        cumsum += u[j];
        const double t = (cumsum - radius) / static_cast<double>(j + 1);
        if (u[j] - t > 0.0) theta = t;
    }
    for (double& x : v) {
        const double mag = std::max(std::abs(x) - theta, 0.0);
        x = x < 0.0 ? -mag : mag;
    }
    for (;;) {
        double after = 0.0;
        for (double x : v) after += std::abs(x);
        if (after <= radius) return;
        for (double& x : v) x *= (radius / after) * (1.0 - 1e-14);
    }
}

}  // namespace centaur
