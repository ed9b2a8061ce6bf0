#pragma once

// Follower dynamics in output-feedback chain form:
//   x_l' = x_{l+1}            l = 1..r-1
//   x_r' = u + d(t) - f(x, t)^T theta
// with unknown constant parameters theta and a bounded disturbance d.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "agentsync/errors.hpp"
#include "agentsync/expr.hpp"
#include "agentsync/rng.hpp"

namespace agentsync {

namespace detail {

// floor(t / quantum) with right-continuity robust to grid rounding: the small
// positive bias keeps values an ulp below a breakpoint in the next interval.
inline double interval_index(double t, double quantum) {
    return std::floor(t / quantum + 1e-9);
}

}  // namespace detail

/// Bounded scalar disturbance d(t). The bound is available for diagnostics
/// only; controllers never read it.
class DisturbanceProfile {
public:
    enum class Kind { zero, sinusoid, square_wave, piecewise_constant, bounded_noise };

    static DisturbanceProfile zero() { return DisturbanceProfile(); }

    static DisturbanceProfile sinusoid(double amplitude, double omega, double phase) {
        DisturbanceProfile p;
        p.kind_ = Kind::sinusoid;
        p.amplitude_ = amplitude;
        p.omega_ = omega;
        p.phase_ = phase;
        return p;
    }

    /// +amplitude on the first half of each period, -amplitude on the second.
    static DisturbanceProfile square_wave(double amplitude, double period) {
        if (!(period > 0.0)) throw ConfigError("square wave period must be positive");
        DisturbanceProfile p;
        p.kind_ = Kind::square_wave;
        p.amplitude_ = amplitude;
        p.period_ = period;
        return p;
    }

    static DisturbanceProfile piecewise_constant(std::vector<double> breakpoints,
                                                 std::vector<double> values) {
        if (breakpoints.empty() || breakpoints.size() != values.size())
            throw ConfigError("piecewise constant profile needs matching breakpoints and values");
        if (breakpoints.front() != 0.0)
            throw ConfigError("piecewise constant profile must start at time 0");
        for (std::size_t k = 1; k < breakpoints.size(); ++k)
            if (!(breakpoints[k] > breakpoints[k - 1]))
                throw ConfigError("piecewise constant breakpoints must strictly increase");
        DisturbanceProfile p;
        p.kind_ = Kind::piecewise_constant;
        p.breakpoints_ = std::move(breakpoints);
        p.values_ = std::move(values);
        return p;
    }

    /// Uniform values in [-amplitude, amplitude), held constant on intervals
    /// of length hold_time, drawn from a counter-based stream: the value on
    /// interval k depends only on (seed, k).
    static DisturbanceProfile bounded_noise(double amplitude, double hold_time,
                                            std::uint64_t seed) {
        if (!(hold_time > 0.0)) throw ConfigError("noise hold time must be positive");
        DisturbanceProfile p;
        p.kind_ = Kind::bounded_noise;
        p.amplitude_ = amplitude;
        p.hold_ = hold_time;
        p.seed_ = seed;
        return p;
    }

    Kind kind() const { return kind_; }

    double at(double t) const {
        if (t < 0.0) throw DomainError("disturbance queried at negative time");
        switch (kind_) {
            case Kind::zero:
                return 0.0;
            case Kind::sinusoid:
                return amplitude_ * std::sin(omega_ * t + phase_);
            case Kind::square_wave: {
                const double phase = t - period_ * detail::interval_index(t, period_);
                return phase < 0.5 * period_ ? amplitude_ : -amplitude_;
            }
            case Kind::piecewise_constant: {
                auto it = std::upper_bound(breakpoints_.begin(), breakpoints_.end(), t);
                return values_[static_cast<std::size_t>(it - breakpoints_.begin()) - 1];
            }
            case Kind::bounded_noise: {
                const auto k = static_cast<std::uint64_t>(detail::interval_index(t, hold_));
                return amplitude_ * (2.0 * bits_to_unit(splitmix64_at(seed_, k)) - 1.0);
            }
        }
        throw DomainError("corrupt disturbance profile");
    }

    /// |d(t)| <= bound() for all t >= 0.
    double bound() const {
        switch (kind_) {
            case Kind::zero:
                return 0.0;
            case Kind::sinusoid:
            case Kind::square_wave:
            case Kind::bounded_noise:
                return std::fabs(amplitude_);
            case Kind::piecewise_constant: {
                double m = 0.0;
                for (double v : values_) m = std::max(m, std::fabs(v));
                return m;
            }
        }
        return 0.0;
    }

    /// Verifies every discontinuity falls on the integration grid of width h.
    void require_grid_aligned(double h) const {
        auto aligned = [h](double x, const char* what) {
            const double q = x / h;
            if (std::fabs(q - std::round(q)) > 1e-6 || std::round(q) < 1.0)
                throw ConfigError(std::string(what) + " of " + std::to_string(x) +
                                  " is not a positive multiple of the step " + std::to_string(h));
        };
        switch (kind_) {
            case Kind::zero:
            case Kind::sinusoid:
                return;
            case Kind::square_wave:
                aligned(0.5 * period_, "square wave half-period");
                return;
            case Kind::piecewise_constant:
                for (std::size_t k = 1; k < breakpoints_.size(); ++k)
                    aligned(breakpoints_[k], "piecewise constant breakpoint");
                return;
            case Kind::bounded_noise:
                aligned(hold_, "noise hold time");
                return;
        }
    }

    double amplitude() const { return amplitude_; }
    double period() const { return period_; }
    double omega() const { return omega_; }
    double phase() const { return phase_; }
    double hold_time() const { return hold_; }
    std::uint64_t seed() const { return seed_; }
    void reseed(std::uint64_t seed) { seed_ = seed; }
    const std::vector<double>& breakpoints() const { return breakpoints_; }
    const std::vector<double>& values() const { return values_; }

private:
    Kind kind_ = Kind::zero;
    double amplitude_ = 0.0;
    double period_ = 0.0;
    double omega_ = 0.0;
    double phase_ = 0.0;
    double hold_ = 0.0;
    std::uint64_t seed_ = 0;
    std::vector<double> breakpoints_;
    std::vector<double> values_;
};

/// Static description of one follower.
struct FollowerSpec {
    int order = 1;                     // relative degree r, state dimension
    std::vector<expr::Expr> f_rows;    // regressor rows, functions of x1..xr and t
    Eigen::VectorXd theta_true;        // unknown to the controller
    DisturbanceProfile disturbance = DisturbanceProfile::zero();
    Eigen::VectorXd beta;              // r-1 chain coefficients, Hurwitz polynomial
    double k_gain = 1.0;               // sliding feedback gain
    Eigen::MatrixXd Lambda;            // SPD adaptation weighting, m x m
    expr::Expr phi;                    // state-only bound on ||f(x, t)||
    Eigen::VectorXd x_init;

    int m() const { return static_cast<int>(f_rows.size()); }

    void validate() const {
        if (order < 1) throw ConfigError("follower order must be at least 1");
        const int mm = m();
        if (theta_true.size() != mm)
            throw ConfigError("theta has " + std::to_string(theta_true.size()) +
                              " entries but the regressor has " + std::to_string(mm) + " rows");
        if (beta.size() != order - 1)
            throw ConfigError("beta needs exactly " + std::to_string(order - 1) +
                              " coefficients for order " + std::to_string(order));
        if (k_gain < 0.0) throw ConfigError("feedback gain k must not be negative");
        if (Lambda.rows() != mm || Lambda.cols() != mm)
            throw ConfigError("Lambda must be " + std::to_string(mm) + "x" + std::to_string(mm));
        if (mm > 0) {
            if ((Lambda - Lambda.transpose()).norm() > 1e-9 * (1.0 + Lambda.norm()))
                throw ConfigError("Lambda must be symmetric");
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> sa(Lambda);
            if (sa.info() != Eigen::Success || sa.eigenvalues().minCoeff() <= 0.0)
                throw ConfigError("Lambda must be positive definite");
        }
        if (x_init.size() != order)
            throw ConfigError("initial state needs " + std::to_string(order) + " entries");
        for (const auto& row : f_rows) row.bind(order);
        if (!phi.valid()) throw ConfigError("a bound function phi is required");
        phi.bind(order);
        if (phi.time_dependent())
            throw ConfigError("the bound function phi must not depend on time");
    }
};

/// Regressor value f(x, t) as a column vector.
inline Eigen::VectorXd eval_regressor(const FollowerSpec& spec, const Eigen::VectorXd& x,
                                      double t) {
    Eigen::VectorXd f(spec.m());
    const std::span<const double> xs(x.data(), static_cast<std::size_t>(x.size()));
    for (int j = 0; j < spec.m(); ++j) f(j) = spec.f_rows[static_cast<std::size_t>(j)].eval(xs, t);
    return f;
}

/// Chain-form dynamics with the regressor supplied by the caller.
inline Eigen::VectorXd plant_rhs(const FollowerSpec& spec, const Eigen::VectorXd& x,
                                 const Eigen::VectorXd& f_vals, double u, double d) {
    if (x.size() != spec.order) throw DomainError("plant state has the wrong dimension");
    Eigen::VectorXd dx(spec.order);
    for (int l = 0; l + 1 < spec.order; ++l) dx(l) = x(l + 1);
    dx(spec.order - 1) = u + d - f_vals.dot(spec.theta_true);
    return dx;
}

/// Chain-form dynamics; evaluates the regressor and the disturbance at t.
inline Eigen::VectorXd plant_rhs(const FollowerSpec& spec, const Eigen::VectorXd& x, double u,
                                 double t) {
    return plant_rhs(spec, x, eval_regressor(spec, x, t), u, spec.disturbance.at(t));
}

}  // namespace agentsync
