#pragma once

// Convergence diagnostics computed from sampled signals: least-squares decay
// fits, synchronization times, and energy monotonicity audits.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "agentsync/errors.hpp"
#include "agentsync/trace.hpp"

namespace agentsync {

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
    long count = 0;
};

/// Streaming least-squares line fit. Center the abscissa near the data for
/// good conditioning; the slope is shift-invariant.
class RunningFit {
public:
    void add(double x, double y) {
        ++n_;
        sx_ += x;
        sy_ += y;
        sxx_ += x * x;
        syy_ += y * y;
        sxy_ += x * y;
    }

    LinearFit result() const {
        LinearFit fit;
        fit.count = n_;
        if (n_ < 2) return fit;
        const double n = static_cast<double>(n_);
        const double dx = n * sxx_ - sx_ * sx_;
        const double dy = n * syy_ - sy_ * sy_;
        const double cov = n * sxy_ - sx_ * sy_;
        if (dx <= 0.0) return fit;
        fit.slope = cov / dx;
        fit.intercept = (sy_ - fit.slope * sx_) / n;
        fit.r2 = dy > 1e-30 ? (cov * cov) / (dx * dy) : 0.0;
        return fit;
    }

private:
    long n_ = 0;
    double sx_ = 0.0, sy_ = 0.0, sxx_ = 0.0, syy_ = 0.0, sxy_ = 0.0;
};

inline LinearFit fit_line(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw DomainError("fit_line needs matching sample counts");
    RunningFit f;
    for (std::size_t i = 0; i < x.size(); ++i) f.add(x[i], y[i]);
    return f.result();
}

struct AgentConvergence {
    std::vector<double> terminal_errors;  // |e^(k)| at the final sample
    double terminal_error_max = 0.0;
    LinearFit observer_decay;  // fit of log(v_err) over the trailing half
    double sync_time = 0.0;    // first time after which errors stay below threshold
    bool synchronized = false;
};

struct ConvergenceReport {
    std::vector<AgentConvergence> agents;
    double terminal_error_max = 0.0;
    double sync_time = 0.0;
    bool converged = false;
    long v_violations = 0;       // recorded steps where V rose beyond tolerance
    double v_worst_delta = 0.0;  // largest recorded one-step increase of V
    double v_tolerance = 0.0;
};

/// Post-hoc convergence analysis of a recorded trace. Expects the standard
/// column layout (t, per-agent e0.., verr.., and V) and at least 100 rows.
inline ConvergenceReport convergence_metrics(const Trace& trace, std::span<const int> orders,
                                             double sync_threshold) {
    if (trace.rows() < 100) throw DomainError("convergence metrics need at least 100 samples");
    if (!(sync_threshold > 0.0)) throw DomainError("sync threshold must be positive");

    const std::size_t rows = trace.rows();
    const std::size_t t_col = trace.column_index("t");
    const double t_end = trace.value(rows - 1, t_col);
    const double t_fit = 0.5 * t_end;
    const double t_center = 0.75 * t_end;

    ConvergenceReport rep;
    rep.agents.resize(orders.size());
    std::vector<std::size_t> e_cols, verr_cols;
    for (std::size_t a = 0; a < orders.size(); ++a) {
        const std::string tag = "_a" + std::to_string(a + 1);
        for (int k = 0; k < orders[a]; ++k)
            e_cols.push_back(trace.column_index("e" + std::to_string(k) + tag));
        verr_cols.push_back(trace.column_index("verr" + tag));
    }

    std::vector<RunningFit> fits(orders.size());
    std::vector<double> last_exceed(orders.size(), -1.0);
    double global_last_exceed = -1.0;
    const std::size_t v_col = trace.column_index("V");
    const double v0 = trace.value(0, v_col);
    rep.v_tolerance = 1e-9 * (1.0 + v0);
    double v_prev = v0;

    for (std::size_t r = 0; r < rows; ++r) {
        const double t = trace.value(r, t_col);
        std::size_t ecur = 0;
        for (std::size_t a = 0; a < orders.size(); ++a) {
            double emax = 0.0;
            for (int k = 0; k < orders[a]; ++k, ++ecur)
                emax = std::max(emax, std::fabs(trace.value(r, e_cols[ecur])));
            if (emax > sync_threshold) {
                last_exceed[a] = t;
                global_last_exceed = t;
            }
            if (t >= t_fit)
                fits[a].add(t - t_center, std::log(trace.value(r, verr_cols[a]) + 1e-15));
            if (r + 1 == rows) {
                auto& ac = rep.agents[a];
                ac.terminal_errors.resize(static_cast<std::size_t>(orders[a]));
                for (int k = 0; k < orders[a]; ++k)
                    ac.terminal_errors[static_cast<std::size_t>(k)] =
                        std::fabs(trace.value(r, e_cols[ecur - static_cast<std::size_t>(orders[a]) +
                                                        static_cast<std::size_t>(k)]));
                ac.terminal_error_max = emax;
            }
        }
        const double v = trace.value(r, v_col);
        if (r > 0) {
            const double dv = v - v_prev;
            rep.v_worst_delta = std::max(rep.v_worst_delta, dv);
            if (dv > rep.v_tolerance) ++rep.v_violations;
        }
        v_prev = v;
    }

    const double dt = trace.value(1, t_col) - trace.value(0, t_col);
    for (std::size_t a = 0; a < orders.size(); ++a) {
        auto& ac = rep.agents[a];
        ac.observer_decay = fits[a].result();
        ac.synchronized = ac.terminal_error_max < sync_threshold;
        ac.sync_time = last_exceed[a] < 0.0 ? 0.0 : last_exceed[a] + dt;
        rep.terminal_error_max = std::max(rep.terminal_error_max, ac.terminal_error_max);
    }
    rep.sync_time = global_last_exceed < 0.0 ? 0.0 : global_last_exceed + dt;
    rep.converged = rep.terminal_error_max < sync_threshold;
    return rep;
}

}  // namespace agentsync
