#pragma once

// Fixed-step closed-loop simulation of the full multi-agent system: leader,
// adaptive distributed observers, per-agent adaptive controllers, and plants,
// integrated on one shared grid. The active graph and the disturbance values
// are sampled at the start of each step and held constant across the step, so
// the integrated vector field is smooth inside every step.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "agentsync/control.hpp"
#include "agentsync/errors.hpp"
#include "agentsync/graph.hpp"
#include "agentsync/leader.hpp"
#include "agentsync/metrics.hpp"
#include "agentsync/observer.hpp"
#include "agentsync/plant.hpp"
#include "agentsync/trace.hpp"

namespace agentsync {

struct ControlConfig {
    enum class Mode { baseline, disturbance_rejection };
    Mode mode = Mode::baseline;
    double epsilon = 1e-3;  // boundary layer width; 0 selects the exact sign
};

/// Complete closed-loop system description. Fill the declarative fields, then
/// call finalize() once to validate and derive cached quantities.
struct System {
    LeaderSystem leader;
    Eigen::VectorXd L0;
    ObserverGains gains;
    std::vector<FollowerSpec> followers;
    std::vector<SwitchingSchedule> schedule_store;  // exactly one; indirection keeps System movable
    ControlConfig control;

    // Initial estimates; empty entries default to zero at finalize().
    std::vector<Eigen::VectorXd> v_init;
    std::vector<Eigen::MatrixXd> S_init;
    std::vector<Eigen::VectorXd> L_init;
    std::vector<Eigen::VectorXd> theta_hat_init;
    std::vector<double> D_hat_init;

    // Derived by finalize().
    std::vector<CompanionForm> companion;
    std::vector<Eigen::LLT<Eigen::MatrixXd>> Lambda_llt;
    std::vector<Eigen::MatrixXd> S_true_pow;  // S^0 .. S^max_order

    const SwitchingSchedule& schedule() const { return schedule_store.front(); }
    int agent_count() const { return static_cast<int>(followers.size()); }
    int n() const { return leader.n(); }

    int max_order() const {
        int r = 1;
        for (const auto& f : followers) r = std::max(r, f.order);
        return r;
    }

    void finalize() {
        leader.validate();
        if (followers.empty()) throw ConfigError("the system needs at least one follower");
        if (schedule_store.size() != 1) throw ConfigError("the system needs exactly one schedule");
        if (schedule().node_count() != agent_count() + 1)
            throw ConfigError("the schedule covers " + std::to_string(schedule().node_count()) +
                              " nodes but the system has " + std::to_string(agent_count() + 1));
        if (L0.size() != leader.n())
            throw ConfigError("observer gain L0 must have the leader dimension");
        if (gains.mu1 < 0.0 || gains.mu2 < 0.0 || gains.mu_v < 0.0)
            throw ConfigError("observer gains must not be negative");
        if (control.epsilon < 0.0) throw ConfigError("boundary layer epsilon must not be negative");

        companion.clear();
        Lambda_llt.clear();
        for (const auto& f : followers) {
            f.validate();
            companion.push_back(require_hurwitz_beta(f.beta));
            Lambda_llt.emplace_back(f.Lambda);
        }

        const int n = leader.n();
        const auto N = followers.size();
        auto fit = [&](auto& store, auto make, const char* what) {
            if (store.empty()) {
                store.resize(N);
                for (std::size_t i = 0; i < N; ++i) store[i] = make(i);
            } else if (store.size() != N) {
                throw ConfigError(std::string(what) + " initial values must cover every follower");
            }
        };
        fit(v_init, [&](std::size_t) { return Eigen::VectorXd::Zero(n).eval(); }, "observer state");
        fit(S_init, [&](std::size_t) { return Eigen::MatrixXd::Zero(n, n).eval(); },
            "dynamics estimate");
        fit(L_init, [&](std::size_t) { return Eigen::VectorXd::Zero(n).eval(); }, "gain estimate");
        fit(theta_hat_init,
            [&](std::size_t i) { return Eigen::VectorXd::Zero(followers[i].m()).eval(); },
            "parameter estimate");
        if (D_hat_init.empty()) D_hat_init.assign(N, 0.0);
        else if (D_hat_init.size() != N)
            throw ConfigError("disturbance bound estimates must cover every follower");
        for (std::size_t i = 0; i < N; ++i) {
            if (v_init[i].size() != n || L_init[i].size() != n || S_init[i].rows() != n ||
                S_init[i].cols() != n)
                throw ConfigError("initial estimates of follower " + std::to_string(i + 1) +
                                  " have the wrong dimension");
            if (theta_hat_init[i].size() != followers[i].m())
                throw ConfigError("initial parameter estimate of follower " +
                                  std::to_string(i + 1) + " has the wrong dimension");
        }

        S_true_pow.clear();
        Eigen::MatrixXd P = Eigen::MatrixXd::Identity(n, n);
        for (int k = 0; k <= max_order(); ++k) {
            S_true_pow.push_back(P);
            P = leader.S * P;
        }
    }
};

struct RunConfig {
    double h = 1e-3;
    double duration = 10.0;
    enum class Integrator { rk4, euler };
    Integrator integrator = Integrator::rk4;
    long record_stride = 1;
    double sync_threshold = 1e-2;
    double residual_window = 10.0;      // trailing window for predicted-derivative residuals
    double band_window_fraction = 0.75;  // tracking band measured on t >= fraction * duration

    long steps() const { return std::lround(duration / h); }

    void validate(const System& sys) const {
        if (!(h > 0.0)) throw ConfigError("step size must be positive");
        if (!(duration > 0.0)) throw ConfigError("duration must be positive");
        const double q = duration / h;
        if (std::fabs(q - std::round(q)) > 1e-6)
            throw ConfigError("duration must be an integer multiple of the step size");
        if (steps() < 1) throw ConfigError("the run must cover at least one step");
        if (record_stride < 1) throw ConfigError("record stride must be at least 1");
        if (steps() % record_stride != 0)
            throw ConfigError("record stride must divide the step count " +
                              std::to_string(steps()));
        if (!(sync_threshold > 0.0)) throw ConfigError("sync threshold must be positive");
        if (!(residual_window > 0.0) || residual_window > duration)
            throw ConfigError("the residual window must lie within the run duration");
        if (!(band_window_fraction > 0.0) || band_window_fraction >= 1.0)
            throw ConfigError("the band window fraction must lie in (0, 1)");

        auto aligned = [this](double x, const std::string& what) {
            const double r = x / h;
            if (std::fabs(r - std::round(r)) > 1e-6)
                throw ConfigError(what + " at " + std::to_string(x) +
                                  " does not fall on the integration grid of step " +
                                  std::to_string(h));
        };
        const auto& sched = sys.schedule();
        for (const auto& e : sched.entries()) aligned(e.start, "switching instant");
        if (sched.periodic()) aligned(sched.period(), "switching period");
        for (const auto& f : sys.followers) f.disturbance.require_grid_aligned(h);
    }
};

/// Offsets of every block inside the flat state vector:
/// [v0 | per agent: x, theta_hat, D_hat, v, S (column-major), L].
struct StateLayout {
    struct Agent {
        long x = 0, theta = 0, D = 0, v = 0, S = 0, L = 0;
        int order = 0, m = 0;
    };
    int n = 0;
    std::vector<Agent> agent;
    long total = 0;

    static StateLayout build(const System& sys) {
        StateLayout lay;
        lay.n = sys.n();
        long off = lay.n;  // leader state first
        for (const auto& f : sys.followers) {
            Agent a;
            a.order = f.order;
            a.m = f.m();
            a.x = off;
            off += f.order;
            a.theta = off;
            off += f.m();
            a.D = off;
            off += 1;
            a.v = off;
            off += lay.n;
            a.S = off;
            off += static_cast<long>(lay.n) * lay.n;
            a.L = off;
            off += lay.n;
            lay.agent.push_back(a);
        }
        lay.total = off;
        return lay;
    }

    Eigen::VectorBlock<const Eigen::VectorXd> v0(const Eigen::VectorXd& y) const {
        return y.segment(0, n);
    }
    Eigen::VectorBlock<const Eigen::VectorXd> x(const Eigen::VectorXd& y, std::size_t i) const {
        return y.segment(agent[i].x, agent[i].order);
    }
    Eigen::VectorBlock<const Eigen::VectorXd> theta(const Eigen::VectorXd& y,
                                                    std::size_t i) const {
        return y.segment(agent[i].theta, agent[i].m);
    }
    double D_hat(const Eigen::VectorXd& y, std::size_t i) const { return y(agent[i].D); }
    Eigen::VectorBlock<const Eigen::VectorXd> v(const Eigen::VectorXd& y, std::size_t i) const {
        return y.segment(agent[i].v, n);
    }
    Eigen::Map<const Eigen::MatrixXd> S(const Eigen::VectorXd& y, std::size_t i) const {
        return Eigen::Map<const Eigen::MatrixXd>(y.data() + agent[i].S, n, n);
    }
    Eigen::VectorBlock<const Eigen::VectorXd> L(const Eigen::VectorXd& y, std::size_t i) const {
        return y.segment(agent[i].L, n);
    }

    /// Name of the block containing flat index `pos`, with its agent.
    std::string locate(long pos) const {
        if (pos < n) return "leader state";
        for (std::size_t i = 0; i < agent.size(); ++i) {
            const auto& a = agent[i];
            const std::string tag = "agent " + std::to_string(i + 1) + " ";
            if (pos >= a.x && pos < a.x + a.order) return tag + "plant state";
            if (pos >= a.theta && pos < a.theta + a.m) return tag + "parameter estimate";
            if (pos == a.D) return tag + "disturbance bound estimate";
            if (pos >= a.v && pos < a.v + n) return tag + "observer state";
            if (pos >= a.S && pos < a.S + static_cast<long>(n) * n)
                return tag + "dynamics estimate";
            if (pos >= a.L && pos < a.L + n) return tag + "gain estimate";
        }
        return "state index " + std::to_string(pos);
    }

    Eigen::VectorXd pack_initial(const System& sys) const {
        Eigen::VectorXd y(total);
        y.segment(0, n) = sys.leader.v0_init;
        for (std::size_t i = 0; i < agent.size(); ++i) {
            const auto& a = agent[i];
            y.segment(a.x, a.order) = sys.followers[i].x_init;
            if (a.m > 0) y.segment(a.theta, a.m) = sys.theta_hat_init[i];
            y(a.D) = sys.D_hat_init[i];
            y.segment(a.v, n) = sys.v_init[i];
            Eigen::Map<Eigen::MatrixXd>(y.data() + a.S, n, n) = sys.S_init[i];
            y.segment(a.L, n) = sys.L_init[i];
        }
        return y;
    }
};

/// Reusable buffers for the integrator.
struct Workspace {
    Eigen::VectorXd k1, k2, k3, k4, tmp;
    ObserverField field;
    std::vector<double> d_held;

    void resize(const StateLayout& lay) {
        k1.resize(lay.total);
        k2.resize(lay.total);
        k3.resize(lay.total);
        k4.resize(lay.total);
        tmp.resize(lay.total);
        d_held.assign(lay.agent.size(), 0.0);
    }
};

namespace detail {

inline void build_field(const System& sys, const StateLayout& lay, const Eigen::VectorXd& y,
                        ObserverField& field) {
    field.v.clear();
    field.S.clear();
    field.L.clear();
    field.v.emplace_back(lay.v0(y));
    field.S.emplace_back(sys.leader.S);
    field.L.emplace_back(sys.L0);
    for (std::size_t i = 0; i < lay.agent.size(); ++i) {
        field.v.emplace_back(lay.v(y, i));
        field.S.emplace_back(lay.S(y, i));
        field.L.emplace_back(lay.L(y, i));
    }
}

}  // namespace detail

/// Time derivative of the full closed-loop state. The graph and the held
/// disturbance values are fixed; t only enters smooth terms.
inline void closed_loop_rhs(const System& sys, const StateLayout& lay, double t,
                            const Eigen::VectorXd& y, const DiGraph& g,
                            std::span<const double> d_held, Eigen::VectorXd& dy,
                            Workspace& ws) {
    const int n = lay.n;
    dy.resize(lay.total);
    dy.segment(0, n) = sys.leader.S * lay.v0(y);

    detail::build_field(sys, lay, y, ws.field);

    for (std::size_t i = 0; i < lay.agent.size(); ++i) {
        const auto& spec = sys.followers[i];
        const auto& a = lay.agent[i];
        const int agent_id = static_cast<int>(i) + 1;

        const CouplingErrors ce =
            coupling_errors(ws.field, sys.leader.F, g, sys.gains, agent_id);
        const ObserverDeriv od = observer_rhs(ws.field, g, sys.gains, agent_id, ce);
        dy.segment(a.v, n) = od.v_dot;
        Eigen::Map<Eigen::MatrixXd>(dy.data() + a.S, n, n) = od.S_dot;
        dy.segment(a.L, n) = od.L_dot;

        const Eigen::VectorXd x = lay.x(y, i);
        const Eigen::VectorXd v_i = lay.v(y, i);
        const Eigen::MatrixXd S_i = lay.S(y, i);
        const double p = filtered_reference(spec, sys.leader.F, x, v_i, S_i);
        const double s = sliding_variable(spec, x, p);
        const double p_rate = filtered_reference_rate(spec, sys.leader.F, x, v_i, S_i, ce);
        const Eigen::VectorXd f_vals = eval_regressor(spec, x, t);
        const bool reject = sys.control.mode == ControlConfig::Mode::disturbance_rejection;
        const double u =
            reject ? rejection_control(spec, f_vals, lay.theta(y, i), lay.D_hat(y, i), s,
                                       p_rate, sys.control.epsilon)
                   : baseline_control(spec, f_vals, lay.theta(y, i), s, p_rate);

        dy.segment(a.x, a.order) = plant_rhs(spec, x, f_vals, u, d_held[i]);
        const AdaptationRates rates =
            adaptation_rates(sys.Lambda_llt[i], f_vals, s, reject, sys.control.epsilon);
        if (a.m > 0) dy.segment(a.theta, a.m) = rates.theta_hat_dot;
        dy(a.D) = rates.D_hat_dot;
    }
}

/// Advances the state by one grid step from time t. The active graph and the
/// disturbances are the ones sampled at t.
inline void step(const System& sys, const StateLayout& lay, const RunConfig& cfg, double t,
                 const DiGraph& g, std::span<const double> d_held, Eigen::VectorXd& y,
                 Workspace& ws) {
    const double h = cfg.h;
    closed_loop_rhs(sys, lay, t, y, g, d_held, ws.k1, ws);
    if (cfg.integrator == RunConfig::Integrator::euler) {
        y += h * ws.k1;
        return;
    }
    ws.tmp = y + 0.5 * h * ws.k1;
    closed_loop_rhs(sys, lay, t + 0.5 * h, ws.tmp, g, d_held, ws.k2, ws);
    ws.tmp = y + 0.5 * h * ws.k2;
    closed_loop_rhs(sys, lay, t + 0.5 * h, ws.tmp, g, d_held, ws.k3, ws);
    ws.tmp = y + h * ws.k3;
    closed_loop_rhs(sys, lay, t + h, ws.tmp, g, d_held, ws.k4, ws);
    y += h / 6.0 * (ws.k1 + 2.0 * ws.k2 + 2.0 * ws.k3 + ws.k4);
}

struct DivergenceInfo {
    double time = 0.0;
    std::string where;
};

struct DerivativeCheck {
    double max_residual = 0.0;  // analytic rate vs. central difference, switch steps excluded
    long samples = 0;
    long skipped = 0;
};

struct AgentSummary {
    int index = 0;
    int order = 1;
    std::vector<double> terminal_errors;  // |e^(k)(T)| for k < order
    double terminal_error_max = 0.0;
    double v_err_T = 0.0, S_err_T = 0.0, L_err_T = 0.0;
    LinearFit observer_decay;                    // log v_err over the trailing half
    std::vector<double> predicted_deriv_resid;   // max |F S_i^k v_i - y0^(k)| per k, trailing window
    double sync_time = 0.0;
    bool synchronized = false;
    double tracking_band = 0.0;  // max |e(t)| over the trailing band window
    double chain_residual_rms = 0.0;  // error-chain identity residual; 0 for order 1
    DerivativeCheck deriv_check;
    double D_hat_T = 0.0;
    double disturbance_bound = 0.0;
    std::optional<std::uint64_t> noise_seed;
};

struct RunSummary {
    double h = 0.0;
    double duration = 0.0;
    RunConfig::Integrator integrator = RunConfig::Integrator::rk4;
    ControlConfig control;
    double sync_threshold = 0.0;
    long steps = 0;
    long recorded_rows = 0;

    std::vector<AgentSummary> agents;
    double terminal_error_max = 0.0;
    double sync_time = 0.0;
    bool converged = false;

    double V0 = 0.0, V_T = 0.0;
    long v_violations = 0;
    double v_worst_delta = 0.0;
    double v_tolerance = 0.0;
    double W_total = 0.0;
    double W_tail_increment = 0.0;  // growth over the trailing tenth of the run
    double tracking_band = 0.0;
    double max_pdot_residual = 0.0;  // worst derivative-check residual over agents

    std::optional<DivergenceInfo> divergence;
    double wall_seconds = 0.0;
};

struct RunResult {
    Trace trace;
    RunSummary summary;
};

namespace detail {

/// Resolves the active graph per step index; exact on the grid by construction.
class StepSchedule {
public:
    StepSchedule(const SwitchingSchedule& s, double h) : sched_(s) {
        for (const auto& e : s.entries())
            entry_steps_.push_back(std::lround(e.start / h));
        period_steps_ = s.periodic() ? std::lround(s.period() / h) : 0;
    }

    int sigma(long step) const {
        long q = step;
        if (period_steps_ > 0) q = step % period_steps_;
        else if (q >= entry_steps_.back())
            return sched_.entries().back().graph_index;
        auto it = std::upper_bound(entry_steps_.begin(), entry_steps_.end(), q);
        const auto idx = static_cast<std::size_t>(it - entry_steps_.begin()) - 1;
        return sched_.entries()[idx].graph_index;
    }

private:
    const SwitchingSchedule& sched_;
    std::vector<long> entry_steps_;
    long period_steps_ = 0;
};

inline std::vector<std::string> trace_columns(const System& sys) {
    std::vector<std::string> cols{"t"};
    for (int i = 1; i <= sys.agent_count(); ++i) {
        const std::string tag = "_a" + std::to_string(i);
        cols.push_back("y" + tag);
        for (int k = 0; k < sys.followers[static_cast<std::size_t>(i - 1)].order; ++k)
            cols.push_back("e" + std::to_string(k) + tag);
        cols.push_back("s" + tag);
        cols.push_back("verr" + tag);
        cols.push_back("Serr" + tag);
        cols.push_back("Lerr" + tag);
        cols.push_back("u" + tag);
        cols.push_back("d" + tag);
    }
    cols.push_back("V");
    cols.push_back("W");
    cols.push_back("graph");
    return cols;
}

}  // namespace detail

/// Runs the closed loop over the configured horizon, recording the trace and
/// the running diagnostics. On divergence the result carries the partial
/// trace and the failure attribution instead of throwing.
inline RunResult run(const System& sys, const RunConfig& cfg) {
    cfg.validate(sys);
    const auto t_start = std::chrono::steady_clock::now();

    const StateLayout lay = StateLayout::build(sys);
    const long steps = cfg.steps();
    const double h = cfg.h;
    const double T = cfg.duration;
    const auto N = static_cast<std::size_t>(sys.agent_count());
    const int n = sys.n();
    const int max_k = sys.max_order() - 1;  // predicted-derivative orders checked

    Eigen::VectorXd y = lay.pack_initial(sys);
    Workspace ws;
    ws.resize(lay);
    detail::StepSchedule sigma(sys.schedule(), h);

    Trace trace(detail::trace_columns(sys));
    std::vector<double> row(trace.cols());

    RunSummary sum;
    sum.h = h;
    sum.duration = T;
    sum.integrator = cfg.integrator;
    sum.control = sys.control;
    sum.sync_threshold = cfg.sync_threshold;
    sum.steps = steps;
    sum.agents.resize(N);
    for (std::size_t i = 0; i < N; ++i) {
        auto& as = sum.agents[i];
        as.index = static_cast<int>(i) + 1;
        as.order = sys.followers[i].order;
        as.predicted_deriv_resid.assign(static_cast<std::size_t>(max_k) + 1, 0.0);
        as.disturbance_bound = sys.followers[i].disturbance.bound();
        if (sys.followers[i].disturbance.kind() == DisturbanceProfile::Kind::bounded_noise)
            as.noise_seed = sys.followers[i].disturbance.seed();
    }

    // Running accumulators.
    std::vector<RunningFit> decay_fits(N);
    std::vector<double> last_exceed(N, -1.0);
    std::vector<double> band(N, 0.0);
    std::vector<double> chain_sumsq(N, 0.0);
    std::vector<long> chain_count(N, 0);
    std::vector<double> p_prev(N, 0.0), p_prev2(N, 0.0), pdot_prev(N, 0.0);
    std::vector<DerivativeCheck> fd(N);
    double global_last_exceed = -1.0;
    double V_prev = 0.0, q_prev = 0.0, W = 0.0, W_tail_ref = 0.0;
    const double t_fit = 0.5 * T, t_center = 0.75 * T;
    const double t_band = cfg.band_window_fraction * T;
    const double t_resid = T - cfg.residual_window;
    const double t_tail = 0.9 * T;
    bool tail_ref_set = false;
    const bool reject = sys.control.mode == ControlConfig::Mode::disturbance_rejection;

    std::vector<double> y0d(static_cast<std::size_t>(sys.max_order()) + 1, 0.0);

    long j = 0;
    for (; j <= steps; ++j) {
        const double t = static_cast<double>(j) * h;
        const int gi = sigma.sigma(j);
        const DiGraph& g = sys.schedule().graph(gi);

        if (!y.allFinite()) {
            long bad = 0;
            for (long q = 0; q < y.size(); ++q)
                if (!std::isfinite(y(q))) {
                    bad = q;
                    break;
                }
            sum.divergence = DivergenceInfo{t, lay.locate(bad)};
            break;
        }

        // Leader output derivatives from the true dynamics.
        const Eigen::VectorXd v0 = lay.v0(y);
        for (int k = 0; k <= sys.max_order(); ++k)
            y0d[static_cast<std::size_t>(k)] =
                (sys.leader.F * (sys.S_true_pow[static_cast<std::size_t>(k)] * v0)).value();

        detail::build_field(sys, lay, y, ws.field);

        double V = 0.0, q_now = 0.0;
        std::size_t col = 1;
        row[0] = t;
        for (std::size_t i = 0; i < N; ++i) {
            const auto& spec = sys.followers[i];
            const int r = spec.order;
            const int agent_id = static_cast<int>(i) + 1;
            const Eigen::VectorXd x = lay.x(y, i);
            const Eigen::VectorXd v_i = lay.v(y, i);
            const Eigen::MatrixXd S_i = lay.S(y, i);

            const CouplingErrors ce =
                coupling_errors(ws.field, sys.leader.F, g, sys.gains, agent_id);
            const double p = filtered_reference(spec, sys.leader.F, x, v_i, S_i);
            const double s = sliding_variable(spec, x, p);
            const double p_rate = filtered_reference_rate(spec, sys.leader.F, x, v_i, S_i, ce);
            const Eigen::VectorXd f_vals = eval_regressor(spec, x, t);
            const double D_hat = lay.D_hat(y, i);
            const double u = reject ? rejection_control(spec, f_vals, lay.theta(y, i), D_hat, s,
                                                        p_rate, sys.control.epsilon)
                                    : baseline_control(spec, f_vals, lay.theta(y, i), s, p_rate);
            const double d_val = spec.disturbance.at(t);

            const ObserverErrors oerr = observer_error_metrics(
                v_i, S_i, lay.L(y, i), v0, sys.leader.S, sys.L0);

            double e_max = 0.0;
            row[col++] = x(0);
            for (int k = 0; k < r; ++k) {
                const double ek = x(k) - y0d[static_cast<std::size_t>(k)];
                e_max = std::max(e_max, std::fabs(ek));
                row[col++] = ek;
            }
            row[col++] = s;
            row[col++] = oerr.v_err;
            row[col++] = oerr.S_err;
            row[col++] = oerr.L_err;
            row[col++] = u;
            row[col++] = d_val;

            // Energy and dissipation terms.
            const Eigen::VectorXd theta_tilde =
                Eigen::VectorXd(lay.theta(y, i)) - spec.theta_true;
            const double D_tilde = D_hat - spec.disturbance.bound();
            V += lyapunov_term(s, theta_tilde, spec.Lambda, D_tilde, reject);
            q_now += spec.k_gain * s * s;

            // Predicted output derivatives against the true leader output.
            if (t >= t_resid) {
                Eigen::VectorXd wk = v_i;
                for (int k = 0; k <= max_k; ++k) {
                    const double res =
                        std::fabs((sys.leader.F * wk).value() - y0d[static_cast<std::size_t>(k)]);
                    auto& slot = sum.agents[i].predicted_deriv_resid[static_cast<std::size_t>(k)];
                    slot = std::max(slot, res);
                    wk = S_i * wk;
                }
            }

            // Error-chain identity: the top derivative must equal the last
            // companion row applied to the lower errors plus the diagnostic forcing.
            if (r >= 2) {
                const double ubar = error_chain_forcing(
                    spec, sys.leader.F, s, v_i, S_i,
                    std::span<const double>(y0d.data(), static_cast<std::size_t>(r)));
                const auto& A = sys.companion[i].A;
                double lastrow = ubar;
                for (int c = 0; c < r - 1; ++c)
                    lastrow += A(r - 2, c) * (x(c) - y0d[static_cast<std::size_t>(c)]);
                const double resid =
                    (x(r - 1) - y0d[static_cast<std::size_t>(r - 1)]) - lastrow;
                chain_sumsq[i] += resid * resid;
                ++chain_count[i];
            }

            // Analytic reference rate vs. central difference one step back.
            if (j >= 2) {
                if (sigma.sigma(j - 1) != sigma.sigma(j - 2)) {
                    ++fd[i].skipped;
                } else {
                    const double fd_rate = (p - p_prev2[i]) / (2.0 * h);
                    fd[i].max_residual =
                        std::max(fd[i].max_residual, std::fabs(pdot_prev[i] - fd_rate));
                    ++fd[i].samples;
                }
            }
            p_prev2[i] = p_prev[i];
            p_prev[i] = p;
            pdot_prev[i] = p_rate;

            if (e_max > cfg.sync_threshold) {
                last_exceed[i] = t;
                global_last_exceed = t;
            }
            if (t >= t_fit) decay_fits[i].add(t - t_center, std::log(oerr.v_err + 1e-15));
            if (t >= t_band)
                band[i] = std::max(band[i], std::fabs(x(0) - y0d[0]));

            if (j == steps) {
                auto& as = sum.agents[i];
                as.terminal_errors.resize(static_cast<std::size_t>(r));
                for (int k = 0; k < r; ++k)
                    as.terminal_errors[static_cast<std::size_t>(k)] =
                        std::fabs(x(k) - y0d[static_cast<std::size_t>(k)]);
                as.terminal_error_max = e_max;
                as.v_err_T = oerr.v_err;
                as.S_err_T = oerr.S_err;
                as.L_err_T = oerr.L_err;
                as.D_hat_T = D_hat;
            }
        }

        if (j == 0) {
            sum.V0 = V;
            sum.v_tolerance = 1e-9 * (1.0 + V);
            V_prev = V;
        } else {
            W += 0.5 * h * (q_prev + q_now);
            const double dv = V - V_prev;
            sum.v_worst_delta = std::max(sum.v_worst_delta, dv);
            if (dv > sum.v_tolerance) ++sum.v_violations;
            V_prev = V;
        }
        q_prev = q_now;
        if (!tail_ref_set && t >= t_tail) {
            W_tail_ref = W;
            tail_ref_set = true;
        }

        row[col++] = V;
        row[col++] = W;
        row[col++] = static_cast<double>(gi);
        if (j % cfg.record_stride == 0) trace.append_row(row);

        if (j == steps) {
            sum.V_T = V;
            break;
        }

        for (std::size_t i = 0; i < N; ++i)
            ws.d_held[i] = sys.followers[i].disturbance.at(t);
        step(sys, lay, cfg, t, g, std::span<const double>(ws.d_held), y, ws);
    }

    const double dt_row = h;
    for (std::size_t i = 0; i < N; ++i) {
        auto& as = sum.agents[i];
        as.observer_decay = decay_fits[i].result();
        as.sync_time = last_exceed[i] < 0.0 ? 0.0 : last_exceed[i] + dt_row;
        as.synchronized = !sum.divergence && as.terminal_error_max < cfg.sync_threshold;
        as.tracking_band = band[i];
        as.chain_residual_rms =
            chain_count[i] > 0 ? std::sqrt(chain_sumsq[i] / static_cast<double>(chain_count[i]))
                               : 0.0;
        as.deriv_check = fd[i];
        sum.terminal_error_max = std::max(sum.terminal_error_max, as.terminal_error_max);
        sum.tracking_band = std::max(sum.tracking_band, as.tracking_band);
        sum.max_pdot_residual = std::max(sum.max_pdot_residual, fd[i].max_residual);
    }
    sum.sync_time = global_last_exceed < 0.0 ? 0.0 : global_last_exceed + dt_row;
    sum.converged = !sum.divergence && sum.terminal_error_max < cfg.sync_threshold;
    sum.W_total = W;
    sum.W_tail_increment = tail_ref_set ? W - W_tail_ref : W;
    sum.recorded_rows = static_cast<long>(trace.rows());

    sum.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return RunResult{std::move(trace), std::move(sum)};
}

}  // namespace agentsync
