#include <catch2/catch_amalgamated.hpp>

#include <vector>

#include <Eigen/Dense>

#include "agentsync/graph.hpp"
#include "agentsync/observer.hpp"
#include "agentsync/rng.hpp"

using Catch::Matchers::WithinAbs;
using agentsync::CouplingErrors;
using agentsync::DiGraph;
using agentsync::ObserverField;
using agentsync::ObserverGains;

namespace {

struct FieldStorage {
    std::vector<Eigen::VectorXd> v;
    std::vector<Eigen::MatrixXd> S;
    std::vector<Eigen::VectorXd> L;

    ObserverField view() const {
        ObserverField f;
        for (const auto& x : v) f.v.emplace_back(x);
        for (const auto& x : S) f.S.emplace_back(x);
        for (const auto& x : L) f.L.emplace_back(x);
        return f;
    }
};

FieldStorage three_node_field() {
    FieldStorage fs;
    fs.v = {Eigen::VectorXd(2), Eigen::VectorXd(2), Eigen::VectorXd(2)};
    fs.v[0] << 1, 0;
    fs.v[1] << 0, 0;
    fs.v[2] << 0, 3;
    Eigen::MatrixXd rot(2, 2);
    rot << 0, 1,
          -1, 0;
    fs.S = {rot, Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Identity(2, 2)};
    fs.L = {Eigen::VectorXd(2), Eigen::VectorXd(2), Eigen::VectorXd(2)};
    fs.L[0] << 1, 1;
    fs.L[1] << 2, 5;
    fs.L[2] << 0, 0;
    return fs;
}

}  // namespace

TEST_CASE("output-coupled errors scale the summed output gap by the local gain") {
    const FieldStorage fs = three_node_field();
    const ObserverField field = fs.view();
    DiGraph g(3, {{0, 1}, {2, 1}});
    Eigen::RowVectorXd F(2);
    F << 1, 0;
    ObserverGains gains;
    gains.mu1 = 3.0;
    gains.mu2 = 2.0;

    const CouplingErrors ce = coupling_errors(field, F, g, gains, 1);
    // gap = F(v0 - v1) + F(v2 - v1) = 1 + 0; e_v = L1 * gap.
    Eigen::VectorXd want_ev(2);
    want_ev << 2, 5;
    CHECK((ce.e_v - want_ev).norm() == 0.0);
    // e_S = mu1 ((S0 - S1) + (S2 - S1)).
    Eigen::MatrixXd want_es(2, 2);
    want_es << 3, 3,
              -3, 3;
    CHECK((ce.e_S - want_es).norm() == 0.0);

    const auto d = observer_rhs(field, g, gains, 1, ce);
    CHECK((d.v_dot - want_ev).norm() == 0.0);  // S1 = 0, so v' = e_v
    CHECK((d.S_dot - want_es).norm() == 0.0);
    // L' = mu2 ((L0 - L1) + (L2 - L1)).
    Eigen::VectorXd want_ld(2);
    want_ld << -6, -18;
    CHECK((d.L_dot - want_ld).norm() == 0.0);
}

TEST_CASE("state-coupled errors consense the full estimate and freeze the gain") {
    const FieldStorage fs = three_node_field();
    const ObserverField field = fs.view();
    DiGraph g(3, {{0, 1}, {2, 1}});
    Eigen::RowVectorXd F(2);
    F << 1, 0;
    ObserverGains gains;
    gains.mode = ObserverGains::Mode::state_coupled;
    gains.mu_v = 5.0;
    gains.mu1 = 1.0;

    const CouplingErrors ce = coupling_errors(field, F, g, gains, 1);
    Eigen::VectorXd want_ev(2);
    want_ev << 5, 15;  // mu_v ((v0 - v1) + (v2 - v1))
    CHECK((ce.e_v - want_ev).norm() == 0.0);

    const auto d = observer_rhs(field, g, gains, 1, ce);
    CHECK(d.L_dot.norm() == 0.0);
    CHECK((d.v_dot - want_ev).norm() == 0.0);
}

TEST_CASE("agreement across all nodes is an equilibrium of the coupling") {
    FieldStorage fs;
    Eigen::MatrixXd rot(2, 2);
    rot << 0, 1,
          -1, 0;
    Eigen::VectorXd v(2), L(2);
    v << 2, -1;
    L << 1, 0.5;
    fs.v = {v, v, v};
    fs.S = {rot, rot, rot};
    fs.L = {L, L, L};
    const ObserverField field = fs.view();
    DiGraph g(3, {{0, 1}, {2, 1}, {1, 2}});
    Eigen::RowVectorXd F(2);
    F << 1, 0;

    for (auto mode : {ObserverGains::Mode::output_coupled, ObserverGains::Mode::state_coupled}) {
        ObserverGains gains;
        gains.mode = mode;
        const auto d1 = observer_rhs(field, F, g, gains, 1);
        CHECK((d1.v_dot - rot * v).norm() == 0.0);
        CHECK(d1.S_dot.norm() == 0.0);
        CHECK(d1.L_dot.norm() == 0.0);
    }
}

TEST_CASE("an isolated agent drifts on its own estimate only") {
    const FieldStorage fs = three_node_field();
    const ObserverField field = fs.view();
    DiGraph g(3, {{0, 1}});  // agent 2 hears nobody
    Eigen::RowVectorXd F(2);
    F << 1, 0;
    ObserverGains gains;
    const auto d = observer_rhs(field, F, g, gains, 2);
    CHECK((d.v_dot - fs.S[2] * fs.v[2]).norm() == 0.0);
    CHECK(d.S_dot.norm() == 0.0);
    CHECK(d.L_dot.norm() == 0.0);
}

TEST_CASE("coupling rejects out-of-range agent indices") {
    const FieldStorage fs = three_node_field();
    const ObserverField field = fs.view();
    DiGraph g(3, {{0, 1}});
    Eigen::RowVectorXd F(2);
    F << 1, 0;
    ObserverGains gains;
    CHECK_THROWS_AS(coupling_errors(field, F, g, gains, 0), agentsync::DomainError);
    CHECK_THROWS_AS(coupling_errors(field, F, g, gains, 3), agentsync::DomainError);
}

TEST_CASE("innovation terms match frozen hand values") {
    Eigen::MatrixXd S(2, 2);
    S << 0, 1,
        -1, 0;
    Eigen::VectorXd v(2);
    v << 1, 2;
    CouplingErrors ce;
    ce.e_v = Eigen::VectorXd(2);
    ce.e_v << 3, -1;
    ce.e_S = Eigen::MatrixXd::Zero(2, 2);
    ce.e_S(0, 0) = 1.0;
    ce.e_S(1, 1) = 2.0;

    CHECK((innovation_term(S, v, ce, 0) - ce.e_v).norm() == 0.0);

    Eigen::VectorXd want1(2);
    want1 << 0, 1;  // e_S v + S e_v
    CHECK((innovation_term(S, v, ce, 1) - want1).norm() == 0.0);

    Eigen::VectorXd want2(2);
    want2 << 5, -1;  // 2 S e_S v + S^2 e_v
    CHECK((innovation_term(S, v, ce, 2) - want2).norm() == 0.0);

    CHECK_THROWS_AS(innovation_term(S, v, ce, -1), agentsync::DomainError);
}

TEST_CASE("innovation equals the drift-corrected derivative for commuting updates") {
    // Along v' = S v + e_v, S' = e_S the derivative of S^k v is
    // sum_m S^m e_S S^{k-1-m} v + S^k (S v + e_v); when e_S commutes with S the
    // sum collapses to k S^{k-1} e_S v, which is what the innovation encodes.
    agentsync::SplitMix rng(0x0b5e);
    for (int trial = 0; trial < 25; ++trial) {
        Eigen::MatrixXd S(2, 2);
        for (int r = 0; r < 2; ++r)
            for (int c = 0; c < 2; ++c) S(r, c) = rng.next_range(-1.0, 1.0);
        Eigen::VectorXd v(2), e_v(2);
        for (int r = 0; r < 2; ++r) {
            v(r) = rng.next_range(-1.0, 1.0);
            e_v(r) = rng.next_range(-1.0, 1.0);
        }
        CouplingErrors ce;
        ce.e_v = e_v;
        ce.e_S = 0.3 * S + 0.7 * Eigen::MatrixXd::Identity(2, 2);

        const double h = 1e-7;
        const Eigen::MatrixXd Sh = S + h * ce.e_S;
        const Eigen::VectorXd vh = v + h * (S * v + e_v);
        for (int k = 0; k <= 3; ++k) {
            Eigen::MatrixXd Pk = Eigen::MatrixXd::Identity(2, 2);
            Eigen::MatrixXd Pkh = Eigen::MatrixXd::Identity(2, 2);
            for (int p = 0; p < k; ++p) {
                Pk = Pk * S;
                Pkh = Pkh * Sh;
            }
            const Eigen::VectorXd fd = (Pkh * vh - Pk * v) / h - Pk * S * v;
            const Eigen::VectorXd inn = innovation_term(S, v, ce, k);
            INFO("trial " << trial << " k " << k);
            CHECK((fd - inn).norm() < 1e-5 * (1.0 + inn.norm()));
        }
    }
}

TEST_CASE("estimate error metrics are plain norms against the leader data") {
    Eigen::VectorXd v0(2), v1(2), L0(2), L1(2);
    v0 << 1, 0;
    v1 << 1, 2;
    L0 << 0, 0;
    L1 << 3, 4;
    Eigen::MatrixXd S = Eigen::MatrixXd::Identity(2, 2);
    Eigen::MatrixXd S1 = Eigen::MatrixXd::Zero(2, 2);
    const auto e = agentsync::observer_error_metrics(v1, S1, L1, v0, S, L0);
    CHECK_THAT(e.v_err, WithinAbs(2.0, 1e-15));
    CHECK_THAT(e.S_err, WithinAbs(std::sqrt(2.0), 1e-15));
    CHECK_THAT(e.L_err, WithinAbs(5.0, 1e-15));
}
