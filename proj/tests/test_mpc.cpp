#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <random>
#include <string>

#include "iclstm/convexity.hpp"
#include "iclstm/mpc.hpp"
#include "test_util.hpp"

using namespace iclstm;
using testutil::vec;

namespace {

const Eigen::MatrixXd kNoXi;

data::Scaler identity_scaler(int dim) {
    data::Scaler s;
    s.lo = Eigen::VectorXd::Zero(dim);
    s.hi = Eigen::VectorXd::Ones(dim);
    return s;
}

data::Scaler box_scaler(const Box& raw) {
    const Box eb = expand_box(raw);
    data::Scaler s;
    s.lo = eb.lo;
    s.hi = eb.hi;
    return s;
}

// Linear RNN that reproduces its own state features exactly: predictions
// equal the fed-in state, so rolled-out states stay at x0.
mpc::Surrogate cstr_stub_surrogate() {
    ModelParams m = make_model(Arch::rnn, 4, {2}, 2);
    m.hidden_act = {ActivationKind::linear};
    m.output_act = {ActivationKind::linear};
    auto& lay = std::get<RnnLayer>(m.layers[0]);
    lay.Wx(0, 0) = 1.0;
    lay.Wx(1, 1) = 1.0;
    m.Wy.setIdentity();
    m.validate();
    mpc::Surrogate s;
    s.model = std::move(m);
    s.in_scaler = identity_scaler(8);
    s.out_scaler = identity_scaler(2);
    s.repeats = 3;
    s.n_raw = 4;
    s.validate();
    return s;
}

// Same idea for the solar features; the tracking channel reads the duty
// input plus a bias, so the objective becomes sum_k (u_k + u_bias)^2.
mpc::Surrogate solar_stub_surrogate(double u_bias) {
    ModelParams m = make_model(Arch::rnn, 7, {4}, 4);
    m.hidden_act = {ActivationKind::linear};
    m.output_act = {ActivationKind::linear};
    auto& lay = std::get<RnnLayer>(m.layers[0]);
    lay.Wx(0, 0) = 1.0;
    lay.Wx(1, 1) = 1.0;
    lay.Wx(2, 2) = 1.0;
    lay.Wx(3, 5) = 1.0;
    m.Wy.setIdentity();
    m.by(3) = u_bias;
    m.validate();
    mpc::Surrogate s;
    s.model = std::move(m);
    s.in_scaler = identity_scaler(14);
    s.out_scaler = identity_scaler(4);
    s.repeats = 2;
    s.n_raw = 7;
    s.validate();
    return s;
}

// Smooth convex surrogate over physically plausible scaler ranges. The head
// bias is made non-negative so predictions stay in the non-negative part of
// the target range (magnitudes for the CSTR, deviation current for solar).
mpc::Surrogate cstr_smooth_surrogate(std::uint64_t seed) {
    ModelParams m = testutil::random_convex_model(Arch::iclstm, 4, {5, 4}, 2, seed, 0.25);
    m.hidden_act = {ActivationKind::softplus, 10.0};
    m.dense_act = {ActivationKind::softplus, 10.0};
    m.by = m.by.cwiseAbs();
    mpc::Surrogate s;
    s.model = std::move(m);
    Box raw;
    raw.lo = vec({-2.0, -80.0, -3.5, -5e5});
    raw.hi = vec({2.0, 80.0, 3.5, 5e5});
    s.in_scaler = box_scaler(raw);
    s.out_scaler.lo = vec({0.0, 0.0});
    s.out_scaler.hi = vec({2.0, 80.0});
    s.repeats = 2;
    s.n_raw = 4;
    s.validate();
    return s;
}

mpc::Surrogate solar_smooth_surrogate(std::uint64_t seed, double scale) {
    ModelParams m = testutil::random_convex_model(Arch::iclstm, 7, {6, 5}, 4, seed, scale);
    m.hidden_act = {ActivationKind::softplus, 10.0};
    m.dense_act = {ActivationKind::softplus, 10.0};
    m.by = m.by.cwiseAbs();
    mpc::Surrogate s;
    s.model = std::move(m);
    Box raw;
    raw.lo = vec({10.0, 2.0, 0.0, 600.0, 20.0, 0.1, 3.0});
    raw.hi = vec({60.0, 9.0, 1.0, 1000.0, 40.0, 0.95, 8.0});
    s.in_scaler = box_scaler(raw);
    s.out_scaler.lo = vec({10.0, 2.0, 0.0, 0.0});
    s.out_scaler.hi = vec({60.0, 9.0, 1.0, 10.0});
    s.repeats = 2;
    s.n_raw = 7;
    s.validate();
    return s;
}

Eigen::MatrixXd solar_xi_rows(int n) {
    Eigen::MatrixXd xi(n, 3);
    for (int k = 0; k < n; ++k) xi.row(k) << 800.0 + 10.0 * k, 300.0 + 0.5 * k, 5.0;
    return xi;
}

Eigen::MatrixXd random_inputs(const mpc::MpcProblem& pb, int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ud(0.05, 0.95);
    Eigen::MatrixXd u(n, pb.n_u());
    for (int k = 0; k < n; ++k) {
        for (int j = 0; j < pb.n_u(); ++j) {
            u(k, j) = pb.u_lo(j) + ud(rng) * (pb.u_hi(j) - pb.u_lo(j));
        }
    }
    return u;
}

void check_close(double fd, double an, double rel) {
    const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
    CHECK(std::abs(fd - an) / denom < rel);
}

}  // namespace

TEST_CASE("identity stub rollout keeps the state constant") {
    const mpc::MpcProblem pb = mpc::make_cstr_problem(cstr_stub_surrogate(), false);
    const Eigen::VectorXd x0 = vec({-1.2, 55.0});
    const Eigen::MatrixXd u = random_inputs(pb, 3, 11);

    const mpc::Rollout ro = mpc::rollout(pb, x0, u, kNoXi);
    CHECK(ro.states.rows() == 4);
    CHECK(ro.preds.rows() == 3);
    CHECK(ro.caches.size() == 3);
    CHECK(ro.sgn(0) == -1.0);
    CHECK(ro.sgn(1) == 1.0);
    CHECK(ro.u == u);
    for (int k = 0; k <= 3; ++k) {
        CHECK((ro.states.row(k).transpose() - x0).norm() == 0.0);
    }
    CHECK((ro.preds.row(2).transpose() - x0).norm() == 0.0);

    const mpc::MpcProblem ps = mpc::make_solar_problem(solar_stub_surrogate(0.0), false);
    const Eigen::VectorXd y0 = vec({30.0, 5.0, 0.5});
    const Eigen::MatrixXd us = random_inputs(ps, 2, 12);
    const mpc::Rollout rs = mpc::rollout(ps, y0, us, solar_xi_rows(2));
    for (int k = 0; k <= 2; ++k) {
        CHECK((rs.states.row(k).transpose() - y0).norm() == 0.0);
    }
    CHECK(rs.preds(0, 3) == doctest::Approx(us(0, 0)).epsilon(1e-14));
    CHECK(rs.preds(1, 3) == doctest::Approx(us(1, 0)).epsilon(1e-14));
    CHECK(rs.xi.rows() == 2);

    CHECK_THROWS_AS(mpc::rollout(pb, x0, Eigen::MatrixXd::Zero(2, 3), kNoXi), DimensionError);
    CHECK_THROWS_AS(mpc::rollout(pb, vec({1.0, 2.0, 3.0}), u, kNoXi), DimensionError);
    CHECK_THROWS_AS(mpc::rollout(ps, y0, us, solar_xi_rows(1)), DimensionError);
}

TEST_CASE("rollout adjoint matches finite differences through the feedback chain") {
    const mpc::MpcProblem pb = mpc::make_cstr_problem(cstr_smooth_surrogate(21), false);
    const Eigen::VectorXd x0 = vec({-1.2, 55.0});
    const int N = 3;
    const Eigen::MatrixXd u = random_inputs(pb, N, 22);

    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> ud(-1.0, 1.0);
    Eigen::MatrixXd dstates(N, 2);
    for (Eigen::Index j = 0; j < dstates.size(); ++j) dstates.data()[j] = ud(rng);

    const auto phi = [&](const Eigen::MatrixXd& uu) {
        const mpc::Rollout ro = mpc::rollout(pb, x0, uu, kNoXi);
        double v = 0.0;
        for (int k = 0; k < N; ++k) v += dstates.row(k).dot(ro.states.row(k + 1));
        return v;
    };

    const mpc::Rollout ro = mpc::rollout(pb, x0, u, kNoXi);
    const Eigen::MatrixXd g = mpc::rollout_adjoint(pb, ro, dstates, Eigen::VectorXd());
    const Eigen::VectorXd width = pb.u_hi - pb.u_lo;
    const double h = 1e-6;
    for (int k = 0; k < N; ++k) {
        for (int j = 0; j < pb.n_u(); ++j) {
            Eigen::MatrixXd up = u, dn = u;
            up(k, j) += h * width(j);
            dn(k, j) -= h * width(j);
            const double fd = (phi(up) - phi(dn)) / (2.0 * h);
            check_close(fd, g(k, j) * width(j), 1e-5);
        }
    }

    CHECK_THROWS_AS(mpc::rollout_adjoint(pb, ro, Eigen::MatrixXd::Zero(N, 3), Eigen::VectorXd()),
                    DimensionError);
}

TEST_CASE("objective gradients match finite differences for both plants") {
    // CSTR: adjoint seeds from the quadratic state cost plus the direct
    // input term, exactly as the solver assembles them.
    {
        const mpc::MpcProblem pb = mpc::make_cstr_problem(cstr_smooth_surrogate(31), false);
        const Eigen::VectorXd x0 = vec({0.9, -30.0});
        const int N = 2;
        const Eigen::MatrixXd u = random_inputs(pb, N, 32);
        const mpc::Rollout ro = mpc::rollout(pb, x0, u, kNoXi);

        Eigen::MatrixXd dstates(N, 2);
        for (int k = 1; k <= N; ++k) {
            dstates.row(k - 1) =
                2.0 * ro.states.row(k).cwiseQuotient(pb.state_scale.transpose().cwiseAbs2());
        }
        const Eigen::VectorXd hw2 = (0.5 * (pb.u_hi - pb.u_lo)).cwiseAbs2();
        Eigen::MatrixXd g = mpc::rollout_adjoint(pb, ro, dstates, Eigen::VectorXd());
        for (int k = 0; k < N; ++k) g.row(k) += 2.0 * u.row(k).cwiseQuotient(hw2.transpose());

        const Eigen::VectorXd width = pb.u_hi - pb.u_lo;
        const double h = 1e-6;
        for (int k = 0; k < N; ++k) {
            for (int j = 0; j < pb.n_u(); ++j) {
                Eigen::MatrixXd up = u, dn = u;
                up(k, j) += h * width(j);
                dn(k, j) -= h * width(j);
                const double fd = (mpc::objective_cstr(pb, mpc::rollout(pb, x0, up, kNoXi), up) -
                                   mpc::objective_cstr(pb, mpc::rollout(pb, x0, dn, kNoXi), dn)) /
                                  (2.0 * h);
                check_close(fd, g(k, j) * width(j), 1e-5);
            }
        }
    }
    // Solar: the tracking objective seeds only the deviation channel.
    {
        const mpc::MpcProblem pb = mpc::make_solar_problem(solar_smooth_surrogate(41, 0.05), false);
        const Eigen::VectorXd x0 = vec({30.0, 5.5, 0.5});
        const int N = 3;
        const Eigen::MatrixXd xi = solar_xi_rows(N);
        const Eigen::MatrixXd u = random_inputs(pb, N, 42);
        const mpc::Rollout ro = mpc::rollout(pb, x0, u, xi);

        const Eigen::VectorXd daux = 2.0 * ro.preds.col(3);
        const Eigen::MatrixXd g =
            mpc::rollout_adjoint(pb, ro, Eigen::MatrixXd::Zero(N, 3), daux);

        const double width = pb.u_hi(0) - pb.u_lo(0);
        const double h = 1e-6;
        for (int k = 0; k < N; ++k) {
            Eigen::MatrixXd up = u, dn = u;
            up(k, 0) += h * width;
            dn(k, 0) -= h * width;
            const double fd = (mpc::objective_solar(mpc::rollout(pb, x0, up, xi)) -
                               mpc::objective_solar(mpc::rollout(pb, x0, dn, xi))) /
                              (2.0 * h);
            check_close(fd, g(k, 0) * width, 1e-5);
        }
    }
}

TEST_CASE("objective worked examples") {
    mpc::Rollout ro;
    ro.preds = Eigen::MatrixXd::Zero(2, 4);
    ro.preds(0, 3) = 3.0;
    ro.preds(1, 3) = 4.0;
    CHECK(mpc::objective_solar(ro) == doctest::Approx(25.0).epsilon(1e-15));

    mpc::MpcProblem pb;
    pb.plant = mpc::Plant::cstr;
    pb.u_lo = vec({-1.0, -1.0});
    pb.u_hi = vec({1.0, 1.0});
    pb.state_scale = Eigen::Vector2d(1.0, 1.0);
    mpc::Rollout rc;
    rc.states = Eigen::MatrixXd::Zero(2, 2);
    rc.states.row(0) << 0.3, -10.0;  // the measured state does not enter the cost
    Eigen::MatrixXd u(1, 2);
    u << 1.0, 1.0;
    CHECK(mpc::objective_cstr(pb, rc, u) == doctest::Approx(2.0).epsilon(1e-15));

    pb.state_scale = Eigen::Vector2d(2.0, 80.0);
    rc.states.row(1) << 1.0, 40.0;
    u.setZero();
    CHECK(mpc::objective_cstr(pb, rc, u) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("lyapunov helpers and constraint activation") {
    const mpc::MpcProblem pb = mpc::make_cstr_problem(cstr_stub_surrogate(), false);
    const Eigen::VectorXd x = vec({-1.5, 70.0});
    CHECK(pb.region.lyapunov(x) == doctest::Approx(313.0).epsilon(1e-12));
    CHECK(pb.region.contains(x));

    CHECK(mpc::lyapunov_constraint(pb, x, x) == doctest::Approx(1e-8).epsilon(1e-6));
    CHECK(mpc::lyapunov_constraint(pb, x, vec({0.0, 0.0})) ==
          doctest::Approx(-313.0 + 1e-8).epsilon(1e-12));

    CHECK(mpc::in_terminal_box(pb, vec({0.019, 2.99})));
    CHECK_FALSE(mpc::in_terminal_box(pb, vec({0.021, 1.0})));
    CHECK_FALSE(mpc::in_terminal_box(pb, vec({0.01, 3.01})));

    CHECK(mpc::lyapunov_active(pb, x));
    CHECK_FALSE(mpc::lyapunov_active(pb, vec({0.01, 1.0})));
    CHECK_FALSE(mpc::lyapunov_active(pb, vec({2.0, 80.0})));
}

TEST_CASE("constraint values at identity-stub rollouts") {
    const mpc::MpcProblem pc = mpc::make_cstr_problem(cstr_stub_surrogate(), false);
    const Eigen::VectorXd xc = vec({-1.2, 55.0});
    const mpc::Rollout rc = mpc::rollout(pc, xc, random_inputs(pc, 2, 51), kNoXi);
    const Eigen::VectorXd gc = mpc::eval_constraints(pc, rc);
    REQUIRE(gc.size() == 2);
    CHECK(gc(0) == doctest::Approx(1e-8).epsilon(1e-6));
    CHECK(gc(1) == doctest::Approx(1e-8).epsilon(1e-6));

    // Inside the terminal box or outside the region the constraint is off.
    const mpc::Rollout r0 = mpc::rollout(pc, vec({0.01, 1.0}), random_inputs(pc, 2, 52), kNoXi);
    CHECK(mpc::eval_constraints(pc, r0).size() == 0);

    const mpc::MpcProblem ps = mpc::make_solar_problem(solar_stub_surrogate(0.0), false);
    const Eigen::VectorXd xs = vec({30.0, 5.0, 0.5});
    Eigen::MatrixXd us(2, 1);
    us << 0.2, 0.4;
    const mpc::Rollout rs = mpc::rollout(ps, xs, us, solar_xi_rows(2));
    const Eigen::VectorXd gs = mpc::eval_constraints(ps, rs);
    REQUIRE(gs.size() == 12);
    for (int k = 0; k < 2; ++k) {
        CHECK(gs(6 * k + 0) == doctest::Approx(-30.0).epsilon(1e-12));
        CHECK(gs(6 * k + 1) == doctest::Approx(-20.0).epsilon(1e-12));
        CHECK(gs(6 * k + 2) == doctest::Approx(12.5 - 14.7).epsilon(1e-12));
        CHECK(gs(6 * k + 3) == doctest::Approx(11.7 - 12.5).epsilon(1e-12));
        CHECK(gs(6 * k + 4) == doctest::Approx(-8.0).epsilon(1e-12));
        CHECK(gs(6 * k + 5) == doctest::Approx(-8.0).epsilon(1e-12));
    }
}

TEST_CASE("solver finds interior and bound-active optima on stub problems") {
    mpc::SolverConfig cfg;
    cfg.starts = 2;
    cfg.seed = 7;

    // J = sum (u_k - 0.5)^2, interior optimum.
    const mpc::MpcProblem interior = mpc::make_solar_problem(solar_stub_surrogate(-0.5), false);
    const Eigen::VectorXd x0 = vec({30.0, 5.0, 0.5});
    const mpc::SolveResult a = mpc::solve(interior, x0, solar_xi_rows(2), cfg, nullptr);
    CHECK(a.feasible);
    CHECK(a.max_violation <= cfg.feas_tol);
    CHECK(a.starts_used == 2);
    CHECK(std::abs(a.u_opt(0, 0) - 0.5) < 1e-4);
    CHECK(std::abs(a.u_opt(1, 0) - 0.5) < 1e-4);
    const mpc::Rollout replay = mpc::rollout(interior, x0, a.u_opt, solar_xi_rows(2));
    CHECK(a.objective_value == doctest::Approx(mpc::objective_solar(replay)).epsilon(1e-12));

    // J = sum (u_k - 2)^2 clamps at the upper bound.
    const mpc::MpcProblem clamped = mpc::make_solar_problem(solar_stub_surrogate(-2.0), true);
    const mpc::SolveResult b = mpc::solve(clamped, x0, solar_xi_rows(2), cfg, nullptr);
    CHECK(b.starts_used == 1);  // certified problems solve once
    CHECK(b.u_opt(0, 0) == doctest::Approx(0.95).epsilon(1e-12));
    CHECK(b.u_opt(1, 0) == doctest::Approx(0.95).epsilon(1e-12));

    // Warm start at the known optimum stays there.
    Eigen::MatrixXd warm(2, 1);
    warm << 0.5, 0.5;
    const mpc::SolveResult c = mpc::solve(interior, x0, solar_xi_rows(2), cfg, &warm);
    CHECK(std::abs(c.u_opt(0, 0) - 0.5) < 1e-6);
    Eigen::MatrixXd bad(3, 1);
    bad.setConstant(0.5);
    CHECK_THROWS_AS(mpc::solve(interior, x0, solar_xi_rows(2), cfg, &bad), DimensionError);

    // CSTR stub: the midpoint start is the exact optimum u = 0 and the
    // identity predictions sit within the feasibility tolerance.
    const mpc::MpcProblem pc = mpc::make_cstr_problem(cstr_stub_surrogate(), false);
    const mpc::SolveResult d = mpc::solve(pc, vec({-1.2, 55.0}), kNoXi, cfg, nullptr);
    CHECK(d.feasible);
    CHECK(d.max_violation == doctest::Approx(1e-8).epsilon(1e-6));
    CHECK(d.u_opt.norm() < 1e-9);
}

TEST_CASE("solver matches a grid-search oracle on a convex solar surrogate") {
    const mpc::MpcProblem pb = mpc::make_solar_problem(solar_smooth_surrogate(61, 0.05), false);
    const Eigen::VectorXd x0 = vec({30.0, 5.5, 0.5});
    const Eigen::MatrixXd xi = solar_xi_rows(2);

    double best = std::numeric_limits<double>::infinity();
    int feasible_points = 0;
    const int n_grid = 41;
    Eigen::MatrixXd u(2, 1);
    for (int i = 0; i < n_grid; ++i) {
        for (int j = 0; j < n_grid; ++j) {
            u(0, 0) = 0.1 + 0.85 * i / (n_grid - 1);
            u(1, 0) = 0.1 + 0.85 * j / (n_grid - 1);
            const mpc::Rollout ro = mpc::rollout(pb, x0, u, xi);
            const Eigen::VectorXd g = mpc::eval_constraints(pb, ro);
            if (g.maxCoeff() > 1e-6) continue;
            ++feasible_points;
            best = std::min(best, mpc::objective_solar(ro));
        }
    }
    REQUIRE(feasible_points > 0);

    mpc::SolverConfig cfg;
    cfg.starts = 3;
    cfg.seed = 3;
    const mpc::SolveResult res = mpc::solve(pb, x0, xi, cfg, nullptr);
    CHECK(res.feasible);
    CHECK(res.objective_value <= best + 1e-4 * std::max(1.0, std::abs(best)));

    // Feasibility honesty: replaying the reported inputs reproduces the
    // reported violation.
    const mpc::Rollout replay = mpc::rollout(pb, x0, res.u_opt, xi);
    const Eigen::VectorXd g = mpc::eval_constraints(pb, replay);
    CHECK(std::max(0.0, g.maxCoeff()) <= cfg.feas_tol);
}

TEST_CASE("horizon objective is midpoint-convex for convex surrogates") {
    // Single-step problems compose affine feature maps with a convex model,
    // so the probe must come back clean.
    mpc::MpcProblem ps = mpc::make_solar_problem(solar_smooth_surrogate(71, 0.1), true);
    ps.horizon = 1;
    const PointModel fs = mpc::objective_point_model(ps, vec({30.0, 5.5, 0.5}), solar_xi_rows(1));
    CHECK(fs.n_in == 1);
    const auto rs = convexity::check_midpoint(fs, mpc::input_sequence_box(ps), 500, 1e-7, 5);
    CHECK(rs.n_pairs == 500);
    CHECK(rs.midpoint_violations == 0);

    mpc::MpcProblem pc = mpc::make_cstr_problem(cstr_smooth_surrogate(72), true);
    pc.horizon = 1;
    const PointModel fc = mpc::objective_point_model(pc, vec({-1.2, 55.0}), kNoXi);
    CHECK(fc.n_in == 2);
    const auto rc = convexity::check_midpoint(fc, mpc::input_sequence_box(pc), 500, 1e-7, 6);
    CHECK(rc.midpoint_violations == 0);

    // The two-step box stacks per-step bounds.
    const mpc::MpcProblem p2 = mpc::make_cstr_problem(cstr_smooth_surrogate(72), true);
    const Box b2 = mpc::input_sequence_box(p2);
    REQUIRE(b2.dim() == 4);
    CHECK(b2.lo(2) == -3.5);
    CHECK(b2.hi(3) == 5e5);

    // Consistency of the point view with the direct objective.
    const PointModel f2 = mpc::objective_point_model(p2, vec({-1.2, 55.0}), kNoXi);
    const Eigen::VectorXd v = vec({1.0, -2e5, -0.5, 1e5});
    Eigen::MatrixXd u(2, 2);
    u << 1.0, -2e5, -0.5, 1e5;
    const double direct = mpc::objective_cstr(p2, mpc::rollout(p2, vec({-1.2, 55.0}), u, kNoXi), u);
    CHECK(f2.eval(v)(0) == doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("closed loop replays the plant exactly and records applied inputs") {
    const mpc::MpcProblem pb = mpc::make_solar_problem(solar_stub_surrogate(-0.5), true);
    const Eigen::VectorXd x0 = vec({30.0, 5.0, 0.5});
    const Eigen::MatrixXd trace = solar_xi_rows(3);
    mpc::SolverConfig cfg;
    cfg.starts = 1;

    const mpc::ClosedLoopResult r = mpc::closed_loop(pb, x0, 3, trace, cfg);
    CHECK(r.steps_run == 3);
    CHECK_FALSE(r.converged);
    REQUIRE(r.trajectory.rows() == 4);
    CHECK(r.mean_step_solve_s == doctest::Approx(r.total_solve_s / 3.0).epsilon(1e-12));

    Eigen::VectorXd x = x0;
    for (int k = 0; k < 3; ++k) {
        const auto& st = r.steps[k];
        CHECK((st.x - x).norm() == 0.0);
        CHECK(st.solve.feasible);
        CHECK((st.u - st.solve.u_opt.row(0).transpose()).norm() == 0.0);
        CHECK((st.xi - trace.row(k).transpose()).norm() == 0.0);
        const Eigen::MatrixXd traj = plants::solar_integrate(
            pb.solar_spec, x, st.u(0), trace.row(k).transpose(), pb.solar_euler_step, 12000);
        x = traj.row(traj.rows() - 1).transpose();
        CHECK((r.trajectory.row(k + 1).transpose() - x).norm() == 0.0);
    }

    CHECK_THROWS_AS(mpc::closed_loop(pb, x0, 5, trace, cfg), DimensionError);
}

TEST_CASE("cstr closed loop refusal, early exit and plant replay") {
    const mpc::MpcProblem pb = mpc::make_cstr_problem(cstr_stub_surrogate(), false);
    mpc::SolverConfig cfg;
    cfg.starts = 2;

    CHECK_THROWS_AS(mpc::closed_loop(pb, vec({2.0, 80.0}), 5, kNoXi, cfg),
                    mpc::InfeasibleStartError);

    const mpc::ClosedLoopResult done = mpc::closed_loop(pb, vec({0.01, 1.0}), 5, kNoXi, cfg);
    CHECK(done.converged);
    CHECK(done.steps_run == 0);
    CHECK(done.trajectory.rows() == 1);

    const Eigen::VectorXd x0 = vec({-1.2, 55.0});
    const mpc::ClosedLoopResult r = mpc::closed_loop(pb, x0, 2, kNoXi, cfg);
    CHECK(r.steps_run >= 1);
    CHECK(r.trajectory.rows() == r.steps_run + 1);
    Eigen::VectorXd x = x0;
    for (int k = 0; k < r.steps_run; ++k) {
        const auto& st = r.steps[k];
        CHECK(st.lyapunov == doctest::Approx(pb.region.lyapunov(st.x)).epsilon(1e-12));
        const Eigen::Vector2d uk = st.u;
        const auto rhs = [&](const Eigen::VectorXd& xx) -> Eigen::VectorXd {
            return plants::cstr_rhs(pb.cstr_spec, xx, uk);
        };
        const Eigen::MatrixXd traj = plants::integrate(rhs, x, pb.cstr_euler_step, 50);
        x = traj.row(traj.rows() - 1).transpose();
        CHECK((r.trajectory.row(k + 1).transpose() - x).norm() == 0.0);
    }
}

TEST_CASE("closed loop csv export") {
    const mpc::MpcProblem pb = mpc::make_solar_problem(solar_stub_surrogate(-0.5), true);
    mpc::SolverConfig cfg;
    cfg.starts = 1;
    const mpc::ClosedLoopResult r =
        mpc::closed_loop(pb, vec({30.0, 5.0, 0.5}), 2, solar_xi_rows(2), cfg);

    const std::string path = "mpc_test_closed_loop.csv";
    mpc::export_closed_loop_csv(pb, r, path);
    const std::string text = read_text_file(path);
    std::remove(path.c_str());
    CHECK(text.rfind("time_s,v_pv,i_s,v_c,u,G,T_K,i_L,objective,feasible\n", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 4);  // header + 2 steps + terminal
}

TEST_CASE("benchmark is deterministic and exports the pinned schema") {
    std::vector<mpc::BenchmarkModel> models;
    models.push_back({"rnn-stub", cstr_stub_surrogate(), false});
    const std::vector<Eigen::VectorXd> x0s{vec({-1.2, 55.0})};
    mpc::SolverConfig cfg;
    cfg.starts = 2;

    const auto rows = mpc::benchmark(mpc::Plant::cstr, models, x0s, 2, kNoXi, cfg, 2);
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].model == "rnn-stub");
    CHECK(rows[0].initial_condition == format_double(-1.2) + ";" + format_double(55.0));
    CHECK(rows[0].repeat == 0);
    CHECK(rows[1].repeat == 1);
    CHECK(rows[0].steps_to_converge == rows[1].steps_to_converge);
    CHECK(rows[0].converged == rows[1].converged);

    const auto again = mpc::benchmark(mpc::Plant::cstr, models, x0s, 2, kNoXi, cfg, 2);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].steps_to_converge == again[i].steps_to_converge);
        CHECK(rows[i].converged == again[i].converged);
    }

    const std::string path = "mpc_test_benchmark.csv";
    mpc::export_benchmark_csv(rows, path);
    const std::string text = read_text_file(path);
    std::remove(path.c_str());
    CHECK(text.rfind("model,initial_condition,repeat,steps_to_converge,total_solve_s,"
                     "mean_step_solve_s,converged\n", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 3);

    CHECK_THROWS_AS(mpc::benchmark(mpc::Plant::cstr, {}, x0s, 2, kNoXi, cfg, 2),
                    InvalidArgumentError);
}

TEST_CASE("surrogate and problem validation") {
    mpc::Surrogate s = cstr_stub_surrogate();
    CHECK_NOTHROW(s.validate());
    s.in_scaler = identity_scaler(7);
    CHECK_THROWS_AS(s.validate(), DimensionError);
    s = cstr_stub_surrogate();
    s.repeats = 0;
    CHECK_THROWS_AS(s.validate(), InvalidArgumentError);

    // A solar-shaped surrogate cannot be wired into a CSTR problem.
    CHECK_THROWS_AS(mpc::make_cstr_problem(solar_stub_surrogate(0.0), false), DimensionError);

    data::SequenceDataset ds;
    ds.input_scaler = identity_scaler(8);
    ds.target_scaler = identity_scaler(2);
    ds.repeats = 3;
    ds.n_raw = 4;
    const mpc::Surrogate made = mpc::make_surrogate(cstr_stub_surrogate().model, ds);
    CHECK(made.repeats == 3);
    CHECK(made.n_raw == 4);
    CHECK(made.in_scaler.dim() == 8);
}
