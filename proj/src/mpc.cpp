#include "iclstm/mpc.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>
#include <utility>

#include "iclstm/training.hpp"

namespace iclstm::mpc {

std::string to_string(Plant p) { return p == Plant::cstr ? "cstr" : "solar"; }

void Surrogate::validate() const {
    model.validate();
    if (n_raw < 1 || repeats < 1) {
        throw InvalidArgumentError("surrogate: raw width and repeats must be positive");
    }
    if (model.n_x != n_raw) {
        throw DimensionError("surrogate: model raw input width does not match the features");
    }
    if (in_scaler.dim() != 2 * n_raw) {
        throw DimensionError("surrogate: input scaler must cover the expanded features");
    }
    if (out_scaler.dim() != model.n_o) {
        throw DimensionError("surrogate: target scaler does not match the model output");
    }
}

Surrogate make_surrogate(ModelParams model, const data::SequenceDataset& ds) {
    Surrogate s;
    s.model = std::move(model);
    s.in_scaler = ds.input_scaler;
    s.out_scaler = ds.target_scaler;
    s.repeats = ds.repeats;
    s.n_raw = ds.n_raw;
    s.validate();
    return s;
}

void MpcProblem::validate() const {
    surrogate.validate();
    if (horizon < 1) throw InvalidArgumentError("mpc: horizon must be >= 1");
    const int expect_u = plant == Plant::cstr ? 2 : 1;
    if (u_lo.size() != expect_u || u_hi.size() != expect_u) {
        throw DimensionError("mpc: input bounds do not match the plant");
    }
    if (((u_hi - u_lo).array() <= 0.0).any()) {
        throw InvalidArgumentError("mpc: input bounds must satisfy lo < hi");
    }
    if (sample_period <= 0.0) throw InvalidArgumentError("mpc: sampling period must be positive");
    const int expect_raw = plant == Plant::cstr ? 4 : 7;
    const int expect_out = plant == Plant::cstr ? 2 : 4;
    if (surrogate.n_raw != expect_raw || surrogate.model.n_o != expect_out) {
        throw DimensionError("mpc: surrogate feature layout does not match the plant");
    }
    if (plant == Plant::cstr && (state_scale.array() <= 0.0).any()) {
        throw InvalidArgumentError("mpc: state scaling must be positive");
    }
}

MpcProblem make_cstr_problem(Surrogate s, bool certified) {
    MpcProblem p;
    p.plant = Plant::cstr;
    p.surrogate = std::move(s);
    p.horizon = 2;
    p.u_lo = Eigen::Vector2d(-3.5, -5e5);
    p.u_hi = Eigen::Vector2d(3.5, 5e5);
    p.sample_period = 5e-3;
    p.convex_certified = certified;
    p.state_scale = p.region.axis_extents();
    p.validate();
    return p;
}

MpcProblem make_solar_problem(Surrogate s, bool certified) {
    MpcProblem p;
    p.plant = Plant::solar;
    p.surrogate = std::move(s);
    p.horizon = 2;
    p.u_lo = Eigen::VectorXd::Constant(1, 0.1);
    p.u_hi = Eigen::VectorXd::Constant(1, 0.95);
    p.sample_period = 60.0;
    p.convex_certified = certified;
    p.validate();
    return p;
}

namespace {

double sign_of(double v) { return v >= 0.0 ? 1.0 : -1.0; }

Eigen::VectorXd feature_row(const MpcProblem& pb, const Eigen::VectorXd& x,
                            const Eigen::VectorXd& u, const Eigen::VectorXd& xi) {
    if (pb.plant == Plant::cstr) return data::cstr_feature_row(x, u);
    return data::solar_feature_row(x, xi(0), xi(1), u(0), xi(2));
}

}  // namespace

Rollout rollout(const MpcProblem& pb, const Eigen::VectorXd& x0, const Eigen::MatrixXd& u_seq,
                const Eigen::MatrixXd& xi_seq) {
    const Surrogate& s = pb.surrogate;
    const int N = static_cast<int>(u_seq.rows());
    if (N < 1 || u_seq.cols() != pb.n_u()) {
        throw DimensionError("rollout: input sequence must be N x n_u with N >= 1");
    }
    if (x0.size() != pb.n_state()) throw DimensionError("rollout: state dimension");
    require_finite(x0, "rollout initial state");
    require_finite(u_seq, "rollout input sequence");
    if (pb.plant == Plant::solar) {
        if (xi_seq.rows() < N || xi_seq.cols() != 3) {
            throw DimensionError("rollout: solar runs need N exogenous rows [G, T, i_L]");
        }
        require_finite(xi_seq, "rollout exogenous sequence");
    }

    Rollout ro;
    ro.x0 = x0;
    ro.u = u_seq.topRows(N);
    if (pb.plant == Plant::solar) ro.xi = xi_seq.topRows(N);
    if (pb.plant == Plant::cstr) ro.sgn = x0.unaryExpr([](double v) { return sign_of(v); });
    const int n_t = s.model.n_o;
    ro.preds.resize(N, n_t);
    ro.states.resize(N + 1, pb.n_state());
    ro.states.row(0) = x0.transpose();
    ro.caches.resize(N);

    Eigen::VectorXd x = x0;
    for (int k = 0; k < N; ++k) {
        const Eigen::VectorXd row = feature_row(pb, x, u_seq.row(k).transpose(),
                                                pb.plant == Plant::solar
                                                    ? Eigen::VectorXd(xi_seq.row(k).transpose())
                                                    : Eigen::VectorXd());
        const Eigen::VectorXd scaled = s.in_scaler.transform(expand_input(row));
        Eigen::MatrixXd xrow = scaled.transpose();
        if (!s.model.convex_arch()) xrow = xrow.leftCols(s.n_raw).eval();
        const BatchSeq xs(s.repeats, xrow);
        const BatchSeq ys = forward_batched(s.model, xs, &ro.caches[k]);
        const Eigen::VectorXd scaled_pred = ys.back().row(0).transpose();
        const Eigen::VectorXd pred = s.out_scaler.inverse(scaled_pred);
        ro.preds.row(k) = pred.transpose();
        if (pb.plant == Plant::cstr) {
            x = ro.sgn.cwiseProduct(pred.head(2).cwiseAbs());
        } else {
            x = pred.head(3);
        }
        ro.states.row(k + 1) = x.transpose();
    }
    return ro;
}

Eigen::MatrixXd rollout_adjoint(const MpcProblem& pb, const Rollout& ro,
                                const Eigen::MatrixXd& dstates, const Eigen::VectorXd& daux) {
    const Surrogate& s = pb.surrogate;
    const int N = static_cast<int>(ro.u.rows());
    const int n_s = pb.n_state();
    const int n_t = s.model.n_o;
    if (dstates.rows() != N || dstates.cols() != n_s) {
        throw DimensionError("rollout_adjoint: dstates must be N x n_state");
    }
    if (pb.plant == Plant::solar && daux.size() != 0 && daux.size() != N) {
        throw DimensionError("rollout_adjoint: daux must be empty or length N");
    }
    const Eigen::VectorXd out_slope = s.out_scaler.hi - s.out_scaler.lo;
    const Eigen::VectorXd in_slope = s.in_scaler.slope();

    Eigen::MatrixXd du = Eigen::MatrixXd::Zero(N, pb.n_u());
    Eigen::VectorXd carry = Eigen::VectorXd::Zero(n_s);
    for (int k = N - 1; k >= 0; --k) {
        const Eigen::VectorXd dstate = dstates.row(k).transpose() + carry;
        Eigen::VectorXd dpred = Eigen::VectorXd::Zero(n_t);
        if (pb.plant == Plant::cstr) {
            // x = sgn(x0) . |pred|
            for (int j = 0; j < 2; ++j) {
                const double p = ro.preds(k, j);
                const double dmag = p > 0.0 ? 1.0 : (p < 0.0 ? -1.0 : 0.0);
                dpred(j) = ro.sgn(j) * dmag * dstate(j);
            }
        } else {
            dpred.head(3) = dstate;
            if (daux.size()) dpred(3) += daux(k);
        }
        BatchSeq dY(s.repeats, Eigen::MatrixXd::Zero(1, n_t));
        dY.back() = dpred.cwiseProduct(out_slope).transpose();
        BatchSeq d_input;
        train::backward(s.model, ro.caches[k], dY, &d_input);
        Eigen::VectorXd dsc = Eigen::VectorXd::Zero(d_input[0].cols());
        for (const auto& dt : d_input) dsc += dt.row(0).transpose();

        Eigen::VectorXd draw(s.n_raw);
        if (s.model.convex_arch()) {
            for (int j = 0; j < s.n_raw; ++j) {
                draw(j) = in_slope(j) * dsc(j) - in_slope(s.n_raw + j) * dsc(s.n_raw + j);
            }
        } else {
            for (int j = 0; j < s.n_raw; ++j) draw(j) = in_slope(j) * dsc(j);
        }
        if (pb.plant == Plant::cstr) {
            carry = draw.head(2);
            du.row(k) = draw.segment(2, 2).transpose();
        } else {
            carry = draw.head(3);
            du(k, 0) = draw(5);
        }
    }
    return du;
}

double objective_solar(const Rollout& ro) {
    return ro.preds.col(3).squaredNorm();
}

double objective_cstr(const MpcProblem& pb, const Rollout& ro, const Eigen::MatrixXd& u_seq) {
    const Eigen::VectorXd hw = 0.5 * (pb.u_hi - pb.u_lo);
    double J = 0.0;
    for (Eigen::Index k = 1; k < ro.states.rows(); ++k) {
        J += ro.states.row(k).transpose().cwiseQuotient(pb.state_scale).squaredNorm();
    }
    for (Eigen::Index k = 0; k < u_seq.rows(); ++k) {
        J += (u_seq.row(k).transpose().cwiseQuotient(hw)).squaredNorm();
    }
    return J;
}

double lyapunov_constraint(const MpcProblem& pb, const Eigen::VectorXd& x_measured,
                           const Eigen::VectorXd& x_pred) {
    return pb.region.lyapunov(x_pred) - pb.region.lyapunov(x_measured) + pb.lyapunov_margin;
}

bool in_terminal_box(const MpcProblem& pb, const Eigen::VectorXd& x) {
    return std::abs(x(0)) < pb.terminal_box(0) && std::abs(x(1)) < pb.terminal_box(1);
}

bool lyapunov_active(const MpcProblem& pb, const Eigen::VectorXd& x_measured) {
    return pb.region.contains(x_measured) && !in_terminal_box(pb, x_measured);
}

namespace {

int constraint_count(const MpcProblem& pb, const Eigen::VectorXd& x0) {
    if (pb.plant == Plant::cstr) return lyapunov_active(pb, x0) ? pb.horizon : 0;
    return 6 * pb.horizon;
}

}  // namespace

Eigen::VectorXd eval_constraints(const MpcProblem& pb, const Rollout& ro) {
    const int N = static_cast<int>(ro.u.rows());
    if (pb.plant == Plant::cstr) {
        if (!lyapunov_active(pb, ro.x0)) return Eigen::VectorXd();
        Eigen::VectorXd g(N);
        for (int k = 1; k <= N; ++k) {
            g(k - 1) = lyapunov_constraint(pb, ro.x0, ro.states.row(k).transpose());
        }
        return g;
    }
    Eigen::VectorXd g(6 * N);
    for (int k = 1; k <= N; ++k) {
        const Eigen::VectorXd p = ro.preds.row(k - 1).transpose();
        const double v_b = plants::battery_voltage(pb.solar_spec, p.head(3), ro.xi(k - 1, 2));
        const double prev_is = k == 1 ? ro.x0(1) : ro.preds(k - 2, 1);
        const double jump = p(1) - prev_is;
        g((k - 1) * 6 + 0) = p(0) - pb.v_pv_range(1);
        g((k - 1) * 6 + 1) = pb.v_pv_range(0) - p(0);
        g((k - 1) * 6 + 2) = v_b - pb.v_b_range(1);
        g((k - 1) * 6 + 3) = pb.v_b_range(0) - v_b;
        g((k - 1) * 6 + 4) = jump - pb.delta_is_max;
        g((k - 1) * 6 + 5) = -jump - pb.delta_is_max;
    }
    return g;
}

namespace {

// Accumulates w-weighted constraint gradients into the predicted-state seeds.
// All solar path constraints are affine in the predictions; the CSTR
// contraction constraint is quadratic through V.
void add_constraint_seeds(const MpcProblem& pb, const Rollout& ro, const Eigen::VectorXd& w,
                          Eigen::MatrixXd& dstates) {
    const int N = static_cast<int>(ro.u.rows());
    if (pb.plant == Plant::cstr) {
        for (int k = 1; k <= N; ++k) {
            if (w(k - 1) == 0.0) continue;
            const Eigen::Vector2d grad_v = 2.0 * pb.region.P * ro.states.row(k).transpose();
            dstates.row(k - 1) += w(k - 1) * grad_v.transpose();
        }
        return;
    }
    const double rb = pb.solar_spec.Rb;
    for (int k = 1; k <= N; ++k) {
        const int base = (k - 1) * 6;
        dstates(k - 1, 0) += w(base + 0) - w(base + 1);
        dstates(k - 1, 1) += rb * (w(base + 2) - w(base + 3));
        dstates(k - 1, 2) += w(base + 2) - w(base + 3);
        const double wj = w(base + 4) - w(base + 5);
        dstates(k - 1, 1) += wj;
        if (k >= 2) dstates(k - 2, 1) -= wj;
    }
}

struct AlValue {
    double J = 0.0;
    double al = 0.0;
    Eigen::VectorXd g;
};

double phr_penalty(const Eigen::VectorXd& g, const Eigen::VectorXd& lambda, double mu) {
    double pen = 0.0;
    for (Eigen::Index i = 0; i < g.size(); ++i) {
        const double t = std::max(0.0, lambda(i) + mu * g(i));
        pen += (t * t - lambda(i) * lambda(i)) / (2.0 * mu);
    }
    return pen;
}

AlValue al_value(const MpcProblem& pb, const Rollout& ro, const Eigen::MatrixXd& u,
                 const Eigen::VectorXd& lambda, double mu) {
    AlValue v;
    v.J = pb.plant == Plant::cstr ? objective_cstr(pb, ro, u) : objective_solar(ro);
    v.g = eval_constraints(pb, ro);
    v.al = v.J + phr_penalty(v.g, lambda, mu);
    return v;
}

// Gradient of the augmented Lagrangian with respect to u, via one adjoint
// sweep with the objective and penalty seeds combined.
Eigen::MatrixXd al_gradient(const MpcProblem& pb, const Rollout& ro, const Eigen::MatrixXd& u,
                            const AlValue& v, const Eigen::VectorXd& lambda, double mu) {
    const int N = static_cast<int>(u.rows());
    Eigen::MatrixXd dstates = Eigen::MatrixXd::Zero(N, pb.n_state());
    Eigen::VectorXd daux;
    Eigen::MatrixXd du_direct = Eigen::MatrixXd::Zero(N, pb.n_u());
    if (pb.plant == Plant::cstr) {
        for (int k = 1; k <= N; ++k) {
            dstates.row(k - 1) = 2.0 * ro.states.row(k).cwiseQuotient(
                                           pb.state_scale.transpose().cwiseAbs2());
        }
        const Eigen::VectorXd hw2 = (0.5 * (pb.u_hi - pb.u_lo)).cwiseAbs2();
        for (int k = 0; k < N; ++k) {
            du_direct.row(k) = 2.0 * u.row(k).cwiseQuotient(hw2.transpose());
        }
    } else {
        daux = 2.0 * ro.preds.col(3);
    }
    if (v.g.size() > 0) {
        const Eigen::VectorXd w = (lambda + mu * v.g).cwiseMax(0.0);
        add_constraint_seeds(pb, ro, w, dstates);
    }
    return rollout_adjoint(pb, ro, dstates, daux) + du_direct;
}

Eigen::MatrixXd clamp01(Eigen::MatrixXd z) {
    return z.cwiseMax(0.0).cwiseMin(1.0);
}

struct StartOutcome {
    Eigen::MatrixXd u;
    double J = 0.0;
    double viol = 0.0;
    bool feasible = false;
    int inner_iters = 0;
};

bool better(const StartOutcome& a, const StartOutcome& b) {
    if (a.feasible != b.feasible) return a.feasible;
    if (a.feasible) return a.J < b.J;
    if (a.viol != b.viol) return a.viol < b.viol;
    return a.J < b.J;
}

}  // namespace

SolveResult solve(const MpcProblem& pb, const Eigen::VectorXd& x0, const Eigen::MatrixXd& xi_seq,
                  const SolverConfig& cfg, const Eigen::MatrixXd* warm_start) {
    const auto t0 = std::chrono::steady_clock::now();
    pb.validate();
    if (cfg.starts < 1 || cfg.max_outer < 1 || cfg.max_inner < 1) {
        throw InvalidArgumentError("solve: bad solver configuration");
    }
    const int N = pb.horizon;
    const int n_u = pb.n_u();
    const Eigen::RowVectorXd lo = pb.u_lo.transpose();
    const Eigen::RowVectorXd width = (pb.u_hi - pb.u_lo).transpose();

    const auto to_u = [&](const Eigen::MatrixXd& z) -> Eigen::MatrixXd {
        return (z.array().rowwise() * width.array()).matrix().rowwise() + lo;
    };
    const auto run = [&](const Eigen::MatrixXd& u) { return rollout(pb, x0, u, xi_seq); };

    const int starts = pb.convex_certified ? 1 : cfg.starts;
    auto rng = make_rng(cfg.seed, 8);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    const int n_g = constraint_count(pb, x0);

    StartOutcome best;
    bool have_best = false;
    int total_inner = 0;
    for (int s = 0; s < starts; ++s) {
        Eigen::MatrixXd z(N, n_u);
        if (s == 0 && warm_start != nullptr) {
            if (warm_start->rows() != N || warm_start->cols() != n_u) {
                throw DimensionError("solve: warm start must be N x n_u");
            }
            z = clamp01((((*warm_start).rowwise() - lo).array().rowwise() / width.array()).matrix());
        } else if (s == 0) {
            z.setConstant(0.5);
        } else {
            for (Eigen::Index j = 0; j < z.size(); ++j) z.data()[j] = ud(rng);
        }

        Eigen::VectorXd lambda = Eigen::VectorXd::Zero(n_g);
        double mu = cfg.mu0;
        double prev_viol = std::numeric_limits<double>::infinity();
        StartOutcome out;
        out.inner_iters = 0;
        double pg_norm = std::numeric_limits<double>::infinity();
        Rollout ro = run(to_u(z));
        AlValue cur;

        for (int outer = 0; outer < cfg.max_outer; ++outer) {
            cur = al_value(pb, ro, to_u(z), lambda, mu);
            double alpha = 1.0;
            for (int it = 0; it < cfg.max_inner; ++it) {
                const Eigen::MatrixXd grad =
                    (al_gradient(pb, ro, to_u(z), cur, lambda, mu).array().rowwise() *
                     width.array()).matrix();
                pg_norm = (z - clamp01(z - grad)).norm();
                if (pg_norm < cfg.grad_tol) break;

                bool accepted = false;
                while (alpha >= 1e-14) {
                    const Eigen::MatrixXd z_new = clamp01(z - alpha * grad);
                    const double dir = (grad.array() * (z_new - z).array()).sum();
                    if (z_new == z) break;
                    Rollout ro_new = run(to_u(z_new));
                    const AlValue val = al_value(pb, ro_new, to_u(z_new), lambda, mu);
                    if (val.al <= cur.al + 1e-4 * dir) {
                        z = z_new;
                        ro = std::move(ro_new);
                        cur = val;
                        accepted = true;
                        break;
                    }
                    alpha *= 0.5;
                }
                if (!accepted) break;
                alpha = std::min(2.0 * alpha, 1.0);
                ++out.inner_iters;
            }

            const double viol = n_g == 0 ? 0.0 : std::max(0.0, cur.g.maxCoeff());
            if (viol <= cfg.feas_tol && pg_norm <= cfg.grad_tol) break;
            if (n_g == 0) break;
            lambda = (lambda + mu * cur.g).cwiseMax(0.0);
            if (viol > 0.25 * prev_viol) mu *= cfg.mu_growth;
            prev_viol = viol;
        }

        out.u = to_u(z);
        out.J = cur.J;
        out.viol = cur.g.size() == 0 ? 0.0 : std::max(0.0, cur.g.maxCoeff());
        out.feasible = out.viol <= cfg.feas_tol;
        total_inner += out.inner_iters;
        if (!have_best || better(out, best)) {
            best = std::move(out);
            have_best = true;
        }
    }

    SolveResult res;
    res.u_opt = best.u;
    res.objective_value = best.J;
    res.feasible = best.feasible;
    res.max_violation = best.viol;
    res.iterations = total_inner;
    res.starts_used = starts;
    res.wall_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

PointModel objective_point_model(const MpcProblem& pb, const Eigen::VectorXd& x0,
                                 const Eigen::MatrixXd& xi_seq) {
    PointModel f;
    f.n_in = pb.horizon * pb.n_u();
    f.n_out = 1;
    f.eval = [pb, x0, xi_seq](const Eigen::VectorXd& v) {
        Eigen::MatrixXd u(pb.horizon, pb.n_u());
        for (int k = 0; k < pb.horizon; ++k) {
            for (int j = 0; j < pb.n_u(); ++j) u(k, j) = v(k * pb.n_u() + j);
        }
        const Rollout ro = rollout(pb, x0, u, xi_seq);
        Eigen::VectorXd y(1);
        y(0) = pb.plant == Plant::cstr ? objective_cstr(pb, ro, u) : objective_solar(ro);
        return y;
    };
    return f;
}

Box input_sequence_box(const MpcProblem& pb) {
    Box b;
    b.lo.resize(pb.horizon * pb.n_u());
    b.hi.resize(pb.horizon * pb.n_u());
    for (int k = 0; k < pb.horizon; ++k) {
        b.lo.segment(k * pb.n_u(), pb.n_u()) = pb.u_lo;
        b.hi.segment(k * pb.n_u(), pb.n_u()) = pb.u_hi;
    }
    return b;
}

namespace {

Eigen::VectorXd apply_plant(const MpcProblem& pb, const Eigen::VectorXd& x,
                            const Eigen::VectorXd& u, const Eigen::VectorXd& xi) {
    if (pb.plant == Plant::cstr) {
        const int n_steps =
            static_cast<int>(std::lround(pb.sample_period / pb.cstr_euler_step));
        const Eigen::Vector2d u2 = u;
        const auto rhs = [&](const Eigen::VectorXd& xx) -> Eigen::VectorXd {
            return plants::cstr_rhs(pb.cstr_spec, xx, u2);
        };
        const Eigen::MatrixXd traj = plants::integrate(rhs, x, pb.cstr_euler_step, n_steps);
        return traj.row(traj.rows() - 1).transpose();
    }
    const int n_steps = static_cast<int>(std::lround(pb.sample_period / pb.solar_euler_step));
    const Eigen::MatrixXd traj =
        plants::solar_integrate(pb.solar_spec, x, u(0), xi, pb.solar_euler_step, n_steps);
    return traj.row(traj.rows() - 1).transpose();
}

Eigen::MatrixXd forecast_window(const Eigen::MatrixXd& xi_trace, int k, int N) {
    Eigen::MatrixXd w(N, xi_trace.cols());
    for (int i = 0; i < N; ++i) {
        const int row = std::min<int>(k + i, static_cast<int>(xi_trace.rows()) - 1);
        w.row(i) = xi_trace.row(row);
    }
    return w;
}

}  // namespace

ClosedLoopResult closed_loop(const MpcProblem& pb, const Eigen::VectorXd& x0, int max_steps,
                             const Eigen::MatrixXd& xi_trace, const SolverConfig& cfg) {
    pb.validate();
    if (max_steps < 1) throw InvalidArgumentError("closed_loop: need at least one step");
    if (x0.size() != pb.n_state()) throw DimensionError("closed_loop: state dimension");
    if (pb.plant == Plant::cstr && !pb.region.contains(x0)) {
        throw InfeasibleStartError(
            "closed_loop: initial state outside the stability region; the contraction "
            "constraint is undefined there and the run is refused");
    }
    if (pb.plant == Plant::solar && (xi_trace.rows() < max_steps || xi_trace.cols() != 3)) {
        throw DimensionError("closed_loop: exogenous trace must cover every sampling period");
    }

    ClosedLoopResult r;
    std::vector<Eigen::VectorXd> visited{x0};
    Eigen::VectorXd x = x0;
    Eigen::MatrixXd warm;
    Eigen::VectorXd prev_u;
    bool have_warm = false;

    for (int k = 0; k < max_steps; ++k) {
        if (pb.plant == Plant::cstr && in_terminal_box(pb, x)) {
            r.converged = true;
            break;
        }
        const Eigen::MatrixXd fore = pb.plant == Plant::solar
                                         ? forecast_window(xi_trace, k, pb.horizon)
                                         : Eigen::MatrixXd();
        SolveResult sr = solve(pb, x, fore, cfg, have_warm ? &warm : nullptr);
        r.total_solve_s += sr.wall_time;

        StepRecord rec;
        rec.x = x;
        if (pb.plant == Plant::cstr) rec.lyapunov = pb.region.lyapunov(x);
        if (pb.plant == Plant::solar) rec.xi = xi_trace.row(k).transpose();
        Eigen::VectorXd u = sr.u_opt.row(0).transpose();
        if (!sr.feasible && prev_u.size() > 0) u = prev_u;
        rec.u = u;
        rec.solve = std::move(sr);

        // Shifted warm start for the next period.
        warm = rec.solve.u_opt;
        if (pb.horizon > 1) {
            warm.topRows(pb.horizon - 1) = rec.solve.u_opt.bottomRows(pb.horizon - 1);
        }
        have_warm = true;
        prev_u = u;

        x = apply_plant(pb, x, u, rec.xi);
        visited.push_back(x);
        r.steps.push_back(std::move(rec));
    }
    r.steps_run = static_cast<int>(r.steps.size());
    r.trajectory.resize(static_cast<Eigen::Index>(visited.size()), pb.n_state());
    for (std::size_t i = 0; i < visited.size(); ++i) {
        r.trajectory.row(i) = visited[i].transpose();
    }
    r.mean_step_solve_s = r.steps_run > 0 ? r.total_solve_s / r.steps_run : 0.0;
    return r;
}

void export_closed_loop_csv(const MpcProblem& pb, const ClosedLoopResult& r,
                            const std::string& path) {
    std::vector<std::string> header;
    if (pb.plant == Plant::cstr) {
        header = {"time_hr", "dC_A", "dT", "u_dC_A0", "u_dQ", "objective", "feasible"};
    } else {
        header = {"time_s", "v_pv", "i_s", "v_c", "u", "G", "T_K", "i_L",
                  "objective", "feasible"};
    }
    const auto fill = [&](int k, const StepRecord* st) {
        std::vector<double> row{k * pb.sample_period};
        for (Eigen::Index j = 0; j < r.trajectory.cols(); ++j) {
            row.push_back(r.trajectory(k, j));
        }
        if (st != nullptr) {
            for (Eigen::Index j = 0; j < st->u.size(); ++j) row.push_back(st->u(j));
            for (Eigen::Index j = 0; j < st->xi.size(); ++j) row.push_back(st->xi(j));
            row.push_back(st->solve.objective_value);
            row.push_back(st->solve.feasible ? 1.0 : 0.0);
        } else {
            while (row.size() < header.size()) row.push_back(0.0);
        }
        return row;
    };
    std::vector<std::vector<double>> rows;
    for (int k = 0; k < r.steps_run; ++k) rows.push_back(fill(k, &r.steps[k]));
    if (r.trajectory.rows() > r.steps_run) {
        // Terminal measured state; the remaining columns repeat the last step.
        rows.push_back(fill(r.steps_run, r.steps.empty() ? nullptr : &r.steps.back()));
    }
    write_csv(path, header, rows);
}

std::vector<BenchmarkRow> benchmark(Plant plant, const std::vector<BenchmarkModel>& models,
                                    const std::vector<Eigen::VectorXd>& x0s, int max_steps,
                                    const Eigen::MatrixXd& xi_trace, const SolverConfig& cfg,
                                    int repeats) {
    if (models.empty() || x0s.empty() || repeats < 1) {
        throw InvalidArgumentError("benchmark: need models, initial conditions and repeats");
    }
    std::vector<BenchmarkRow> rows;
    for (const auto& bm : models) {
        const MpcProblem pb = plant == Plant::cstr
                                  ? make_cstr_problem(bm.surrogate, bm.certified)
                                  : make_solar_problem(bm.surrogate, bm.certified);
        for (const auto& x0 : x0s) {
            std::string ic;
            for (Eigen::Index j = 0; j < x0.size(); ++j) {
                ic += (j ? ";" : "") + format_double(x0(j));
            }
            for (int rep = 0; rep < repeats; ++rep) {
                BenchmarkRow row;
                row.model = bm.name;
                row.initial_condition = ic;
                row.repeat = rep;
                try {
                    const ClosedLoopResult r = closed_loop(pb, x0, max_steps, xi_trace, cfg);
                    row.steps_to_converge = r.steps_run;
                    row.total_solve_s = r.total_solve_s;
                    row.mean_step_solve_s = r.mean_step_solve_s;
                    row.converged = r.converged;
                } catch (const Error&) {
                    row.steps_to_converge = max_steps;
                    row.converged = false;
                }
                rows.push_back(std::move(row));
            }
        }
    }
    return rows;
}

void export_benchmark_csv(const std::vector<BenchmarkRow>& rows, const std::string& path) {
    std::vector<std::vector<std::string>> cells;
    cells.push_back({"model", "initial_condition", "repeat", "steps_to_converge",
                     "total_solve_s", "mean_step_solve_s", "converged"});
    for (const auto& r : rows) {
        cells.push_back({r.model, r.initial_condition, std::to_string(r.repeat),
                         std::to_string(r.steps_to_converge), format_double(r.total_solve_s),
                         format_double(r.mean_step_solve_s), r.converged ? "1" : "0"});
    }
    write_csv_text(path, cells);
}

}  // namespace iclstm::mpc
