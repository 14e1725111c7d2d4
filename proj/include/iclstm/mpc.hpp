#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "iclstm/data.hpp"
#include "iclstm/network.hpp"
#include "iclstm/plants.hpp"

namespace iclstm::mpc {

// Raised when a receding-horizon run is refused outright (e.g. a CSTR start
// outside the stability region, where the contraction constraint is undefined).
struct InfeasibleStartError : Error {
    using Error::Error;
};

enum class Plant { cstr, solar };
std::string to_string(Plant p);

// A trained model plus everything needed to call it on physical quantities:
// the expansion-aware input scaler, the target scaler, and the repeat count
// the training sequences used.
struct Surrogate {
    ModelParams model;
    data::Scaler in_scaler;   // over the expanded raw features
    data::Scaler out_scaler;  // over the targets
    int repeats = 10;
    int n_raw = 0;

    void validate() const;
};

Surrogate make_surrogate(ModelParams model, const data::SequenceDataset& ds);

struct MpcProblem {
    Plant plant = Plant::cstr;
    Surrogate surrogate;
    int horizon = 2;
    Eigen::VectorXd u_lo, u_hi;
    double sample_period = 0.0;  // hr (cstr) / s (solar)
    bool convex_certified = false;  // single-start solves when true

    // CSTR: quadratic objective scaling, contraction constraint, plant for
    // the closed loop.
    plants::CstrSpec cstr_spec;
    plants::StabilityRegion region;
    Eigen::Vector2d state_scale;     // stability-ellipse axis extents
    Eigen::Vector2d terminal_box{0.02, 3.0};
    double lyapunov_margin = 1e-8;
    double cstr_euler_step = 1e-4;

    // Solar: path-constraint bounds and the plant for the closed loop.
    plants::SolarSpec solar_spec;
    double delta_is_max = 8.0;
    Eigen::Vector2d v_b_range{11.7, 14.7};
    Eigen::Vector2d v_pv_range{10.0, 60.0};
    double solar_euler_step = 5e-3;

    int n_u() const { return static_cast<int>(u_lo.size()); }
    int n_state() const { return plant == Plant::cstr ? 2 : 3; }
    void validate() const;
};

MpcProblem make_cstr_problem(Surrogate s, bool certified);
MpcProblem make_solar_problem(Surrogate s, bool certified);

// ---------------------------------------------------------------------------
// Prediction rollout. Step k consumes the (fed back) state x_k and input u_k,
// calls the surrogate per the data protocol (feature row -> expand -> scale ->
// repeat-m sequence), and reads the final sub-instant as the next sampling
// instant. CSTR predictions are magnitudes; signs are restored from the
// measured state at the horizon start.
// ---------------------------------------------------------------------------

struct Rollout {
    Eigen::VectorXd x0;
    Eigen::VectorXd sgn;      // cstr sign restoration mask; empty for solar
    Eigen::MatrixXd u;        // N x n_u (physical)
    Eigen::MatrixXd xi;       // N x 3 exogenous rows (solar); empty for cstr
    Eigen::MatrixXd preds;    // N x n_targets, physical model outputs
    Eigen::MatrixXd states;   // (N+1) x n_state, x0 then fed-back predictions
    std::vector<ForwardCache> caches;  // one per horizon step
};

Rollout rollout(const MpcProblem& pb, const Eigen::VectorXd& x0, const Eigen::MatrixXd& u_seq,
                const Eigen::MatrixXd& xi_seq);

// Reverse sweep through the rollout: dstates holds dJ/dx_k for the predicted
// states (row k-1 corresponds to x_k), daux dJ/d_deviation for the solar
// tracking channel (ignored for cstr). Returns dJ/du (N x n_u) through the
// network and feedback chain only; direct u terms are the caller's.
Eigen::MatrixXd rollout_adjoint(const MpcProblem& pb, const Rollout& ro,
                                const Eigen::MatrixXd& dstates, const Eigen::VectorXd& daux);

// Tracking objective: sum of squared predicted sensing-current deviations
// over the horizon, in amps.
double objective_solar(const Rollout& ro);
// Quadratic regulation objective: predicted states normalized by the
// stability-ellipse extents, inputs by their bound half-widths.
double objective_cstr(const MpcProblem& pb, const Rollout& ro, const Eigen::MatrixXd& u_seq);

// V(x_pred) - V(x_measured) + margin, feasible when <= 0.
double lyapunov_constraint(const MpcProblem& pb, const Eigen::VectorXd& x_measured,
                           const Eigen::VectorXd& x_pred);
// The contraction constraint applies only inside the stability region and
// outside the terminal box.
bool lyapunov_active(const MpcProblem& pb, const Eigen::VectorXd& x_measured);
bool in_terminal_box(const MpcProblem& pb, const Eigen::VectorXd& x);

// Path-constraint values at a rolled-out prediction, all <= 0 when feasible.
Eigen::VectorXd eval_constraints(const MpcProblem& pb, const Rollout& ro);

// u |-> objective as a point function over the flattened (row-major) input
// sequence; used by the multi-step convexity probe.
PointModel objective_point_model(const MpcProblem& pb, const Eigen::VectorXd& x0,
                                 const Eigen::MatrixXd& xi_seq);
Box input_sequence_box(const MpcProblem& pb);

// ---------------------------------------------------------------------------
// Solver: augmented Lagrangian (PHR) outer loop around projected-gradient
// descent with Armijo backtracking, run in box-normalized coordinates.
// Multi-start for non-convex surrogates, single start for certified ones.
// ---------------------------------------------------------------------------

struct SolverConfig {
    int starts = 5;
    int max_outer = 10;
    int max_inner = 150;
    double grad_tol = 1e-6;   // projected-gradient norm, normalized coordinates
    double feas_tol = 1e-6;
    double mu0 = 10.0;
    double mu_growth = 4.0;
    std::uint64_t seed = 0;
};

struct SolveResult {
    Eigen::MatrixXd u_opt;      // N x n_u
    double objective_value = 0.0;
    bool feasible = false;
    double max_violation = 0.0;
    int iterations = 0;         // inner iterations, summed over outers/starts
    double wall_time = 0.0;     // seconds
    int starts_used = 0;
};

SolveResult solve(const MpcProblem& pb, const Eigen::VectorXd& x0, const Eigen::MatrixXd& xi_seq,
                  const SolverConfig& cfg, const Eigen::MatrixXd* warm_start = nullptr);

// ---------------------------------------------------------------------------
// Closed loop: solve, apply the first input to the first-principles plant for
// one sampling period, re-measure, repeat.
// ---------------------------------------------------------------------------

struct StepRecord {
    Eigen::VectorXd x;   // measured state at the start of the step
    Eigen::VectorXd u;   // applied input
    Eigen::VectorXd xi;  // exogenous row during the step (solar); empty for cstr
    SolveResult solve;
    double lyapunov = 0.0;  // V(x), cstr only
};

struct ClosedLoopResult {
    Eigen::MatrixXd trajectory;  // (steps_run + 1) x n_state measured states
    std::vector<StepRecord> steps;
    bool converged = false;  // cstr practical-stability exit
    int steps_run = 0;
    double total_solve_s = 0.0;
    double mean_step_solve_s = 0.0;
};

// CSTR ignores xi_trace and stops early inside the practical-stability box;
// an initial state outside the stability region is refused. Solar runs the
// full trace; an infeasible step falls back to the previously applied input.
ClosedLoopResult closed_loop(const MpcProblem& pb, const Eigen::VectorXd& x0, int max_steps,
                             const Eigen::MatrixXd& xi_trace, const SolverConfig& cfg);

void export_closed_loop_csv(const MpcProblem& pb, const ClosedLoopResult& r,
                            const std::string& path);

// ---------------------------------------------------------------------------
// Timing benchmark over models and initial conditions.
// ---------------------------------------------------------------------------

struct BenchmarkModel {
    std::string name;
    Surrogate surrogate;
    bool certified = false;
};

struct BenchmarkRow {
    std::string model;
    std::string initial_condition;
    int repeat = 0;
    int steps_to_converge = 0;
    double total_solve_s = 0.0;
    double mean_step_solve_s = 0.0;
    bool converged = false;
};

std::vector<BenchmarkRow> benchmark(Plant plant, const std::vector<BenchmarkModel>& models,
                                    const std::vector<Eigen::VectorXd>& x0s, int max_steps,
                                    const Eigen::MatrixXd& xi_trace, const SolverConfig& cfg,
                                    int repeats);

void export_benchmark_csv(const std::vector<BenchmarkRow>& rows, const std::string& path);

}  // namespace iclstm::mpc
