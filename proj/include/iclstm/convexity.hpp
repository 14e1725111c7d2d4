#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "iclstm/data.hpp"
#include "iclstm/network.hpp"

namespace iclstm::convexity {

struct UnsupportedActivationError : InvalidArgumentError {
    using InvalidArgumentError::InvalidArgumentError;
};

enum class Verdict { certified, refuted, inconclusive };
std::string to_string(Verdict v);

// One reproducible witness. For midpoint probes x_a/x_b are the sampled pair
// and lhs/rhs the midpoint value and the chord average at the worst output
// coordinate; for monotonicity probes x_a is the base point, x_b = x_a + delta,
// lhs the perturbed value and rhs the base value.
struct Counterexample {
    std::string kind;  // "midpoint" or "monotone"
    int coord = 0;     // flattened output coordinate (step * n_o + output)
    Eigen::VectorXd x_a, x_b;
    double lhs = 0.0, rhs = 0.0;
    double violation = 0.0;
};

struct ConvexityReport {
    int n_pairs = 0;
    int midpoint_violations = 0;
    // Largest normalized midpoint gap observed across all pairs (signed): the
    // certification margin when negative, the worst violation when positive.
    double worst_violation = 0.0;
    int n_probes = 0;
    int monotonicity_violations = 0;
    bool hessian_checked = false;
    double min_hessian_eig = std::numeric_limits<double>::quiet_NaN();
    Verdict verdict = Verdict::inconclusive;
    std::vector<Counterexample> counterexamples;  // capped; counts stay exact
};

// --------------------------------------------------------------------------
// Generic probes over a point function f: R^n_in -> R^n_out.
// --------------------------------------------------------------------------

// Samples pairs uniformly in `domain` and tests, per output coordinate,
// f((a+b)/2) <= (f(a)+f(b))/2 + tol * max(1, |avg|). A pair counts as one
// violation however many coordinates fail.
ConvexityReport check_midpoint(const PointModel& f, const Box& domain, int n_pairs, double tol,
                               std::uint64_t seed);

// Samples base points in `domain` plus elementwise non-negative perturbations
// and tests f(x + delta) >= f(x) - tol per coordinate (absolute tolerance).
ConvexityReport check_monotone(const PointModel& f, const Box& domain, int n_probes, double tol,
                               std::uint64_t seed);

// Exhaustive midpoint test along the rows and columns of a square grid of
// function values on a uniform lattice: for every axis-aligned triple with an
// even index gap, value(mid) <= avg + tol * max(1, |avg|). Returns the number
// of failing triples.
int grid_midpoint_violations(const Eigen::MatrixXd& values, double tol);

// Full central finite-difference Hessian of output coordinate `coord` at
// `point`, symmetrized; the minimum eigenvalue comes from the cyclic Jacobi
// iteration below. Requires n_in <= 8 and h in [1e-5, 1e-3].
double hessian_min_eig(const PointModel& f, const Eigen::VectorXd& point, int coord, double h);

// Eigenvalues (ascending) of a small symmetric matrix via cyclic Jacobi
// rotations. Exposed so the implementation can be cross-checked against an
// independent solver.
Eigen::VectorXd jacobi_eigenvalues(Eigen::MatrixXd a);

// --------------------------------------------------------------------------
// Model-facing wrappers. Convexity (midpoint, Hessian) is probed in the
// original input space x over `domain`; monotonicity in the space the cell
// actually consumes, i.e. the expanded box for the convex architectures.
// --------------------------------------------------------------------------

ConvexityReport check_midpoint(const ModelParams& m, int repeats, const Box& domain, int n_pairs,
                               double tol, std::uint64_t seed);
ConvexityReport check_monotone(const ModelParams& m, int repeats, const Box& domain, int n_probes,
                               double tol, std::uint64_t seed);
// Throws UnsupportedActivationError when any activation in use is not C^2.
double hessian_min_eig(const ModelParams& m, int repeats, const Eigen::VectorXd& point, int coord,
                       double h);

// True when every activation the model evaluates is twice differentiable
// (everything except relu).
bool smooth_activations(const ModelParams& m);

// Re-evaluates a stored counterexample; true when it still violates its
// inequality at tolerance `tol`.
bool replay_violates(const PointModel& f, const Counterexample& ce, double tol);
bool replay_violates(const ModelParams& m, int repeats, const Counterexample& ce, double tol);

struct CertifyConfig {
    int repeats = 1;      // sequence length the probes roll the model over
    int n_pairs = 1000;
    int n_probes = 1000;
    double midpoint_tol = 1e-7;
    double monotone_tol = 1e-9;
    double fd_step = 1e-4;        // Hessian step; re-run at h/2 for consistency
    double hessian_floor = -1e-6; // finite-difference noise floor
    int hessian_points = 5;
    std::uint64_t seed = 0;
};

// Midpoint + monotonicity always; the Hessian probe when the activations are
// smooth and the input is small enough to difference (n_x <= 8). Verdict:
//   refuted      — any midpoint/monotonicity violation (witnesses stored);
//   inconclusive — no violations but the evidence is thin: the Hessian probe
//                  could not run and fewer than 100 pairs were sampled, or it
//                  ran and dipped below the noise floor without producing a
//                  replayable witness;
//   certified    — otherwise.
ConvexityReport certify(const ModelParams& m, const Box& domain, const CertifyConfig& cfg);

// A trained checkpoint consumes scaled expanded features and predicts scaled
// targets, so it must be probed through the same pipeline: expansion, input
// scaling, the network (baselines read back the unexpanded columns exactly
// like training), inverse target scaling. Outputs flatten step-major like
// make_point_model.
PointModel make_pipeline_point_model(const ModelParams& m, const data::Scaler& in_scaler,
                                     const data::Scaler& out_scaler, int n_raw, int repeats);

// Certification of a trained checkpoint against the dataset it was fit on.
// Midpoint pairs probe the pipeline over the raw feature box ds.box;
// monotonicity probes the network over the scaled expanded box it actually
// consumes (the pipeline over ds.box for the baselines); the Hessian probe
// runs on the pipeline in box-normalized coordinates so finite differences
// see O(1) ranges whatever the physical units. Same verdict policy as above.
ConvexityReport certify(const ModelParams& m, const data::SequenceDataset& ds,
                        const CertifyConfig& cfg);

std::string report_to_json(const ConvexityReport& r);
void export_report_json(const ConvexityReport& r, const std::string& path);
// One row per stored counterexample: kind, coord, violation, lhs, rhs, then
// the two input vectors.
void export_counterexamples_csv(const ConvexityReport& r, const std::string& path);

}  // namespace iclstm::convexity
