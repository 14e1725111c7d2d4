#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "iclstm/common.hpp"

namespace iclstm {

enum class Arch { rnn, lstm, icrnn, iclstm };

Arch arch_from_string(const std::string& s);
std::string to_string(Arch a);

enum class ActivationKind { relu, softplus, tanh_act, sigmoid, linear };

ActivationKind activation_from_string(const std::string& s);
std::string to_string(ActivationKind k);

// Scalar nonlinearity. Derivatives are recovered from the *output* value, which
// every supported kind permits; forward passes therefore never cache
// pre-activations.
struct Activation {
    ActivationKind kind = ActivationKind::relu;
    double beta = 10.0;  // softplus sharpness; ignored by the other kinds

    double value(double x) const;
    Eigen::MatrixXd value(const Eigen::MatrixXd& x) const;
    // g'(x) expressed through y = g(x).
    Eigen::MatrixXd slope_from_value(const Eigen::MatrixXd& y) const;
    // Convex, non-decreasing and non-negative (the class the convex
    // architectures require internally).
    bool convex_family() const { return kind == ActivationKind::relu || kind == ActivationKind::softplus; }
};

// [x1..xn] -> [x1..xn, -x1..-xn]; applied column-wise to row-example matrices.
Eigen::MatrixXd expand_input(const Eigen::MatrixXd& x);
Eigen::VectorXd expand_input(const Eigen::VectorXd& x);

// ---------------------------------------------------------------------------
// Per-layer parameter blocks.
//
// Shapes use w = layer input width, n = layer hidden width. Matrices act on
// row-example batches as X * M^T, i.e. stored as (n x w).
// ---------------------------------------------------------------------------

// h_t = g(Wx x_t + Wh h_{t-1} + b)
struct RnnLayer {
    Eigen::MatrixXd Wx, Wh;
    Eigen::VectorXd b;
};

// Standard LSTM: sigmoid gates, g on candidate and cell output.
struct LstmLayer {
    Eigen::MatrixXd Uf, Ui, Uo, Uc;  // input weights (n x w)
    Eigen::MatrixXd Wf, Wi, Wo, Wc;  // recurrent weights (n x n)
    Eigen::VectorXd bf, bi, bo, bc;
};

// h_t = g(U xi_t + W h_{t-1} + D2 xi_{t-1})
// z_t = g(V h_t + D1 h_{t-1} + D3 xi_t)
// All six blocks are constrained non-negative; lagged terms are zero at t=1.
struct IcrnnLayer {
    Eigen::MatrixXd U, W, D2;  // (n x w), (n x n), (n x w)
    Eigen::MatrixXd V, D1, D3; // (n x n), (n x n), (n x w)
};

// Shared pre-activation a = Wx x_t + Wh h_{t-1}; per-gate diagonal scalers:
//   f,i,o = g(D* . a + b*),  c~ = g(Dc . a + bc)
//   c = f.c_{t-1} + i.c~,    h = o.g(c)
// followed by a dense map back to the model input width plus a parameter-free
// skip of the model-level expanded input:
//   z = g_d(Wd h + bd) + xhat_t
// Wx, Wh, D*, Wd are constrained non-negative; biases are free.
struct IcLstmLayer {
    Eigen::MatrixXd Wx, Wh;          // (n x w), (n x n); here w = 2*n_x always
    Eigen::VectorXd Df, Di, Do, Dc;  // (n)
    Eigen::VectorXd bf, bi, bo, bc;  // (n)
    Eigen::MatrixXd Wd;              // (w x n)
    Eigen::VectorXd bd;              // (w)
};

using LayerParams = std::variant<RnnLayer, LstmLayer, IcrnnLayer, IcLstmLayer>;

// Full model: stacked layers plus a dense head y = g_y(Wy z + by).
struct ModelParams {
    Arch arch = Arch::iclstm;
    int n_x = 0;  // raw (unexpanded) input width
    int n_o = 0;  // output width
    std::vector<LayerParams> layers;
    Eigen::MatrixXd Wy;
    Eigen::VectorXd by;
    Activation hidden_act;  // g inside layers (candidate/cell for lstm)
    Activation dense_act;   // g_d of the convex LSTM layer dense map
    Activation output_act;  // g_y

    bool convex_arch() const { return arch == Arch::icrnn || arch == Arch::iclstm; }
    // Width the forward pass consumes: n_x for plain models, 2*n_x expanded.
    int input_width() const { return convex_arch() ? 2 * n_x : n_x; }
    int num_layers() const { return static_cast<int>(layers.size()); }
    std::vector<int> hidden_widths() const;

    // Structural checks: layer kinds match arch, widths chain, head matches.
    // Throws DimensionError / InvalidArgumentError.
    void validate() const;
    // True iff every constrained block is element-wise >= 0.
    bool constraints_satisfied() const;
};

// Named view over one parameter block; data points into the owning model.
struct BlockView {
    std::string name;
    double* data = nullptr;
    Eigen::Index rows = 0, cols = 0;  // cols == 1 for vectors
    bool nonneg = false;              // block is non-negativity constrained

    Eigen::Index size() const { return rows * cols; }
    Eigen::Map<Eigen::MatrixXd> map() const { return {data, rows, cols}; }
};

// Stable enumeration of all parameter blocks (layer order, then head). The
// order defines the serialization layout and the optimizer slot layout.
std::vector<BlockView> param_blocks(ModelParams& m);
std::vector<BlockView> param_blocks(const ModelParams& m);  // const data via const_cast-free copy

// Same shapes as m, every block zero. Used as a gradient accumulator.
ModelParams zeros_like(const ModelParams& m);

Eigen::Index param_count(const ModelParams& m);

// Fresh model with spec defaults for activations per architecture: plain
// models get tanh hidden / linear output; convex models relu throughout.
ModelParams make_model(Arch arch, int n_x, const std::vector<int>& hidden, int n_o);

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

struct CellState {
    Eigen::MatrixXd h, c;  // (batch x n); c unused by rnn/icrnn
};

// One convex-LSTM cell update on a row-example batch. xhat is the layer input
// (already expanded), state is updated in place.
void iclstm_cell_step(const IcLstmLayer& p, const Activation& g,
                      const Eigen::MatrixXd& xhat, CellState& state);

// Everything the backward pass needs, taped during forward.
struct LayerStepCache {
    // Union of the per-arch needs; unused members stay empty.
    Eigen::MatrixXd X;                // layer input at this step
    Eigen::MatrixXd A;                // iclstm shared pre-activation
    Eigen::MatrixXd F, I, O, Ctil, C; // gate/cell values (lstm, iclstm)
    Eigen::MatrixXd Gc;               // g(c)
    Eigen::MatrixXd H;                // hidden value
    Eigen::MatrixXd Zg;               // iclstm dense value before skip
    Eigen::MatrixXd Z;                // layer output (icrnn z / iclstm z)
};

struct ForwardCache {
    BatchSeq model_input;                              // per-step model-level input
    std::vector<std::vector<LayerStepCache>> layers;   // [layer][t]
    BatchSeq head_out;                                 // y_t values
};

// Batched forward. xs[t] is (B x input_width()); returns ys[t] of (B x n_o).
// If cache is non-null the tape is recorded for backward().
BatchSeq forward_batched(const ModelParams& m, const BatchSeq& xs, ForwardCache* cache = nullptr);

// Single raw sequence (T x n_x): expansion for convex archs is applied here.
// Returns (T x n_o).
Eigen::MatrixXd forward(const ModelParams& m, const Eigen::MatrixXd& seq);

// Repeat a single raw input m times and run it through the model.
Eigen::MatrixXd forward_repeat(const ModelParams& m, const Eigen::VectorXd& x, int repeats);

// ---------------------------------------------------------------------------
// Point-function view used by the convexity probes and toy-surface fitting.
// ---------------------------------------------------------------------------

struct PointModel {
    int n_in = 0;
    int n_out = 0;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> eval;
};

// x (n_x) -> repeat -> forward -> flattened (repeats*n_o) output.
PointModel make_point_model(const ModelParams& m, int repeats);
// Convex archs only: the expanded vector (2*n_x) is treated as a free input.
PointModel make_point_model_expanded(const ModelParams& m, int repeats);

}  // namespace iclstm
