#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "iclstm/data.hpp"
#include "iclstm/network.hpp"

namespace iclstm::train {

// Architecture-specific weight initialization: convex families draw input
// weights from N(0, 0.01^2) clipped at zero, recurrent weights 0.1*I, gate
// scalers U(0,1), dense/head weights |N(0, 0.01^2)|, biases zero. Baselines
// use Glorot-uniform weights with zero biases.
ModelParams init_params(Arch arch, int n_x, const std::vector<int>& hidden, int n_o,
                        std::uint64_t seed);

double mse_loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target);
double mse_loss(const BatchSeq& pred, const BatchSeq& target);
// d(mse)/d(pred): 2 (pred - target) / element count.
BatchSeq mse_grad(const BatchSeq& pred, const BatchSeq& target);

// Reverse-mode pass through a cached forward evaluation. dY holds the
// gradient of a scalar objective with respect to each head output (same
// time-major layout as ForwardCache::head_out). Returns per-block gradients
// in a ModelParams-shaped container; optionally also the gradient with
// respect to the model input sequence (needed by the controller).
ModelParams backward(const ModelParams& m, const ForwardCache& cache, const BatchSeq& dY,
                     BatchSeq* d_input = nullptr);

// Clip the constrained blocks at exactly zero; unconstrained blocks untouched.
void project_nonnegative(ModelParams& m);

double gradient_norm(const ModelParams& grads);
// Scales all blocks so the global norm is at most max_norm (no-op otherwise
// or when max_norm <= 0).
void clip_gradients(ModelParams& grads, double max_norm);

struct AdamState {
    std::vector<Eigen::MatrixXd> m1, m2;
    long step = 0;
};
AdamState make_adam_state(const ModelParams& m);
// One Adam update (beta1=0.9, beta2=0.999, eps=1e-8), followed by the
// non-negativity projection when the model is a convex architecture.
void adam_step(ModelParams& m, const ModelParams& grads, AdamState& st, double lr);

struct TrainConfig {
    int batch_size = 128;
    double lr0 = 1e-3;
    int max_epochs = 500;
    int patience = 10;            // non-improving test epochs before halving lr
    int max_halvings = 6;
    double clip_threshold = 10.0; // global gradient norm; <= 0 disables
    std::uint64_t seed = 0;       // shuffling stream
};

struct TrainReport {
    std::vector<double> train_mse, test_mse, lr;
    double best_test = std::numeric_limits<double>::infinity();
    int best_epoch = -1;  // 1-based epoch of the returned parameters
    int epochs_run = 0;
    int halvings = 0;
    double wall_seconds = 0.0;  // informational only, never part of artifacts
};

struct TrainingDivergedError : NumericError {
    TrainReport report;
    TrainingDivergedError(const std::string& msg, TrainReport r)
        : NumericError(msg), report(std::move(r)) {}
};

struct FitResult {
    ModelParams params;  // best-test-MSE snapshot
    TrainReport report;
};

// Mini-batch training on a normalized dataset: seeded shuffling, per-epoch
// test evaluation, lr halving after `patience` stalled epochs, early stop
// after max_halvings, best-test parameters returned. Plain baselines consume
// the raw half of the expanded inputs; convex models the full width.
FitResult fit(const ModelParams& init, const data::SequenceDataset& ds, const TrainConfig& cfg);

// Columns of the stored (expanded) inputs this model consumes.
BatchSeq model_inputs(const ModelParams& m, const BatchSeq& inputs, int n_raw);

// CSV with columns epoch, train_mse, test_mse, lr.
void report_to_csv(const TrainReport& r, const std::string& path);

}  // namespace iclstm::train
