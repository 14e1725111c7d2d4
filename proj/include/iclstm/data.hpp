#pragma once

#include <cstdint>
#include <string>

#include "iclstm/common.hpp"
#include "iclstm/plants.hpp"

namespace iclstm::data {

// Per-feature min-max normalization to [0, 1], fit on the training split
// only. transform/inverse never clip, so held-out values may leave [0, 1].
struct Scaler {
    Eigen::VectorXd lo, hi;

    void fit(const Eigen::MatrixXd& rows);
    Eigen::MatrixXd transform(const Eigen::MatrixXd& rows) const;
    Eigen::VectorXd transform(const Eigen::VectorXd& x) const;
    Eigen::MatrixXd inverse(const Eigen::MatrixXd& rows) const;
    Eigen::VectorXd inverse(const Eigen::VectorXd& x) const;
    Eigen::VectorXd slope() const;  // d transform / d x = 1/(hi - lo)
    Eigen::Index dim() const { return lo.size(); }
};

Eigen::MatrixXd sample_domain(const Box& box, int n, std::uint64_t seed);

// Uniform samples of the CSTR deviation state inside the stability ellipse
// (rejection sampling over the bounding box).
Eigen::MatrixXd sample_cstr_states(const plants::StabilityRegion& region, int n,
                                   std::uint64_t seed);

// Raw CSTR feature row: [dC_A, dT, dC_A0, dQ].
Eigen::VectorXd cstr_feature_row(const Eigen::Vector2d& x, const Eigen::Vector2d& u);
// Raw solar feature row: [v_pv, i_s, v_c, G, T_cell(degC), u, i_L].
Eigen::VectorXd solar_feature_row(const Eigen::Vector3d& x, double G, double T_kelvin,
                                  double u, double i_L);

Box cstr_input_box();    // [dC_A0, dQ] in [-3.5, 3.5] x [-5e5, 5e5]
Box solar_sample_box();  // 7 raw features, temperature in degrees C

// Integrate each raw sample over one sampling period with the input held,
// recording the targets at `repeats` evenly spaced sub-instants.
// CSTR targets: [|dC_A|, |dT|]; solar targets: [v_pv, i_s, v_c, |i_s - i_L|].
// Both return `repeats` matrices of shape n_samples x n_target and report
// integration blow-ups with the offending sample index.
BatchSeq make_targets_cstr(const plants::CstrSpec& spec, const Eigen::MatrixXd& raw,
                           double sample_period, int repeats, double euler_step,
                           int n_threads = 1);
BatchSeq make_targets_solar(const plants::SolarSpec& spec, const Eigen::MatrixXd& raw,
                            double sample_period, int repeats, double euler_step,
                            int n_threads = 1);

double toy_surface(int which, double x, double y);      // which in {1, 2, 3}
Eigen::MatrixXd surface_grid(int which, int grid_n);    // columns x, y, f on [-1, 1]^2

struct SequenceDataset {
    std::string plant;       // "cstr", "solar", "surface-f1", ...
    std::uint64_t seed = 0;
    int repeats = 0;         // sequence length m
    int n_raw = 0;           // raw feature count before expansion
    int n_train = 0;         // rows [0, n_train) form the training split
    Box box;                 // raw sampling box
    Eigen::MatrixXd raw;     // n x n_raw, in stored (shuffled) order
    BatchSeq inputs;         // m matrices, n x 2*n_raw, expanded then normalized
    BatchSeq targets;        // m matrices, n x n_target, normalized
    Scaler input_scaler;     // over the expanded feature space
    Scaler target_scaler;

    int n_samples() const { return static_cast<int>(raw.rows()); }
    int n_targets() const { return targets.empty() ? 0 : static_cast<int>(targets[0].cols()); }
    BatchSeq train_inputs() const;
    BatchSeq train_targets() const;
    BatchSeq test_inputs() const;
    BatchSeq test_targets() const;
    void validate() const;  // shapes, split bounds, expansion consistency
};

// Shuffle, split, expand, fit scalers on the training prefix, normalize.
SequenceDataset assemble_dataset(const std::string& plant, const Box& box,
                                 const Eigen::MatrixXd& raw, const BatchSeq& raw_targets,
                                 double train_frac, std::uint64_t seed);

struct CstrDataConfig {
    int n_samples = 20000;
    int repeats = 10;
    double sample_period = 5e-3;  // hr
    double euler_step = 1e-4;     // hr
    double train_frac = 0.8;
    int n_threads = 1;
};

struct SolarDataConfig {
    int n_samples = 20000;
    int repeats = 10;
    double sample_period = 60.0;  // s
    double euler_step = 5e-3;     // s
    double train_frac = 0.8;
    int n_threads = 1;
};

SequenceDataset make_cstr_dataset(const plants::CstrSpec& spec, const CstrDataConfig& cfg,
                                  std::uint64_t seed);
SequenceDataset make_solar_dataset(const plants::SolarSpec& spec, const SolarDataConfig& cfg,
                                   std::uint64_t seed);
// Toy surface samples as length-1 sequences on the [-1, 1]^2 grid.
SequenceDataset make_surface_dataset(int which, int grid_n, double train_frac,
                                     std::uint64_t seed);

void save_dataset(const SequenceDataset& ds, const std::string& path);
SequenceDataset load_dataset(const std::string& path);
void export_dataset_csv(const SequenceDataset& ds, const std::string& path);

// Closed-loop exogenous trace for the solar plant, one row per sampling
// period: columns G (W/m^2), T_cell (K), i_L (A). Irradiance follows a
// smooth diurnal bump with an optional mid-trace dropout dip; the load is a
// seeded piecewise-constant staircase.
Eigen::MatrixXd solar_profile(int n_periods, std::uint64_t seed, bool dropout = true);

}  // namespace iclstm::data
