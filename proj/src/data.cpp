#include "iclstm/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <exception>
#include <fstream>
#include <numeric>
#include <thread>
#include <vector>

#include <json.hpp>

namespace iclstm::data {

void Scaler::fit(const Eigen::MatrixXd& rows) {
    if (rows.rows() < 1) throw InvalidArgumentError("Scaler::fit: empty data");
    require_finite(rows, "Scaler::fit");
    lo = rows.colwise().minCoeff().transpose();
    hi = rows.colwise().maxCoeff().transpose();
    for (Eigen::Index j = 0; j < lo.size(); ++j) {
        if (hi(j) - lo(j) < 1e-12) {
            throw InvalidArgumentError("Scaler::fit: degenerate feature column " +
                                       std::to_string(j));
        }
    }
}

namespace {
void check_scaler_dim(const Scaler& s, Eigen::Index cols, const char* who) {
    if (s.lo.size() == 0) throw InvalidArgumentError(std::string(who) + ": scaler not fit");
    if (cols != s.lo.size()) {
        throw DimensionError(std::string(who) + ": expected " + std::to_string(s.lo.size()) +
                             " features, got " + std::to_string(cols));
    }
}
}  // namespace

Eigen::MatrixXd Scaler::transform(const Eigen::MatrixXd& rows) const {
    check_scaler_dim(*this, rows.cols(), "Scaler::transform");
    return (rows.rowwise() - lo.transpose()).array().rowwise() /
           (hi - lo).transpose().array();
}

Eigen::VectorXd Scaler::transform(const Eigen::VectorXd& x) const {
    check_scaler_dim(*this, x.size(), "Scaler::transform");
    return (x - lo).cwiseQuotient(hi - lo);
}

Eigen::MatrixXd Scaler::inverse(const Eigen::MatrixXd& rows) const {
    check_scaler_dim(*this, rows.cols(), "Scaler::inverse");
    return (rows.array().rowwise() * (hi - lo).transpose().array()).matrix().rowwise() +
           lo.transpose();
}

Eigen::VectorXd Scaler::inverse(const Eigen::VectorXd& x) const {
    check_scaler_dim(*this, x.size(), "Scaler::inverse");
    return x.cwiseProduct(hi - lo) + lo;
}

Eigen::VectorXd Scaler::slope() const {
    if (lo.size() == 0) throw InvalidArgumentError("Scaler::slope: scaler not fit");
    return (hi - lo).cwiseInverse();
}

Eigen::MatrixXd sample_domain(const Box& box, int n, std::uint64_t seed) {
    box.validate();
    if (n < 0) throw InvalidArgumentError("sample_domain: negative sample count");
    auto rng = make_rng(seed, 0);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    Eigen::MatrixXd out(n, box.dim());
    for (int i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < box.dim(); ++j) {
            out(i, j) = box.lo(j) + u01(rng) * (box.hi(j) - box.lo(j));
        }
    }
    return out;
}

Eigen::MatrixXd sample_cstr_states(const plants::StabilityRegion& region, int n,
                                   std::uint64_t seed) {
    if (n < 0) throw InvalidArgumentError("sample_cstr_states: negative sample count");
    const Eigen::Vector2d ext = region.axis_extents();
    auto rng = make_rng(seed, 0);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    Eigen::MatrixXd out(n, 2);
    for (int i = 0; i < n; ++i) {
        for (int guard = 0;; ++guard) {
            const Eigen::Vector2d x(ext(0) * (2.0 * u01(rng) - 1.0),
                                    ext(1) * (2.0 * u01(rng) - 1.0));
            if (region.contains(x)) {
                out.row(i) = x.transpose();
                break;
            }
            if (guard > 10000) throw NumericError("sample_cstr_states: rejection loop stuck");
        }
    }
    return out;
}

Eigen::VectorXd cstr_feature_row(const Eigen::Vector2d& x, const Eigen::Vector2d& u) {
    Eigen::VectorXd row(4);
    row << x(0), x(1), u(0), u(1);
    return row;
}

Eigen::VectorXd solar_feature_row(const Eigen::Vector3d& x, double G, double T_kelvin,
                                  double u, double i_L) {
    Eigen::VectorXd row(7);
    row << x(0), x(1), x(2), G, T_kelvin - 273.15, u, i_L;
    return row;
}

Box cstr_input_box() {
    Box b;
    b.lo = Eigen::Vector2d(-3.5, -5e5);
    b.hi = Eigen::Vector2d(3.5, 5e5);
    return b;
}

Box solar_sample_box() {
    Box b;
    b.lo.resize(7);
    b.hi.resize(7);
    b.lo << 10.0, 0.0, 0.0, 10.0, 15.0, 0.1, 0.0;
    b.hi << 40.0, 20.0, 1.0, 1100.0, 70.0, 0.95, 25.0;
    return b;
}

namespace {

int sub_step_count(double sample_period, int repeats, double euler_step, const char* who) {
    if (repeats < 1) throw InvalidArgumentError(std::string(who) + ": repeats must be >= 1");
    const double exact = sample_period / (repeats * euler_step);
    const int k = static_cast<int>(std::llround(exact));
    if (k < 1 || std::abs(exact - k) > 1e-9 * std::max(1.0, exact)) {
        throw InvalidArgumentError(std::string(who) +
                                   ": euler_step must evenly divide the sub-interval");
    }
    return k;
}

// Runs body(i) for i in [0, n); any thrown Error is rethrown on the caller
// with the smallest failing index among the workers.
template <typename Body>
void parallel_samples(int n, int n_threads, const Body& body) {
    n_threads = std::max(1, std::min(n_threads, n));
    if (n_threads == 1) {
        for (int i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errs(n_threads);
    std::vector<int> err_index(n_threads, -1);
    const int chunk = (n + n_threads - 1) / n_threads;
    for (int w = 0; w < n_threads; ++w) {
        pool.emplace_back([&, w] {
            const int begin = w * chunk, end = std::min(n, begin + chunk);
            for (int i = begin; i < end; ++i) {
                try {
                    body(i);
                } catch (...) {
                    errs[w] = std::current_exception();
                    err_index[w] = i;
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    int first = -1;
    for (int w = 0; w < n_threads; ++w) {
        if (err_index[w] >= 0 && (first < 0 || err_index[w] < err_index[first])) first = w;
    }
    if (first >= 0) std::rethrow_exception(errs[first]);
}

}  // namespace

BatchSeq make_targets_cstr(const plants::CstrSpec& spec, const Eigen::MatrixXd& raw,
                           double sample_period, int repeats, double euler_step,
                           int n_threads) {
    if (raw.cols() != 4) throw DimensionError("make_targets_cstr: expected 4 raw features");
    const int k_sub = sub_step_count(sample_period, repeats, euler_step, "make_targets_cstr");
    const int n = static_cast<int>(raw.rows());
    BatchSeq targets(repeats, Eigen::MatrixXd(n, 2));
    parallel_samples(n, n_threads, [&](int i) {
        const Eigen::Vector2d x0 = raw.row(i).head<2>().transpose();
        const Eigen::Vector2d u = raw.row(i).tail<2>().transpose();
        try {
            const Eigen::MatrixXd traj = plants::integrate(
                [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
                    return plants::cstr_rhs(spec, x, u);
                },
                x0, euler_step, repeats * k_sub);
            for (int t = 0; t < repeats; ++t) {
                targets[t].row(i) = traj.row((t + 1) * k_sub).cwiseAbs();
            }
        } catch (const Error& e) {
            throw NumericError("make_targets_cstr: sample " + std::to_string(i) + ": " +
                               e.what());
        }
    });
    return targets;
}

BatchSeq make_targets_solar(const plants::SolarSpec& spec, const Eigen::MatrixXd& raw,
                            double sample_period, int repeats, double euler_step,
                            int n_threads) {
    if (raw.cols() != 7) throw DimensionError("make_targets_solar: expected 7 raw features");
    const int k_sub = sub_step_count(sample_period, repeats, euler_step, "make_targets_solar");
    const int n = static_cast<int>(raw.rows());
    BatchSeq targets(repeats, Eigen::MatrixXd(n, 4));
    parallel_samples(n, n_threads, [&](int i) {
        Eigen::Vector3d x = raw.row(i).head<3>().transpose();
        const Eigen::Vector3d xi(raw(i, 3), raw(i, 4) + 273.15, raw(i, 6));
        const double u = raw(i, 5);
        try {
            for (int t = 0; t < repeats; ++t) {
                x = plants::solar_integrate(spec, x, u, xi, euler_step, k_sub)
                        .row(k_sub).transpose();
                targets[t].row(i) << x(0), x(1), x(2), std::abs(x(1) - xi(2));
            }
        } catch (const Error& e) {
            throw NumericError("make_targets_solar: sample " + std::to_string(i) + ": " +
                               e.what());
        }
    });
    return targets;
}

double toy_surface(int which, double x, double y) {
    switch (which) {
        case 1:
            return -std::cos(4.0 * (x * x + y * y));
        case 2: {
            const double inner = std::min(x * x + y * y,
                                          (2 * x - 1) * (2 * x - 1) + (2 * y - 1) * (2 * y - 1) - 2.0);
            return std::max(inner, -(2 * x + 1) * (2 * x + 1) - (2 * y + 1) * (2 * y + 1) + 4.0);
        }
        case 3: {
            const double c = std::cbrt(x);
            const double x43 = c * c * c * c;
            return x * x * (4.0 - 2.1 * x * x + x43) - 4.0 * y * y * (1.0 - y * y) + x * y;
        }
        default:
            throw InvalidArgumentError("toy_surface: function index must be 1, 2, or 3");
    }
}

Eigen::MatrixXd surface_grid(int which, int grid_n) {
    if (grid_n < 2) throw InvalidArgumentError("surface_grid: need at least a 2x2 grid");
    Eigen::MatrixXd out(grid_n * grid_n, 3);
    const double step = 2.0 / (grid_n - 1);
    int r = 0;
    for (int i = 0; i < grid_n; ++i) {
        const double x = -1.0 + i * step;
        for (int j = 0; j < grid_n; ++j, ++r) {
            const double y = -1.0 + j * step;
            out.row(r) << x, y, toy_surface(which, x, y);
        }
    }
    return out;
}

namespace {
BatchSeq slice_rows(const BatchSeq& seq, int begin, int end) {
    BatchSeq out;
    out.reserve(seq.size());
    for (const auto& m : seq) out.push_back(m.middleRows(begin, end - begin));
    return out;
}
}  // namespace

BatchSeq SequenceDataset::train_inputs() const { return slice_rows(inputs, 0, n_train); }
BatchSeq SequenceDataset::train_targets() const { return slice_rows(targets, 0, n_train); }
BatchSeq SequenceDataset::test_inputs() const { return slice_rows(inputs, n_train, n_samples()); }
BatchSeq SequenceDataset::test_targets() const { return slice_rows(targets, n_train, n_samples()); }

void SequenceDataset::validate() const {
    const int n = n_samples();
    if (repeats < 1 || static_cast<int>(inputs.size()) != repeats ||
        static_cast<int>(targets.size()) != repeats) {
        throw DimensionError("SequenceDataset: sequence length mismatch");
    }
    if (n_raw < 1 || raw.cols() != n_raw) throw DimensionError("SequenceDataset: raw shape");
    if (n_train < 1 || n_train >= n) {
        throw InvalidArgumentError("SequenceDataset: split must leave both train and test rows");
    }
    for (int t = 0; t < repeats; ++t) {
        if (inputs[t].rows() != n || inputs[t].cols() != 2 * n_raw) {
            throw DimensionError("SequenceDataset: input tensor shape at step " +
                                 std::to_string(t));
        }
        if (targets[t].rows() != n || targets[t].cols() != targets[0].cols()) {
            throw DimensionError("SequenceDataset: target tensor shape at step " +
                                 std::to_string(t));
        }
        if (inputs[t] != inputs[0]) {
            throw InvalidArgumentError("SequenceDataset: inputs must repeat the step-0 rows");
        }
    }
    // Undo the normalization and confirm the [x, -x] structure against raw.
    const Eigen::MatrixXd expanded = input_scaler.inverse(inputs[0]);
    if ((expanded.leftCols(n_raw) - raw).cwiseAbs().maxCoeff() > 1e-9 ||
        (expanded.rightCols(n_raw) + raw).cwiseAbs().maxCoeff() > 1e-9) {
        throw NumericError("SequenceDataset: expansion consistency violated");
    }
}

SequenceDataset assemble_dataset(const std::string& plant, const Box& box,
                                 const Eigen::MatrixXd& raw, const BatchSeq& raw_targets,
                                 double train_frac, std::uint64_t seed) {
    const int n = static_cast<int>(raw.rows());
    if (n < 2) throw InvalidArgumentError("assemble_dataset: need at least 2 samples");
    if (raw_targets.empty()) throw InvalidArgumentError("assemble_dataset: no targets");
    if (!(train_frac > 0.0) || !(train_frac < 1.0)) {
        throw InvalidArgumentError("assemble_dataset: train_frac must lie in (0, 1)");
    }
    for (const auto& m : raw_targets) {
        if (m.rows() != n) throw DimensionError("assemble_dataset: target row count");
    }

    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    auto rng = make_rng(seed, 1);
    std::shuffle(perm.begin(), perm.end(), rng);

    SequenceDataset ds;
    ds.plant = plant;
    ds.seed = seed;
    ds.repeats = static_cast<int>(raw_targets.size());
    ds.n_raw = static_cast<int>(raw.cols());
    ds.n_train = std::clamp(static_cast<int>(std::llround(train_frac * n)), 1, n - 1);
    ds.box = box;

    ds.raw.resize(n, ds.n_raw);
    for (int i = 0; i < n; ++i) ds.raw.row(i) = raw.row(perm[i]);

    Eigen::MatrixXd expanded(n, 2 * ds.n_raw);
    expanded << ds.raw, -ds.raw;
    ds.input_scaler.fit(expanded.topRows(ds.n_train));
    const Eigen::MatrixXd scaled_inputs = ds.input_scaler.transform(expanded);

    const int n_t = static_cast<int>(raw_targets[0].cols());
    Eigen::MatrixXd target_train(ds.repeats * ds.n_train, n_t);
    BatchSeq shuffled_targets(ds.repeats, Eigen::MatrixXd(n, n_t));
    for (int t = 0; t < ds.repeats; ++t) {
        for (int i = 0; i < n; ++i) shuffled_targets[t].row(i) = raw_targets[t].row(perm[i]);
        target_train.middleRows(t * ds.n_train, ds.n_train) =
            shuffled_targets[t].topRows(ds.n_train);
    }
    ds.target_scaler.fit(target_train);

    ds.inputs.assign(ds.repeats, scaled_inputs);
    ds.targets.reserve(ds.repeats);
    for (int t = 0; t < ds.repeats; ++t) {
        ds.targets.push_back(ds.target_scaler.transform(shuffled_targets[t]));
    }
    ds.validate();
    return ds;
}

SequenceDataset make_cstr_dataset(const plants::CstrSpec& spec, const CstrDataConfig& cfg,
                                  std::uint64_t seed) {
    const plants::StabilityRegion region;
    const Eigen::MatrixXd states = sample_cstr_states(region, cfg.n_samples,
                                                      derive_seed(seed, 10));
    const Eigen::MatrixXd actions = sample_domain(cstr_input_box(), cfg.n_samples,
                                                  derive_seed(seed, 11));
    Eigen::MatrixXd raw(cfg.n_samples, 4);
    raw << states, actions;
    const BatchSeq targets = make_targets_cstr(spec, raw, cfg.sample_period, cfg.repeats,
                                               cfg.euler_step, cfg.n_threads);
    const Eigen::Vector2d ext = region.axis_extents();
    Box box;
    box.lo.resize(4);
    box.hi.resize(4);
    box.lo << -ext(0), -ext(1), cstr_input_box().lo(0), cstr_input_box().lo(1);
    box.hi << ext(0), ext(1), cstr_input_box().hi(0), cstr_input_box().hi(1);
    return assemble_dataset("cstr", box, raw, targets, cfg.train_frac, seed);
}

SequenceDataset make_solar_dataset(const plants::SolarSpec& spec, const SolarDataConfig& cfg,
                                   std::uint64_t seed) {
    const Box box = solar_sample_box();
    const Eigen::MatrixXd raw = sample_domain(box, cfg.n_samples, derive_seed(seed, 10));
    const BatchSeq targets = make_targets_solar(spec, raw, cfg.sample_period, cfg.repeats,
                                                cfg.euler_step, cfg.n_threads);
    return assemble_dataset("solar", box, raw, targets, cfg.train_frac, seed);
}

SequenceDataset make_surface_dataset(int which, int grid_n, double train_frac,
                                     std::uint64_t seed) {
    const Eigen::MatrixXd grid = surface_grid(which, grid_n);
    const Eigen::MatrixXd raw = grid.leftCols(2);
    BatchSeq targets{grid.rightCols(1)};
    Box box;
    box.lo = Eigen::Vector2d(-1.0, -1.0);
    box.hi = Eigen::Vector2d(1.0, 1.0);
    return assemble_dataset("surface-f" + std::to_string(which), box, raw, targets,
                            train_frac, seed);
}

namespace {

constexpr char kMagic[8] = {'I', 'C', 'L', 'S', 'T', 'M', 'D', 'S'};
constexpr std::uint32_t kVersion = 1;

using bin::get_matrix;
using bin::get_u32;
using bin::put_matrix;
using bin::put_u32;

}  // namespace

void save_dataset(const SequenceDataset& ds, const std::string& path) {
    ds.validate();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("save_dataset: cannot open " + path);
    nlohmann::json header{{"plant", ds.plant},
                          {"seed", std::to_string(ds.seed)},
                          {"repeats", ds.repeats},
                          {"n_raw", ds.n_raw},
                          {"n_train", ds.n_train},
                          {"n_samples", ds.n_samples()},
                          {"n_targets", ds.n_targets()}};
    const std::string htext = header.dump();
    os.write(kMagic, sizeof(kMagic));
    put_u32(os, kVersion);
    put_u32(os, static_cast<std::uint32_t>(htext.size()));
    os.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    put_matrix(os, ds.box.lo.transpose());
    put_matrix(os, ds.box.hi.transpose());
    put_matrix(os, ds.input_scaler.lo.transpose());
    put_matrix(os, ds.input_scaler.hi.transpose());
    put_matrix(os, ds.target_scaler.lo.transpose());
    put_matrix(os, ds.target_scaler.hi.transpose());
    put_matrix(os, ds.raw);
    for (const auto& m : ds.inputs) put_matrix(os, m);
    for (const auto& m : ds.targets) put_matrix(os, m);
    if (!os) throw IoError("save_dataset: write failed for " + path);
}

SequenceDataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("load_dataset: cannot open " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw IoError("load_dataset: " + path + " is not a dataset file");
    }
    if (get_u32(is) != kVersion) throw IoError("load_dataset: unsupported version in " + path);
    const std::uint32_t hlen = get_u32(is);
    std::string htext(hlen, '\0');
    is.read(htext.data(), hlen);
    if (!is) throw IoError("load_dataset: truncated header in " + path);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(htext);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("load_dataset: bad header in " + path + ": " + e.what());
    }

    SequenceDataset ds;
    ds.plant = header.at("plant").get<std::string>();
    ds.seed = std::stoull(header.at("seed").get<std::string>());
    ds.repeats = header.at("repeats").get<int>();
    ds.n_raw = header.at("n_raw").get<int>();
    ds.n_train = header.at("n_train").get<int>();
    const int n = header.at("n_samples").get<int>();
    const int n_t = header.at("n_targets").get<int>();
    if (ds.repeats < 1 || ds.n_raw < 1 || n < 2 || n_t < 1) {
        throw IoError("load_dataset: implausible header in " + path);
    }

    ds.box.lo = get_matrix(is, 1, ds.n_raw, path).transpose();
    ds.box.hi = get_matrix(is, 1, ds.n_raw, path).transpose();
    ds.input_scaler.lo = get_matrix(is, 1, 2 * ds.n_raw, path).transpose();
    ds.input_scaler.hi = get_matrix(is, 1, 2 * ds.n_raw, path).transpose();
    ds.target_scaler.lo = get_matrix(is, 1, n_t, path).transpose();
    ds.target_scaler.hi = get_matrix(is, 1, n_t, path).transpose();
    ds.raw = get_matrix(is, n, ds.n_raw, path);
    ds.inputs.reserve(ds.repeats);
    for (int t = 0; t < ds.repeats; ++t) ds.inputs.push_back(get_matrix(is, n, 2 * ds.n_raw, path));
    ds.targets.reserve(ds.repeats);
    for (int t = 0; t < ds.repeats; ++t) ds.targets.push_back(get_matrix(is, n, n_t, path));
    ds.validate();
    return ds;
}

void export_dataset_csv(const SequenceDataset& ds, const std::string& path) {
    std::vector<std::string> header{"sample", "step", "is_train"};
    for (int j = 0; j < ds.n_raw; ++j) header.push_back("raw" + std::to_string(j));
    for (int j = 0; j < ds.n_targets(); ++j) header.push_back("target" + std::to_string(j));
    const int n = ds.n_samples();
    Eigen::MatrixXd table(n * ds.repeats, header.size());
    BatchSeq physical;
    physical.reserve(ds.repeats);
    for (int t = 0; t < ds.repeats; ++t) physical.push_back(ds.target_scaler.inverse(ds.targets[t]));
    for (int i = 0; i < n; ++i) {
        for (int t = 0; t < ds.repeats; ++t) {
            Eigen::Index r = static_cast<Eigen::Index>(i) * ds.repeats + t;
            table(r, 0) = i;
            table(r, 1) = t;
            table(r, 2) = i < ds.n_train ? 1.0 : 0.0;
            table.block(r, 3, 1, ds.n_raw) = ds.raw.row(i);
            table.block(r, 3 + ds.n_raw, 1, ds.n_targets()) = physical[t].row(i);
        }
    }
    write_csv(path, header, table);
}

Eigen::MatrixXd solar_profile(int n_periods, std::uint64_t seed, bool dropout) {
    if (n_periods < 1) throw InvalidArgumentError("solar_profile: need at least one period");
    Eigen::MatrixXd out(n_periods, 3);
    auto rng = make_rng(seed, 7);
    std::uniform_real_distribution<double> load_dist(3.0, 18.0);
    const int segment = std::max(5, n_periods / 8);
    const double denom = std::max(1, n_periods - 1);
    const double dip_center = 0.6 * n_periods;
    const double dip_width = std::max(1.0, 0.05 * n_periods);
    double load = load_dist(rng);
    for (int k = 0; k < n_periods; ++k) {
        const double s = std::sin(M_PI * k / denom);
        double G = 10.0 + 990.0 * s * s;
        if (dropout) {
            const double z = (k - dip_center) / dip_width;
            G *= 1.0 - 0.7 * std::exp(-0.5 * z * z);
        }
        if (k > 0 && k % segment == 0) load = load_dist(rng);
        out(k, 0) = G;
        out(k, 1) = 293.15 + 40.0 * G / 1100.0;
        out(k, 2) = load;
    }
    return out;
}

}  // namespace iclstm::data
