#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "iclstm/convexity.hpp"
#include "iclstm/data.hpp"
#include "iclstm/mpc.hpp"
#include "iclstm/network.hpp"
#include "iclstm/serialize.hpp"
#include "iclstm/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace iclstm;

namespace {

// ---------------------------------------------------------------------------
// Config file handling. Precedence: flags > config file > compiled defaults.
// ---------------------------------------------------------------------------

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

long long parse_ll(const std::string& s, const std::string& key) {
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': cannot parse integer from '" + s + "'");
    }
}

double parse_num(const std::string& s, const std::string& key) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': cannot parse number from '" + s + "'");
    }
}

bool parse_bool(const std::string& s, const std::string& key) {
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError("config key '" + key + "': expected a boolean, got '" + s + "'");
}

struct KvConfig {
    std::map<std::string, std::string> kv;
    std::set<std::string> known;

    void load(const std::string& path) {
        if (!fs::exists(path)) throw ConfigError("config file not found: " + path);
        const std::string text = read_text_file(path);
        int line_no = 0;
        for (const std::string& raw_line : split(text, '\n')) {
            ++line_no;
            std::string line = raw_line;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                throw ConfigError("config line " + std::to_string(line_no) +
                                  ": expected key = value");
            }
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            if (key.empty()) {
                throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
            }
            if (!kv.emplace(key, value).second) {
                throw ConfigError("duplicate config key '" + key + "'");
            }
        }
    }

    template <typename T>
    void apply(const CLI::Option* opt, const std::string& key, T& var) {
        known.insert(key);
        if (opt != nullptr && opt->count() > 0) return;
        const auto it = kv.find(key);
        if (it == kv.end()) return;
        const std::string& s = it->second;
        if constexpr (std::is_same_v<T, std::string>) {
            var = s;
        } else if constexpr (std::is_same_v<T, bool>) {
            var = parse_bool(s, key);
        } else if constexpr (std::is_integral_v<T>) {
            var = static_cast<T>(parse_ll(s, key));
        } else {
            var = static_cast<T>(parse_num(s, key));
        }
    }

    // Unknown keys are rejected so typos cannot silently fall back to defaults.
    void finish() const {
        for (const auto& [key, value] : kv) {
            if (!known.count(key)) {
                throw ConfigError("config key '" + key + "' is not recognized by this command");
            }
        }
    }
};

// ---------------------------------------------------------------------------
// Shared artifact plumbing.
// ---------------------------------------------------------------------------

struct Globals {
    std::string config_path;
    std::uint64_t seed = 0;
    std::string out_dir = ".";
    int threads = 1;
    CLI::Option *config_opt = nullptr, *seed_opt = nullptr, *out_opt = nullptr,
                *threads_opt = nullptr;

    void resolve(KvConfig& cfg) {
        cfg.apply(seed_opt, "seed", seed);
        cfg.apply(out_opt, "out-dir", out_dir);
        cfg.apply(threads_opt, "threads", threads);
        if (threads < 1) throw ConfigError("threads must be >= 1");
        if (!fs::is_directory(out_dir)) {
            throw ConfigError("output directory does not exist: " + out_dir);
        }
    }

    fs::path out(const std::string& name) const { return fs::path(out_dir) / name; }
};

std::string sanitize(std::string s) {
    for (char& c : s) {
        if (c == '-' || c == '/') c = '_';
    }
    return s;
}

void write_json_file(const fs::path& path, const json& j) {
    write_text_file(path.string(), j.dump(2) + "\n");
}

// The resolved snapshot goes out before any computation; the manifest after.
void write_snapshot(const Globals& g, const std::string& command, const json& resolved) {
    json j = resolved;
    j["command"] = command;
    j["seed"] = g.seed;
    j["out-dir"] = g.out_dir;
    j["threads"] = g.threads;
    write_json_file(g.out(sanitize(command) + "_config.json"), j);
}

void write_manifest(const Globals& g, const std::string& command,
                    std::vector<std::string> artifacts) {
    artifacts.insert(artifacts.begin(), sanitize(command) + "_config.json");
    json j;
    j["command"] = command;
    j["seed"] = g.seed;
    j["artifacts"] = artifacts;
    write_json_file(g.out(sanitize(command) + "_manifest.json"), j);
}

std::vector<int> parse_int_list(const std::string& s, const std::string& what) {
    std::vector<int> out;
    for (const std::string& part : split(s, ',')) {
        const std::string t = trim(part);
        if (t.empty()) throw ConfigError(what + ": empty entry in '" + s + "'");
        out.push_back(static_cast<int>(parse_ll(t, what)));
    }
    return out;
}

Eigen::VectorXd parse_vector(const std::string& s, const std::string& what) {
    const std::vector<std::string> parts = split(s, ',');
    Eigen::VectorXd v(static_cast<Eigen::Index>(parts.size()));
    for (std::size_t i = 0; i < parts.size(); ++i) {
        v(static_cast<Eigen::Index>(i)) = parse_num(trim(parts[i]), what);
    }
    return v;
}

std::vector<Eigen::VectorXd> parse_states(const std::string& s, const std::string& what) {
    std::vector<Eigen::VectorXd> out;
    for (const std::string& part : split(s, ';')) {
        if (trim(part).empty()) continue;
        out.push_back(parse_vector(part, what));
    }
    if (out.empty()) throw ConfigError(what + ": no states in '" + s + "'");
    return out;
}

std::vector<double> to_std(const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

mpc::Plant plant_from_string(const std::string& s) {
    if (s == "cstr") return mpc::Plant::cstr;
    if (s == "solar") return mpc::Plant::solar;
    throw ConfigError("plant must be 'cstr' or 'solar', got '" + s + "'");
}

data::SequenceDataset load_dataset_checked(const std::string& path) {
    if (!fs::exists(path)) throw ConfigError("dataset file not found: " + path);
    return data::load_dataset(path);
}

ModelParams load_model_checked(const std::string& path) {
    if (!fs::exists(path)) throw ConfigError("checkpoint file not found: " + path);
    return load_model(path);
}

// Evaluate a model on raw feature rows through the dataset protocol:
// expand, normalize, slice to the consumed columns, run one step per
// sequence instant, denormalize the final instant.
Eigen::MatrixXd predict_raw(const ModelParams& m, const data::SequenceDataset& ds,
                            const Eigen::MatrixXd& raw, int repeats) {
    const Eigen::MatrixXd expanded = expand_input(raw);
    const Eigen::MatrixXd scaled = ds.input_scaler.transform(expanded);
    const BatchSeq steps(static_cast<std::size_t>(repeats), scaled);
    const BatchSeq consumed = train::model_inputs(m, steps, ds.n_raw);
    const BatchSeq out = forward_batched(m, consumed);
    return ds.target_scaler.inverse(out.back());
}

// The 15 benchmark initial conditions inside the stability region.
std::vector<Eigen::VectorXd> default_cstr_states() {
    const double raw[15][2] = {{-1.5, 70},  {-1.3, 60},  {-1.0, 55},  {-1.25, 50}, {-0.75, 40},
                               {-0.5, 30},  {-0.45, 15}, {1.5, -70},  {1.35, -55}, {1.1, -45},
                               {0.9, -30},  {0.75, -40}, {0.6, -25},  {0.4, -35},  {0.2, -15}};
    std::vector<Eigen::VectorXd> out;
    for (const auto& r : raw) out.push_back(Eigen::Vector2d(r[0], r[1]));
    return out;
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

struct GenerateCmd {
    CLI::App* sub = nullptr;
    std::string plant;
    int n = 20000;
    int m = 10;
    double train_frac = 0.8;
    double sample_period = -1.0;  // per-plant default when negative
    double euler_step = -1.0;
    bool csv = false;
    CLI::Option *plant_opt, *n_opt, *m_opt, *frac_opt, *period_opt, *step_opt, *csv_opt;

    void attach(CLI::App& app) {
        sub = app.add_subcommand("generate", "Sample a plant dataset and write it to disk");
        plant_opt = sub->add_option("--plant", plant, "cstr or solar");
        n_opt = sub->add_option("--n", n, "number of sampled sequences");
        m_opt = sub->add_option("--m", m, "sub-instants recorded per sampling period");
        frac_opt = sub->add_option("--train-frac", train_frac, "training split fraction");
        period_opt = sub->add_option("--sample-period", sample_period, "sampling period");
        step_opt = sub->add_option("--euler-step", euler_step, "integrator step");
        csv_opt = sub->add_flag("--csv", csv, "also export the dataset as CSV");
    }

    int run(Globals& g, KvConfig& cfg) {
        cfg.apply(plant_opt, "plant", plant);
        cfg.apply(n_opt, "n", n);
        cfg.apply(m_opt, "m", m);
        cfg.apply(frac_opt, "train-frac", train_frac);
        cfg.apply(period_opt, "sample-period", sample_period);
        cfg.apply(step_opt, "euler-step", euler_step);
        cfg.apply(csv_opt, "csv", csv);
        cfg.finish();
        const mpc::Plant which = plant_from_string(plant);

        double period = sample_period, step = euler_step;
        if (period <= 0.0) period = which == mpc::Plant::cstr ? 5e-3 : 60.0;
        if (step <= 0.0) step = which == mpc::Plant::cstr ? 1e-4 : 5e-3;

        json resolved{{"plant", plant},         {"n", n},
                      {"m", m},                 {"train-frac", train_frac},
                      {"sample-period", period}, {"euler-step", step},
                      {"csv", csv}};
        write_snapshot(g, "generate", resolved);

        data::SequenceDataset ds;
        if (which == mpc::Plant::cstr) {
            data::CstrDataConfig dc;
            dc.n_samples = n;
            dc.repeats = m;
            dc.sample_period = period;
            dc.euler_step = step;
            dc.train_frac = train_frac;
            dc.n_threads = g.threads;
            ds = data::make_cstr_dataset(plants::CstrSpec{}, dc, g.seed);
        } else {
            data::SolarDataConfig sc;
            sc.n_samples = n;
            sc.repeats = m;
            sc.sample_period = period;
            sc.euler_step = step;
            sc.train_frac = train_frac;
            sc.n_threads = g.threads;
            ds = data::make_solar_dataset(plants::SolarSpec{}, sc, g.seed);
        }

        const std::string stem = plant + "_dataset";
        data::save_dataset(ds, g.out(stem + ".bin").string());
        json meta{{"plant", ds.plant},
                  {"seed", ds.seed},
                  {"n_samples", ds.n_samples()},
                  {"repeats", ds.repeats},
                  {"n_raw", ds.n_raw},
                  {"n_targets", ds.n_targets()},
                  {"n_train", ds.n_train},
                  {"sample-period", period},
                  {"euler-step", step},
                  {"box_lo", to_std(ds.box.lo)},
                  {"box_hi", to_std(ds.box.hi)}};
        write_json_file(g.out(stem + "_meta.json"), meta);

        std::vector<std::string> artifacts{stem + ".bin", stem + "_meta.json"};
        if (csv) {
            data::export_dataset_csv(ds, g.out(stem + ".csv").string());
            artifacts.push_back(stem + ".csv");
        }
        write_manifest(g, "generate", artifacts);
        std::cout << "generated " << ds.n_samples() << " sequences (" << ds.repeats
                  << " x " << 2 * ds.n_raw << " inputs) -> " << g.out(stem + ".bin").string()
                  << "\n";
        return 0;
    }
};

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainCmd {
    CLI::App* sub = nullptr;
    std::string dataset;
    std::string arch = "iclstm";
    std::string hidden = "64,64";
    std::string act;
    int batch = 128;
    double lr0 = 1e-3;
    int epochs = 500;
    int patience = 10;
    int max_halvings = 6;
    double clip = 10.0;
    CLI::Option *data_opt, *arch_opt, *hidden_opt, *act_opt, *batch_opt, *lr_opt, *epochs_opt,
        *patience_opt, *halvings_opt, *clip_opt;

    void attach(CLI::App& app) {
        sub = app.add_subcommand("train", "Train one architecture on a stored dataset");
        data_opt = sub->add_option("--dataset", dataset, "dataset file from generate");
        arch_opt = sub->add_option("--arch", arch, "rnn, lstm, icrnn or iclstm");
        hidden_opt = sub->add_option("--hidden", hidden, "hidden widths, e.g. 64,64");
        act_opt = sub->add_option("--act", act,
                                  "override the hidden activation (e.g. softplus for a "
                                  "twice-differentiable convex model)");
        batch_opt = sub->add_option("--batch", batch, "mini-batch size");
        lr_opt = sub->add_option("--lr0", lr0, "initial learning rate");
        epochs_opt = sub->add_option("--epochs", epochs, "maximum epochs");
        patience_opt = sub->add_option("--patience", patience, "epochs before lr halving");
        halvings_opt = sub->add_option("--max-halvings", max_halvings, "halvings before stop");
        clip_opt = sub->add_option("--clip", clip, "gradient norm clip; <= 0 disables");
    }

    int run(Globals& g, KvConfig& cfg) {
        cfg.apply(data_opt, "dataset", dataset);
        cfg.apply(arch_opt, "arch", arch);
        cfg.apply(hidden_opt, "hidden", hidden);
        cfg.apply(act_opt, "act", act);
        cfg.apply(batch_opt, "batch", batch);
        cfg.apply(lr_opt, "lr0", lr0);
        cfg.apply(epochs_opt, "epochs", epochs);
        cfg.apply(patience_opt, "patience", patience);
        cfg.apply(halvings_opt, "max-halvings", max_halvings);
        cfg.apply(clip_opt, "clip", clip);
        cfg.finish();
        if (dataset.empty()) throw ConfigError("train: --dataset is required");
        const Arch a = arch_from_string(arch);
        const std::vector<int> widths = parse_int_list(hidden, "hidden");

        json resolved{{"dataset", dataset},   {"arch", arch},
                      {"hidden", hidden},     {"act", act},
                      {"batch", batch},       {"lr0", lr0},
                      {"epochs", epochs},     {"patience", patience},
                      {"max-halvings", max_halvings}, {"clip", clip}};
        write_snapshot(g, "train", resolved);

        const data::SequenceDataset ds = load_dataset_checked(dataset);
        ModelParams init = train::init_params(a, ds.n_raw, widths, ds.n_targets(), g.seed);
        if (!act.empty()) {
            const ActivationKind kind = activation_from_string(act);
            init.hidden_act.kind = kind;
            if (init.convex_arch()) {
                init.dense_act.kind = kind;
                // A smooth gate activation is only useful with a smooth head.
                if (kind != ActivationKind::relu) init.output_act.kind = ActivationKind::linear;
            }
            init.validate();
        }

        train::TrainConfig tc;
        tc.batch_size = batch;
        tc.lr0 = lr0;
        tc.max_epochs = epochs;
        tc.patience = patience;
        tc.max_halvings = max_halvings;
        tc.clip_threshold = clip;
        tc.seed = g.seed;

        const std::string stem = sanitize(arch + "_" + ds.plant);
        std::vector<std::string> artifacts{"train_" + stem + ".csv"};
        try {
            const train::FitResult fit = train::fit(init, ds, tc);
            save_model(fit.params, g.out(stem + ".model").string());
            train::report_to_csv(fit.report, g.out("train_" + stem + ".csv").string());
            json summary{{"arch", arch},
                         {"plant", ds.plant},
                         {"hidden", hidden},
                         {"best_test_mse", fit.report.best_test},
                         {"best_epoch", fit.report.best_epoch},
                         {"epochs_run", fit.report.epochs_run},
                         {"halvings", fit.report.halvings}};
            write_json_file(g.out("train_" + stem + "_summary.json"), summary);
            artifacts.insert(artifacts.begin(), stem + ".model");
            artifacts.push_back("train_" + stem + "_summary.json");
            write_manifest(g, "train", artifacts);
            std::cout << "trained " << arch << " on " << ds.plant << ": best test MSE "
                      << fit.report.best_test << " at epoch " << fit.report.best_epoch << " ("
                      << fit.report.epochs_run << " epochs, " << fit.report.wall_seconds
                      << " s)\n";
            return 0;
        } catch (const train::TrainingDivergedError& e) {
            // Leave the partial report behind for diagnosis, then surface the
            // numeric failure through the exit code.
            train::report_to_csv(e.report, g.out("train_" + stem + ".csv").string());
            write_manifest(g, "train", artifacts);
            throw;
        }
    }
};

// ---------------------------------------------------------------------------
// certify
// ---------------------------------------------------------------------------

struct CertifyCmd {
    CLI::App* sub = nullptr;
    std::string checkpoint;
    std::string dataset;
    int pairs = 1000;
    int probes = 1000;
    int points = 5;
    double midpoint_tol = 1e-7;
    double monotone_tol = 1e-9;
    double fd_step = 1e-4;
    double hessian_floor = -1e-6;
    CLI::Option *ckpt_opt, *data_opt, *pairs_opt, *probes_opt, *points_opt, *mid_opt, *mono_opt,
        *fd_opt, *floor_opt;

    void attach(CLI::App& app) {
        sub = app.add_subcommand("certify",
                                 "Probe a trained model for input convexity; the exit code "
                                 "is the verdict (0 certified, 1 refuted, 2 inconclusive)");
        ckpt_opt = sub->add_option("--checkpoint", checkpoint, "model file from train");
        data_opt = sub->add_option("--dataset", dataset, "dataset supplying domain and length");
        pairs_opt = sub->add_option("--pairs", pairs, "midpoint pairs");
        probes_opt = sub->add_option("--probes", probes, "monotonicity probes");
        points_opt = sub->add_option("--points", points, "Hessian probe points");
        mid_opt = sub->add_option("--midpoint-tol", midpoint_tol, "relative midpoint tolerance");
        mono_opt = sub->add_option("--monotone-tol", monotone_tol, "absolute drop tolerance");
        fd_opt = sub->add_option("--fd-step", fd_step, "Hessian finite-difference step");
        floor_opt = sub->add_option("--hessian-floor", hessian_floor, "eigenvalue noise floor");
    }

    int run(Globals& g, KvConfig& cfg) {
        cfg.apply(ckpt_opt, "checkpoint", checkpoint);
        cfg.apply(data_opt, "dataset", dataset);
        cfg.apply(pairs_opt, "pairs", pairs);
        cfg.apply(probes_opt, "probes", probes);
        cfg.apply(points_opt, "points", points);
        cfg.apply(mid_opt, "midpoint-tol", midpoint_tol);
        cfg.apply(mono_opt, "monotone-tol", monotone_tol);
        cfg.apply(fd_opt, "fd-step", fd_step);
        cfg.apply(floor_opt, "hessian-floor", hessian_floor);
        cfg.finish();
        if (checkpoint.empty() || dataset.empty()) {
            throw ConfigError("certify: --checkpoint and --dataset are required");
        }

        json resolved{{"checkpoint", checkpoint},
                      {"dataset", dataset},
                      {"pairs", pairs},
                      {"probes", probes},
                      {"points", points},
                      {"midpoint-tol", midpoint_tol},
                      {"monotone-tol", monotone_tol},
                      {"fd-step", fd_step},
                      {"hessian-floor", hessian_floor}};
        write_snapshot(g, "certify", resolved);

        const ModelParams m = load_model_checked(checkpoint);
        const data::SequenceDataset ds = load_dataset_checked(dataset);
        if (m.n_x != ds.n_raw) {
            throw ConfigError("certify: checkpoint raw width " + std::to_string(m.n_x) +
                              " does not match dataset width " + std::to_string(ds.n_raw));
        }

        convexity::CertifyConfig cc;
        cc.repeats = ds.repeats;
        cc.n_pairs = pairs;
        cc.n_probes = probes;
        cc.hessian_points = points;
        cc.midpoint_tol = midpoint_tol;
        cc.monotone_tol = monotone_tol;
        cc.fd_step = fd_step;
        cc.hessian_floor = hessian_floor;
        cc.seed = g.seed;
        const convexity::ConvexityReport report = convexity::certify(m, ds, cc);

        const std::string stem = sanitize(fs::path(checkpoint).stem().string());
        convexity::export_report_json(report, g.out("certify_" + stem + ".json").string());
        std::vector<std::string> artifacts{"certify_" + stem + ".json"};
        if (!report.counterexamples.empty()) {
            convexity::export_counterexamples_csv(
                report, g.out("certify_" + stem + "_counterexamples.csv").string());
            artifacts.push_back("certify_" + stem + "_counterexamples.csv");
        }
        write_manifest(g, "certify", artifacts);
        std::cout << "verdict: " << convexity::to_string(report.verdict) << " ("
                  << report.midpoint_violations << " midpoint / "
                  << report.monotonicity_violations << " monotonicity violations)\n";
        switch (report.verdict) {
            case convexity::Verdict::certified: return 0;
            case convexity::Verdict::refuted: return 1;
            case convexity::Verdict::inconclusive: return 2;
        }
        return 2;
    }
};

// ---------------------------------------------------------------------------
// fit-surface
// ---------------------------------------------------------------------------

struct FitSurfaceCmd {
    CLI::App* sub = nullptr;
    int fn = 1;
    std::string arch = "iclstm";
    int grid_n = 21;
    std::string hidden = "24,24";
    double train_frac = 0.8;
    int batch = 64;
    double lr0 = 1e-3;
    int epochs = 300;
    int patience = 10;
    int max_halvings = 6;
    CLI::Option *fn_opt, *arch_opt, *grid_opt, *hidden_opt, *frac_opt, *batch_opt, *lr_opt,
        *epochs_opt, *patience_opt, *halvings_opt;

    void attach(CLI::App& app) {
        sub = app.add_subcommand("fit-surface",
                                 "Fit a toy surface and report grid midpoint convexity");
        fn_opt = sub->add_option("--fn", fn, "surface index: 1, 2 or 3");
        arch_opt = sub->add_option("--arch", arch, "rnn, lstm, icrnn or iclstm");
        grid_opt = sub->add_option("--grid-n", grid_n, "grid resolution per axis");
        hidden_opt = sub->add_option("--hidden", hidden, "hidden widths");
        frac_opt = sub->add_option("--train-frac", train_frac, "training split fraction");
        batch_opt = sub->add_option("--batch", batch, "mini-batch size");
        lr_opt = sub->add_option("--lr0", lr0, "initial learning rate");
        epochs_opt = sub->add_option("--epochs", epochs, "maximum epochs");
        patience_opt = sub->add_option("--patience", patience, "epochs before lr halving");
        halvings_opt = sub->add_option("--max-halvings", max_halvings, "halvings before stop");
    }

    int run(Globals& g, KvConfig& cfg) {
        cfg.apply(fn_opt, "fn", fn);
        cfg.apply(arch_opt, "arch", arch);
        cfg.apply(grid_opt, "grid-n", grid_n);
        cfg.apply(hidden_opt, "hidden", hidden);
        cfg.apply(frac_opt, "train-frac", train_frac);
        cfg.apply(batch_opt, "batch", batch);
        cfg.apply(lr_opt, "lr0", lr0);
        cfg.apply(epochs_opt, "epochs", epochs);
        cfg.apply(patience_opt, "patience", patience);
        cfg.apply(halvings_opt, "max-halvings", max_halvings);
        cfg.finish();
        const Arch a = arch_from_string(arch);
        const std::vector<int> widths = parse_int_list(hidden, "hidden");

        json resolved{{"fn", fn},         {"arch", arch},         {"grid-n", grid_n},
                      {"hidden", hidden}, {"train-frac", train_frac}, {"batch", batch},
                      {"lr0", lr0},       {"epochs", epochs},     {"patience", patience},
                      {"max-halvings", max_halvings}};
        write_snapshot(g, "fit-surface", resolved);

        const data::SequenceDataset ds =
            data::make_surface_dataset(fn, grid_n, train_frac, g.seed);
        const ModelParams init = train::init_params(a, 2, widths, 1, g.seed);
        train::TrainConfig tc;
        tc.batch_size = batch;
        tc.lr0 = lr0;
        tc.max_epochs = epochs;
        tc.patience = patience;
        tc.max_halvings = max_halvings;
        tc.seed = g.seed;
        const train::FitResult fit = train::fit(init, ds, tc);

        const Eigen::MatrixXd grid = data::surface_grid(fn, grid_n);
        const Eigen::MatrixXd pred = predict_raw(fit.params, ds, grid.leftCols(2), ds.repeats);

        const std::string stem = "surface_f" + std::to_string(fn) + "_" + sanitize(arch);
        Eigen::MatrixXd rows(grid.rows(), 4);
        rows << grid, pred;
        write_csv(g.out(stem + ".csv").string(), {"x", "y", "f_true", "f_pred"}, rows);
        save_model(fit.params, g.out(stem + ".model").string());

        Eigen::MatrixXd v_true(grid_n, grid_n), v_pred(grid_n, grid_n);
        for (int i = 0; i < grid_n; ++i) {
            for (int j = 0; j < grid_n; ++j) {
                v_true(i, j) = grid(i * grid_n + j, 2);
                v_pred(i, j) = pred(i * grid_n + j, 0);
            }
        }
        const int bad_true = convexity::grid_midpoint_violations(v_true, 1e-7);
        const int bad_pred = convexity::grid_midpoint_violations(v_pred, 1e-7);

        json summary{{"fn", fn},
                     {"arch", arch},
                     {"grid_n", grid_n},
                     {"best_test_mse", fit.report.best_test},
                     {"epochs_run", fit.report.epochs_run},
                     {"violations_true", bad_true},
                     {"violations_pred", bad_pred},
                     {"convex_true", bad_true == 0},
                     {"convex_pred", bad_pred == 0}};
        write_json_file(g.out(stem + "_summary.json"), summary);
        write_manifest(g, "fit-surface",
                       {stem + ".csv", stem + ".model", stem + "_summary.json"});
        std::cout << "f" << fn << " " << arch << ": test MSE " << fit.report.best_test
                  << ", grid midpoint violations true/pred " << bad_true << "/" << bad_pred
                  << "\n";
        return 0;
    }
};

// ---------------------------------------------------------------------------
// mpc
// ---------------------------------------------------------------------------

struct SolverOpts {
    int starts = 5;
    int max_outer = 10;
    int max_inner = 150;
    double grad_tol = 1e-6;
    double feas_tol = 1e-6;
    double mu0 = 10.0;
    double mu_growth = 4.0;
    CLI::Option *starts_opt, *outer_opt, *inner_opt, *gtol_opt, *ftol_opt, *mu_opt, *growth_opt;

    void attach(CLI::App* sub) {
        starts_opt = sub->add_option("--starts", starts, "multi-start count");
        outer_opt = sub->add_option("--max-outer", max_outer, "augmented-Lagrangian rounds");
        inner_opt = sub->add_option("--max-inner", max_inner, "gradient steps per round");
        gtol_opt = sub->add_option("--grad-tol", grad_tol, "projected-gradient tolerance");
        ftol_opt = sub->add_option("--feas-tol", feas_tol, "constraint tolerance");
        mu_opt = sub->add_option("--mu0", mu0, "initial penalty weight");
        growth_opt = sub->add_option("--mu-growth", mu_growth, "penalty growth factor");
    }

    void resolve(KvConfig& cfg) {
        cfg.apply(starts_opt, "starts", starts);
        cfg.apply(outer_opt, "max-outer", max_outer);
        cfg.apply(inner_opt, "max-inner", max_inner);
        cfg.apply(gtol_opt, "grad-tol", grad_tol);
        cfg.apply(ftol_opt, "feas-tol", feas_tol);
        cfg.apply(mu_opt, "mu0", mu0);
        cfg.apply(growth_opt, "mu-growth", mu_growth);
    }

    mpc::SolverConfig to_config(std::uint64_t seed) const {
        mpc::SolverConfig sc;
        sc.starts = starts;
        sc.max_outer = max_outer;
        sc.max_inner = max_inner;
        sc.grad_tol = grad_tol;
        sc.feas_tol = feas_tol;
        sc.mu0 = mu0;
        sc.mu_growth = mu_growth;
        sc.seed = seed;
        return sc;
    }

    json to_json() const {
        return json{{"starts", starts},     {"max-outer", max_outer}, {"max-inner", max_inner},
                    {"grad-tol", grad_tol}, {"feas-tol", feas_tol},   {"mu0", mu0},
                    {"mu-growth", mu_growth}};
    }
};

struct MpcCmd {
    CLI::App* sub = nullptr;
    std::string plant;
    std::string checkpoint;
    std::string dataset;
    std::string x0;
    int steps = 0;  // per-plant default when 0
    int horizon = 2;
    bool certified = false;
    bool dropout = true;
    SolverOpts solver;
    CLI::Option *plant_opt, *ckpt_opt, *data_opt, *x0_opt, *steps_opt, *horizon_opt, *cert_opt,
        *dropout_opt;

    void attach(CLI::App& app) {
        sub = app.add_subcommand("mpc", "Run a closed-loop simulation with a trained surrogate");
        plant_opt = sub->add_option("--plant", plant, "cstr or solar");
        ckpt_opt = sub->add_option("--checkpoint", checkpoint, "model file from train");
        data_opt = sub->add_option("--dataset", dataset, "dataset supplying the scalers");
        x0_opt = sub->add_option("--x0", x0, "initial state, comma separated");
        steps_opt = sub->add_option("--steps", steps, "sampling periods to run");
        horizon_opt = sub->add_option("--horizon", horizon, "prediction horizon");
        cert_opt = sub->add_flag("--certified", certified, "single-start convex solve");
        dropout_opt = sub->add_flag("--dropout,!--no-dropout", dropout,
                                    "irradiance dip in the solar trace");
        solver.attach(sub);
    }

    int run(Globals& g, KvConfig& cfg) {
        cfg.apply(plant_opt, "plant", plant);
        cfg.apply(ckpt_opt, "checkpoint", checkpoint);
        cfg.apply(data_opt, "dataset", dataset);
        cfg.apply(x0_opt, "x0", x0);
        cfg.apply(steps_opt, "steps", steps);
        cfg.apply(horizon_opt, "horizon", horizon);
        cfg.apply(cert_opt, "certified", certified);
        cfg.apply(dropout_opt, "dropout", dropout);
        solver.resolve(cfg);
        cfg.finish();
        if (checkpoint.empty() || dataset.empty()) {
            throw ConfigError("mpc: --checkpoint and --dataset are required");
        }
        const mpc::Plant which = plant_from_string(plant);
        if (steps <= 0) steps = which == mpc::Plant::cstr ? 200 : 30;
        if (x0.empty()) x0 = which == mpc::Plant::cstr ? "-1.5,70" : "30,5,0.5";
        const Eigen::VectorXd state0 = parse_vector(x0, "x0");

        json resolved{{"plant", plant},     {"checkpoint", checkpoint}, {"dataset", dataset},
                      {"x0", x0},           {"steps", steps},           {"horizon", horizon},
                      {"certified", certified}, {"dropout", dropout},
                      {"solver", solver.to_json()}};
        write_snapshot(g, "mpc", resolved);

        const ModelParams m = load_model_checked(checkpoint);
        const data::SequenceDataset ds = load_dataset_checked(dataset);
        const mpc::Surrogate surrogate = mpc::make_surrogate(m, ds);
        mpc::MpcProblem pb = which == mpc::Plant::cstr
                                 ? mpc::make_cstr_problem(surrogate, certified)
                                 : mpc::make_solar_problem(surrogate, certified);
        pb.horizon = horizon;
        pb.validate();

        const Eigen::MatrixXd trace = which == mpc::Plant::solar
                                          ? data::solar_profile(steps, g.seed, dropout)
                                          : Eigen::MatrixXd();
        const mpc::ClosedLoopResult r =
            mpc::closed_loop(pb, state0, steps, trace, solver.to_config(g.seed));

        const std::string stem = "mpc_" + plant;
        mpc::export_closed_loop_csv(pb, r, g.out(stem + "_closed_loop.csv").string());

        const Eigen::VectorXd final_state =
            r.trajectory.row(r.trajectory.rows() - 1).transpose();
        json summary{{"plant", plant},
                     {"arch", to_string(m.arch)},
                     {"x0", to_std(state0)},
                     {"steps_run", r.steps_run},
                     {"converged", r.converged},
                     {"total_solve_s", r.total_solve_s},
                     {"mean_step_solve_s", r.mean_step_solve_s},
                     {"final_state", to_std(final_state)}};
        std::vector<double> per_step, lyapunov;
        int feasible_steps = 0;
        for (const auto& st : r.steps) {
            per_step.push_back(st.solve.wall_time);
            if (which == mpc::Plant::cstr) lyapunov.push_back(st.lyapunov);
            if (st.solve.feasible) ++feasible_steps;
        }
        summary["per_step_solve_s"] = per_step;
        summary["feasible_steps"] = feasible_steps;
        if (which == mpc::Plant::cstr) summary["lyapunov"] = lyapunov;
        write_json_file(g.out(stem + "_summary.json"), summary);
        write_manifest(g, "mpc", {stem + "_closed_loop.csv", stem + "_summary.json"});
        std::cout << "closed loop: " << r.steps_run << " steps, converged "
                  << (r.converged ? "yes" : "no") << ", mean solve " << r.mean_step_solve_s
                  << " s/step\n";
        return 0;
    }
};

// ---------------------------------------------------------------------------
// benchmark
// ---------------------------------------------------------------------------

struct BenchmarkCmd {
    CLI::App* sub = nullptr;
    std::string plant = "cstr";
    std::vector<std::string> model_flags;
    std::string models_key;  // config-file form: name=path;name=path
    std::string certified;   // comma-separated model names
    std::string dataset;
    std::string x0s;
    int steps = 0;
    int repeats = 3;
    bool dropout = true;
    SolverOpts solver;
    CLI::Option *plant_opt, *model_opt, *cert_opt, *data_opt, *x0s_opt, *steps_opt, *repeats_opt,
        *dropout_opt;

    void attach(CLI::App& app) {
        sub = app.add_subcommand("benchmark",
                                 "Closed-loop timing comparison across trained models");
        plant_opt = sub->add_option("--plant", plant, "cstr or solar");
        model_opt = sub->add_option("--model", model_flags,
                                    "model entry name=checkpoint (repeatable)");
        cert_opt = sub->add_option("--certified", certified,
                                   "comma-separated names solved single-start");
        data_opt = sub->add_option("--dataset", dataset, "dataset supplying the scalers");
        x0s_opt = sub->add_option("--x0s", x0s, "initial states a,b;c,d;... (default suite)");
        steps_opt = sub->add_option("--steps", steps, "sampling periods per run");
        repeats_opt = sub->add_option("--repeats", repeats, "repeated runs per cell");
        dropout_opt = sub->add_flag("--dropout,!--no-dropout", dropout,
                                    "irradiance dip in the solar trace");
        solver.attach(sub);
    }

    int run(Globals& g, KvConfig& cfg) {
        cfg.apply(plant_opt, "plant", plant);
        cfg.apply(model_opt, "models", models_key);
        cfg.apply(cert_opt, "certified", certified);
        cfg.apply(data_opt, "dataset", dataset);
        cfg.apply(x0s_opt, "x0s", x0s);
        cfg.apply(steps_opt, "steps", steps);
        cfg.apply(repeats_opt, "repeats", repeats);
        cfg.apply(dropout_opt, "dropout", dropout);
        solver.resolve(cfg);
        cfg.finish();
        if (dataset.empty()) throw ConfigError("benchmark: --dataset is required");

        std::vector<std::string> entries = model_flags;
        if (entries.empty() && !models_key.empty()) {
            for (const std::string& e : split(models_key, ';')) {
                if (!trim(e).empty()) entries.push_back(trim(e));
            }
        }
        if (entries.empty()) {
            throw ConfigError("benchmark: at least one --model name=checkpoint is required");
        }
        const mpc::Plant which = plant_from_string(plant);
        if (steps <= 0) steps = which == mpc::Plant::cstr ? 200 : 20;

        std::set<std::string> certified_names;
        for (const std::string& n : split(certified, ',')) {
            if (!trim(n).empty()) certified_names.insert(trim(n));
        }

        json resolved{{"plant", plant},     {"models", entries},   {"certified", certified},
                      {"dataset", dataset}, {"x0s", x0s},          {"steps", steps},
                      {"repeats", repeats}, {"dropout", dropout},  {"solver", solver.to_json()}};
        write_snapshot(g, "benchmark", resolved);

        const data::SequenceDataset ds = load_dataset_checked(dataset);
        std::vector<mpc::BenchmarkModel> models;
        for (const std::string& entry : entries) {
            const auto eq = entry.find('=');
            if (eq == std::string::npos || eq == 0 || eq + 1 == entry.size()) {
                throw ConfigError("benchmark: model entry must be name=checkpoint, got '" +
                                  entry + "'");
            }
            const std::string name = trim(entry.substr(0, eq));
            const std::string path = trim(entry.substr(eq + 1));
            models.push_back({name, mpc::make_surrogate(load_model_checked(path), ds),
                              certified_names.count(name) > 0});
        }

        std::vector<Eigen::VectorXd> states;
        if (!x0s.empty()) {
            states = parse_states(x0s, "x0s");
        } else if (which == mpc::Plant::cstr) {
            states = default_cstr_states();
        } else {
            states = {default_solar_state()};
        }

        const Eigen::MatrixXd trace = which == mpc::Plant::solar
                                          ? data::solar_profile(steps, g.seed, dropout)
                                          : Eigen::MatrixXd();
        const std::vector<mpc::BenchmarkRow> rows = mpc::benchmark(
            which, models, states, steps, trace, solver.to_config(g.seed), repeats);

        const std::string stem = "benchmark_" + plant;
        mpc::export_benchmark_csv(rows, g.out(stem + ".csv").string());

        // Per-model aggregates plus the relative-time summary against the
        // first certified (or first listed) model.
        json per_model = json::object();
        std::map<std::string, std::vector<const mpc::BenchmarkRow*>> by_model;
        for (const auto& r : rows) by_model[r.model].push_back(&r);
        std::string reference = models.front().name;
        for (const auto& bm : models) {
            if (bm.certified) {
                reference = bm.name;
                break;
            }
        }
        std::map<std::string, double> mean_total;
        for (const auto& [name, rs] : by_model) {
            double sum = 0.0, sum2 = 0.0, step_sum = 0.0;
            int converged = 0;
            for (const auto* r : rs) {
                sum += r->total_solve_s;
                sum2 += r->total_solve_s * r->total_solve_s;
                step_sum += r->mean_step_solve_s;
                if (r->converged) ++converged;
            }
            const double n = static_cast<double>(rs.size());
            const double mean = sum / n;
            const double var = std::max(0.0, sum2 / n - mean * mean);
            mean_total[name] = mean;
            per_model[name] = json{{"runs", rs.size()},
                                   {"converged", converged},
                                   {"mean_total_solve_s", mean},
                                   {"std_total_solve_s", std::sqrt(var)},
                                   {"mean_step_solve_s", step_sum / n}};
        }
        json decreases = json::object();
        for (const auto& [name, mean] : mean_total) {
            if (name == reference || mean <= 0.0) continue;
            decreases[name] = 100.0 * (1.0 - mean_total[reference] / mean);
        }
        json summary{{"plant", plant},
                     {"reference", reference},
                     {"models", per_model},
                     {"percent_decrease_vs", decreases}};
        write_json_file(g.out(stem + "_summary.json"), summary);
        write_manifest(g, "benchmark", {stem + ".csv", stem + "_summary.json"});
        std::cout << "benchmark: " << rows.size() << " runs over " << models.size()
                  << " models x " << states.size() << " starts -> "
                  << g.out(stem + ".csv").string() << "\n";
        return 0;
    }

    static Eigen::VectorXd default_solar_state() {
        Eigen::VectorXd v(3);
        v << 30.0, 5.0, 0.5;
        return v;
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Input-convex recurrent models with plant simulators and predictive control"};
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    g.config_opt = app.add_option("--config", g.config_path, "key = value config file");
    g.seed_opt = app.add_option("--seed", g.seed, "root seed for all derived streams");
    g.out_opt = app.add_option("--out-dir", g.out_dir, "directory for artifacts");
    g.threads_opt = app.add_option("--threads", g.threads, "worker threads for generation");

    GenerateCmd generate;
    TrainCmd train_cmd;
    CertifyCmd certify_cmd;
    FitSurfaceCmd fit_surface;
    MpcCmd mpc_cmd;
    BenchmarkCmd benchmark_cmd;
    generate.attach(app);
    train_cmd.attach(app);
    certify_cmd.attach(app);
    fit_surface.attach(app);
    mpc_cmd.attach(app);
    benchmark_cmd.attach(app);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }

    try {
        KvConfig cfg;
        if (g.config_opt->count() > 0) cfg.load(g.config_path);
        g.resolve(cfg);
        if (generate.sub->parsed()) return generate.run(g, cfg);
        if (train_cmd.sub->parsed()) return train_cmd.run(g, cfg);
        if (certify_cmd.sub->parsed()) return certify_cmd.run(g, cfg);
        if (fit_surface.sub->parsed()) return fit_surface.run(g, cfg);
        if (mpc_cmd.sub->parsed()) return mpc_cmd.run(g, cfg);
        if (benchmark_cmd.sub->parsed()) return benchmark_cmd.run(g, cfg);
        std::cerr << "error: no command selected\n";
        return 1;
    } catch (const mpc::InfeasibleStartError& e) {
        std::cerr << "infeasible: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
