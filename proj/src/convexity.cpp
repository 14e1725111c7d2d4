#include "iclstm/convexity.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

namespace iclstm::convexity {

namespace {

constexpr int kMaxStored = 32;

Eigen::VectorXd sample_point(const Box& box, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    Eigen::VectorXd x(box.dim());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        x(i) = box.lo(i) + ud(rng) * (box.hi(i) - box.lo(i));
    }
    return x;
}

void require_probe_args(const PointModel& f, const Box& domain, int n) {
    domain.validate();
    if (domain.dim() != f.n_in) {
        throw DimensionError("convexity probe: domain dimension does not match the model input");
    }
    if (n < 1) throw InvalidArgumentError("convexity probe: sample count must be positive");
}

void store(ConvexityReport& r, Counterexample ce) {
    if (static_cast<int>(r.counterexamples.size()) < kMaxStored) {
        r.counterexamples.push_back(std::move(ce));
    }
}

}  // namespace

std::string to_string(Verdict v) {
    switch (v) {
        case Verdict::certified: return "certified";
        case Verdict::refuted: return "refuted";
        default: return "inconclusive";
    }
}

ConvexityReport check_midpoint(const PointModel& f, const Box& domain, int n_pairs, double tol,
                               std::uint64_t seed) {
    require_probe_args(f, domain, n_pairs);
    auto rng = make_rng(seed, 4);
    ConvexityReport r;
    r.n_pairs = n_pairs;
    r.worst_violation = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < n_pairs; ++k) {
        const Eigen::VectorXd a = sample_point(domain, rng);
        const Eigen::VectorXd b = sample_point(domain, rng);
        const Eigen::VectorXd fa = f.eval(a);
        const Eigen::VectorXd fb = f.eval(b);
        const Eigen::VectorXd fm = f.eval(0.5 * (a + b));
        bool violated = false;
        for (Eigen::Index c = 0; c < fm.size(); ++c) {
            const double avg = 0.5 * (fa(c) + fb(c));
            const double gap = (fm(c) - avg) / std::max(1.0, std::abs(avg));
            r.worst_violation = std::max(r.worst_violation, gap);
            if (gap > tol && !violated) {
                violated = true;
                store(r, {"midpoint", static_cast<int>(c), a, b, fm(c), avg, gap});
            }
        }
        if (violated) ++r.midpoint_violations;
    }
    r.verdict = r.midpoint_violations > 0 ? Verdict::refuted : Verdict::inconclusive;
    return r;
}

ConvexityReport check_monotone(const PointModel& f, const Box& domain, int n_probes, double tol,
                               std::uint64_t seed) {
    require_probe_args(f, domain, n_probes);
    auto rng = make_rng(seed, 5);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    ConvexityReport r;
    r.n_probes = n_probes;
    for (int k = 0; k < n_probes; ++k) {
        const Eigen::VectorXd base = sample_point(domain, rng);
        Eigen::VectorXd pert = base;
        for (Eigen::Index i = 0; i < pert.size(); ++i) {
            pert(i) += 0.5 * ud(rng) * (domain.hi(i) - domain.lo(i));
        }
        const Eigen::VectorXd f0 = f.eval(base);
        const Eigen::VectorXd f1 = f.eval(pert);
        bool violated = false;
        for (Eigen::Index c = 0; c < f0.size(); ++c) {
            const double drop = f0(c) - f1(c);
            if (drop > tol && !violated) {
                violated = true;
                store(r, {"monotone", static_cast<int>(c), base, pert, f1(c), f0(c), drop});
            }
        }
        if (violated) ++r.monotonicity_violations;
    }
    r.verdict = r.monotonicity_violations > 0 ? Verdict::refuted : Verdict::inconclusive;
    return r;
}

int grid_midpoint_violations(const Eigen::MatrixXd& values, double tol) {
    if (values.rows() != values.cols() || values.rows() < 3) {
        throw DimensionError("grid_midpoint_violations: square grid of side >= 3 required");
    }
    const int n = static_cast<int>(values.rows());
    int bad = 0;
    const auto check = [&](double a, double mid, double b) {
        const double avg = 0.5 * (a + b);
        if (mid - avg > tol * std::max(1.0, std::abs(avg))) ++bad;
    };
    for (int i = 0; i < n; ++i) {
        for (int a = 0; a < n; ++a) {
            for (int b = a + 2; b < n; b += 2) {
                check(values(i, a), values(i, (a + b) / 2), values(i, b));
                check(values(a, i), values((a + b) / 2, i), values(b, i));
            }
        }
    }
    return bad;
}

Eigen::VectorXd jacobi_eigenvalues(Eigen::MatrixXd a) {
    if (a.rows() != a.cols() || a.rows() == 0) {
        throw DimensionError("jacobi_eigenvalues: square matrix required");
    }
    const Eigen::Index n = a.rows();
    a = 0.5 * (a + a.transpose()).eval();
    const double scale = std::max(1.0, a.norm());
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
        }
        if (std::sqrt(off) <= 1e-14 * scale) break;
        for (Eigen::Index p = 0; p < n; ++p) {
            for (Eigen::Index q = p + 1; q < n; ++q) {
                if (std::abs(a(p, q)) <= 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (Eigen::Index i = 0; i < n; ++i) {
                    const double aip = a(i, p), aiq = a(i, q);
                    a(i, p) = c * aip - s * aiq;
                    a(i, q) = s * aip + c * aiq;
                }
                for (Eigen::Index i = 0; i < n; ++i) {
                    const double api = a(p, i), aqi = a(q, i);
                    a(p, i) = c * api - s * aqi;
                    a(q, i) = s * api + c * aqi;
                }
            }
        }
    }
    Eigen::VectorXd eigs = a.diagonal();
    std::sort(eigs.data(), eigs.data() + n);
    return eigs;
}

double hessian_min_eig(const PointModel& f, const Eigen::VectorXd& point, int coord, double h) {
    if (f.n_in > 8) {
        throw InvalidArgumentError("hessian_min_eig: input dimension above the n <= 8 cap");
    }
    if (point.size() != f.n_in) throw DimensionError("hessian_min_eig: point dimension");
    if (coord < 0 || coord >= f.n_out) {
        throw InvalidArgumentError("hessian_min_eig: output coordinate out of range");
    }
    if (!(h >= 1e-5 && h <= 1e-3)) {
        throw InvalidArgumentError("hessian_min_eig: step must lie in [1e-5, 1e-3]");
    }
    const Eigen::Index n = point.size();
    const auto eval = [&](const Eigen::VectorXd& x) { return f.eval(x)(coord); };
    const double f0 = eval(point);
    Eigen::MatrixXd hess(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::VectorXd xp = point, xm = point;
        xp(i) += h;
        xm(i) -= h;
        hess(i, i) = (eval(xp) - 2.0 * f0 + eval(xm)) / (h * h);
        for (Eigen::Index j = i + 1; j < n; ++j) {
            Eigen::VectorXd xpp = point, xpm = point, xmp = point, xmm = point;
            xpp(i) += h; xpp(j) += h;
            xpm(i) += h; xpm(j) -= h;
            xmp(i) -= h; xmp(j) += h;
            xmm(i) -= h; xmm(j) -= h;
            const double v = (eval(xpp) - eval(xpm) - eval(xmp) + eval(xmm)) / (4.0 * h * h);
            hess(i, j) = v;
            hess(j, i) = v;
        }
    }
    require_finite(hess, "finite-difference Hessian");
    return jacobi_eigenvalues(hess)(0);
}

bool smooth_activations(const ModelParams& m) {
    const auto smooth = [](const Activation& a) { return a.kind != ActivationKind::relu; };
    bool ok = smooth(m.hidden_act) && smooth(m.output_act);
    if (m.arch == Arch::iclstm) ok = ok && smooth(m.dense_act);
    return ok;
}

ConvexityReport check_midpoint(const ModelParams& m, int repeats, const Box& domain, int n_pairs,
                               double tol, std::uint64_t seed) {
    return check_midpoint(make_point_model(m, repeats), domain, n_pairs, tol, seed);
}

namespace {

// The space the monotonicity lemma speaks about: the cell input, which for the
// convex architectures is the expanded vector treated as free.
PointModel monotone_target(const ModelParams& m, int repeats, Box& box) {
    if (m.convex_arch()) {
        box = expand_box(box);
        return make_point_model_expanded(m, repeats);
    }
    return make_point_model(m, repeats);
}

}  // namespace

ConvexityReport check_monotone(const ModelParams& m, int repeats, const Box& domain, int n_probes,
                               double tol, std::uint64_t seed) {
    Box box = domain;
    const PointModel f = monotone_target(m, repeats, box);
    return check_monotone(f, box, n_probes, tol, seed);
}

double hessian_min_eig(const ModelParams& m, int repeats, const Eigen::VectorXd& point, int coord,
                       double h) {
    if (!smooth_activations(m)) {
        throw UnsupportedActivationError(
            "hessian_min_eig: model uses a non-smooth activation; finite-difference "
            "second derivatives need C^2 (use softplus instead of relu)");
    }
    return hessian_min_eig(make_point_model(m, repeats), point, coord, h);
}

bool replay_violates(const PointModel& f, const Counterexample& ce, double tol) {
    if (ce.kind == "midpoint") {
        const double fa = f.eval(ce.x_a)(ce.coord);
        const double fb = f.eval(ce.x_b)(ce.coord);
        const double fm = f.eval(0.5 * (ce.x_a + ce.x_b))(ce.coord);
        const double avg = 0.5 * (fa + fb);
        return (fm - avg) / std::max(1.0, std::abs(avg)) > tol;
    }
    if (ce.kind == "monotone") {
        return f.eval(ce.x_a)(ce.coord) - f.eval(ce.x_b)(ce.coord) > tol;
    }
    throw InvalidArgumentError("replay_violates: unknown counterexample kind '" + ce.kind + "'");
}

bool replay_violates(const ModelParams& m, int repeats, const Counterexample& ce, double tol) {
    if (ce.kind == "monotone") {
        Box ignored{Eigen::VectorXd::Zero(m.n_x), Eigen::VectorXd::Ones(m.n_x)};
        return replay_violates(monotone_target(m, repeats, ignored), ce, tol);
    }
    return replay_violates(make_point_model(m, repeats), ce, tol);
}

PointModel make_pipeline_point_model(const ModelParams& m, const data::Scaler& in_scaler,
                                     const data::Scaler& out_scaler, int n_raw, int repeats) {
    m.validate();
    if (repeats <= 0) throw InvalidArgumentError("point model: repeats must be positive");
    if (n_raw != m.n_x) {
        throw DimensionError("pipeline point model: raw width does not match the model");
    }
    if (in_scaler.dim() != 2 * n_raw) {
        throw DimensionError("pipeline point model: input scaler width must be twice n_raw");
    }
    if (out_scaler.dim() != m.n_o) {
        throw DimensionError("pipeline point model: target scaler width must match the output");
    }
    PointModel pm;
    pm.n_in = n_raw;
    pm.n_out = repeats * m.n_o;
    pm.eval = [model = m, in = in_scaler, out = out_scaler, n_raw,
               repeats](const Eigen::VectorXd& x) {
        if (x.size() != n_raw) throw DimensionError("pipeline point model: bad input width");
        const Eigen::MatrixXd row = x.transpose();
        Eigen::MatrixXd step = in.transform(expand_input(row));
        if (!model.convex_arch()) step = step.leftCols(n_raw).eval();
        const BatchSeq xs(static_cast<std::size_t>(repeats), step);
        const BatchSeq ys = forward_batched(model, xs);
        Eigen::VectorXd flat(static_cast<Eigen::Index>(repeats) * model.n_o);
        for (int t = 0; t < repeats; ++t) {
            const Eigen::VectorXd scaled = ys[static_cast<std::size_t>(t)].row(0).transpose();
            flat.segment(static_cast<Eigen::Index>(t) * model.n_o, model.n_o) =
                out.inverse(scaled);
        }
        return flat;
    };
    return pm;
}

namespace {

struct CertifyTargets {
    PointModel mid;  // midpoint pairs
    Box mid_domain;
    PointModel mono;  // monotonicity probes
    Box mono_domain;
    PointModel hess;  // finite-difference Hessians, when smooth
    Box hess_domain;
    bool smooth = false;
};

void validate_budget(const CertifyConfig& cfg) {
    if (cfg.repeats < 1 || cfg.hessian_points < 0) {
        throw InvalidArgumentError("certify: bad probe budget");
    }
}

ConvexityReport run_certify(const CertifyTargets& t, const CertifyConfig& cfg) {
    ConvexityReport r =
        check_midpoint(t.mid, t.mid_domain, cfg.n_pairs, cfg.midpoint_tol, cfg.seed);
    ConvexityReport mono =
        check_monotone(t.mono, t.mono_domain, cfg.n_probes, cfg.monotone_tol, cfg.seed);
    r.n_probes = mono.n_probes;
    r.monotonicity_violations = mono.monotonicity_violations;
    for (auto& ce : mono.counterexamples) store(r, std::move(ce));

    if (t.smooth && t.hess.n_in <= 8 && cfg.hessian_points > 0) {
        auto rng = make_rng(cfg.seed, 6);
        double min_eig = std::numeric_limits<double>::infinity();
        for (int k = 0; k < cfg.hessian_points; ++k) {
            const Eigen::VectorXd x = sample_point(t.hess_domain, rng);
            for (int c = 0; c < t.hess.n_out; ++c) {
                min_eig = std::min(min_eig, hessian_min_eig(t.hess, x, c, cfg.fd_step));
                min_eig = std::min(min_eig, hessian_min_eig(t.hess, x, c, 0.5 * cfg.fd_step));
            }
        }
        r.hessian_checked = true;
        r.min_hessian_eig = min_eig;
    }

    if (r.midpoint_violations + r.monotonicity_violations > 0) {
        r.verdict = Verdict::refuted;
    } else if (!r.hessian_checked && cfg.n_pairs < 100) {
        r.verdict = Verdict::inconclusive;
    } else if (r.hessian_checked && r.min_hessian_eig < cfg.hessian_floor) {
        r.verdict = Verdict::inconclusive;
    } else {
        r.verdict = Verdict::certified;
    }
    return r;
}

PointModel normalized_domain(const PointModel& f, const Box& box) {
    PointModel pm;
    pm.n_in = f.n_in;
    pm.n_out = f.n_out;
    pm.eval = [f, lo = box.lo, width = (box.hi - box.lo).eval()](const Eigen::VectorXd& z) {
        return f.eval(lo + z.cwiseProduct(width));
    };
    return pm;
}

Box transform_box(const data::Scaler& s, const Box& b) {
    return Box{s.transform(b.lo), s.transform(b.hi)};
}

}  // namespace

ConvexityReport certify(const ModelParams& m, const Box& domain, const CertifyConfig& cfg) {
    m.validate();
    domain.validate();
    if (domain.dim() != m.n_x) {
        throw DimensionError("certify: domain dimension does not match the model input");
    }
    validate_budget(cfg);

    CertifyTargets t;
    t.mid = make_point_model(m, cfg.repeats);
    t.mid_domain = domain;
    Box mono_box = domain;
    t.mono = monotone_target(m, cfg.repeats, mono_box);
    t.mono_domain = mono_box;
    t.hess = t.mid;
    t.hess_domain = domain;
    t.smooth = smooth_activations(m);
    return run_certify(t, cfg);
}

ConvexityReport certify(const ModelParams& m, const data::SequenceDataset& ds,
                        const CertifyConfig& cfg) {
    ds.validate();
    if (ds.n_raw != m.n_x) {
        throw DimensionError("certify: dataset raw width does not match the model input");
    }
    validate_budget(cfg);

    CertifyTargets t;
    t.mid = make_pipeline_point_model(m, ds.input_scaler, ds.target_scaler, ds.n_raw,
                                      cfg.repeats);
    t.mid_domain = ds.box;
    if (m.convex_arch()) {
        t.mono = make_point_model_expanded(m, cfg.repeats);
        t.mono_domain = transform_box(ds.input_scaler, expand_box(ds.box));
    } else {
        t.mono = t.mid;
        t.mono_domain = ds.box;
    }
    t.hess = normalized_domain(t.mid, ds.box);
    t.hess_domain = Box{Eigen::VectorXd::Zero(ds.n_raw), Eigen::VectorXd::Ones(ds.n_raw)};
    t.smooth = smooth_activations(m);
    return run_certify(t, cfg);
}

std::string report_to_json(const ConvexityReport& r) {
    nlohmann::json j;
    j["n_pairs"] = r.n_pairs;
    j["midpoint_violations"] = r.midpoint_violations;
    j["worst_violation"] = r.worst_violation;
    j["n_probes"] = r.n_probes;
    j["monotonicity_violations"] = r.monotonicity_violations;
    j["hessian_checked"] = r.hessian_checked;
    if (r.hessian_checked) {
        j["min_hessian_eig"] = r.min_hessian_eig;
    } else {
        j["min_hessian_eig"] = nullptr;
    }
    j["verdict"] = to_string(r.verdict);
    auto ces = nlohmann::json::array();
    for (const auto& ce : r.counterexamples) {
        nlohmann::json c;
        c["kind"] = ce.kind;
        c["coord"] = ce.coord;
        c["violation"] = ce.violation;
        c["lhs"] = ce.lhs;
        c["rhs"] = ce.rhs;
        c["x_a"] = std::vector<double>(ce.x_a.data(), ce.x_a.data() + ce.x_a.size());
        c["x_b"] = std::vector<double>(ce.x_b.data(), ce.x_b.data() + ce.x_b.size());
        ces.push_back(std::move(c));
    }
    j["counterexamples"] = std::move(ces);
    return j.dump(2) + "\n";
}

void export_report_json(const ConvexityReport& r, const std::string& path) {
    write_text_file(path, report_to_json(r));
}

void export_counterexamples_csv(const ConvexityReport& r, const std::string& path) {
    Eigen::Index dim = 0;
    for (const auto& ce : r.counterexamples) dim = std::max(dim, ce.x_a.size());
    std::vector<std::string> header{"kind", "coord", "violation", "lhs", "rhs"};
    for (Eigen::Index i = 0; i < dim; ++i) header.push_back("x_a_" + std::to_string(i));
    for (Eigen::Index i = 0; i < dim; ++i) header.push_back("x_b_" + std::to_string(i));

    std::ostringstream os;
    for (std::size_t k = 0; k < header.size(); ++k) os << (k ? "," : "") << header[k];
    os << "\n";
    for (const auto& ce : r.counterexamples) {
        os << ce.kind << "," << ce.coord << "," << format_double(ce.violation) << ","
           << format_double(ce.lhs) << "," << format_double(ce.rhs);
        for (Eigen::Index i = 0; i < dim; ++i) {
            os << "," << (i < ce.x_a.size() ? format_double(ce.x_a(i)) : "");
        }
        for (Eigen::Index i = 0; i < dim; ++i) {
            os << "," << (i < ce.x_b.size() ? format_double(ce.x_b(i)) : "");
        }
        os << "\n";
    }
    write_text_file(path, os.str());
}

}  // namespace iclstm::convexity
