#include "iclstm/plants.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace iclstm::plants {

void CstrSpec::validate() const {
    if (!(F > 0) || !(V_L > 0) || !(R > 0) || !(Cp > 0) || !(rho_L > 0) || !(k0 > 0) ||
        !(E > 0) || !(Ts > 0) || !(T0 > 0) || !(CAs >= 0) || !(CA0s >= 0)) {
        throw InvalidArgumentError("CstrSpec: non-physical parameter");
    }
}

void SolarSpec::validate() const {
    if (!(C > 0) || !(L > 0) || !(Cb > 0) || !(Rb >= 0) || !(np > 0) || !(ns > 0) ||
        !(q > 0) || !(Rs >= 0) || !(A > 0) || !(K > 0) || !(Tr > 0) || !(Gr > 0) ||
        !(Voc > 0) || !(Isc > 0) || !(Eg > 0)) {
        throw InvalidArgumentError("SolarSpec: non-physical parameter");
    }
}

Eigen::Vector2d cstr_rhs(const CstrSpec& spec, const Eigen::Vector2d& x, const Eigen::Vector2d& u) {
    if (!x.allFinite() || !u.allFinite()) {
        throw InvalidArgumentError("cstr_rhs: non-finite state or input");
    }
    const double C_A = spec.CAs + x(0);
    const double T = spec.Ts + x(1);
    if (T <= 0.0) {
        throw InvalidArgumentError("cstr_rhs: non-positive absolute temperature T=" +
                                   std::to_string(T));
    }
    if (C_A < 0.0) {
        throw InvalidArgumentError("cstr_rhs: negative concentration C_A=" + std::to_string(C_A));
    }
    const double rate = spec.k0 * std::exp(-spec.E / (spec.R * T)) * C_A * C_A;
    const double dilution = spec.F / spec.V_L;
    Eigen::Vector2d dx;
    dx(0) = dilution * (spec.CA0s + u(0) - C_A) - rate;
    dx(1) = dilution * (spec.T0 - T) + (-spec.dH) / (spec.rho_L * spec.Cp) * rate +
            (spec.Qs + u(1)) / (spec.rho_L * spec.Cp * spec.V_L);
    return dx;
}

Eigen::MatrixXd integrate(const RhsFn& rhs, const Eigen::VectorXd& x0, double h, int n_steps) {
    if (!(h > 0)) throw InvalidArgumentError("integrate: step size must be positive");
    if (n_steps < 0) throw InvalidArgumentError("integrate: negative step count");
    require_finite(x0, "integrate: x0");
    Eigen::MatrixXd traj(n_steps + 1, x0.size());
    traj.row(0) = x0.transpose();
    Eigen::VectorXd x = x0;
    for (int k = 0; k < n_steps; ++k) {
        x += h * rhs(x);
        if (!x.allFinite()) {
            throw NumericError("integrate: state blow-up at step " + std::to_string(k + 1));
        }
        traj.row(k + 1) = x.transpose();
    }
    return traj;
}

namespace {

struct DiodeParams {
    double Iph;    // photocurrent, A
    double Is;     // saturation current, A
    double inv_Vt; // q / (ns A K T), 1/V
};

DiodeParams diode_params(const SolarSpec& s, double G, double T) {
    if (!(T > 0) || G < 0 || !std::isfinite(G) || !std::isfinite(T)) {
        throw InvalidArgumentError("solar: irradiance must be >= 0 and temperature > 0 K");
    }
    DiodeParams p;
    p.Iph = (s.Isc + s.Ki * (T - s.Tr)) * G / s.Gr;
    p.inv_Vt = s.q / (s.ns * s.A * s.K * T);
    const double Irs = s.Isc / std::expm1(s.q * s.Voc / (s.ns * s.K * s.A * T));
    const double ratio = T / s.Tr;
    p.Is = Irs * ratio * ratio * ratio *
           std::exp(s.q * s.Eg / (s.A * s.K) * (1.0 / s.Tr - 1.0 / T));
    return p;
}

// Residual of the implicit diode equation; strictly increasing in i.
double diode_residual(const SolarSpec& s, const DiodeParams& p, double v, double i) {
    const double arg = (v + i * s.Rs) * p.inv_Vt;
    if (arg > 690.0) return std::numeric_limits<double>::max();
    return i - s.np * p.Iph + s.np * p.Is * std::expm1(arg);
}

double solve_diode(const SolarSpec& s, const DiodeParams& p, double v) {
    double lo = std::min(0.0, -v / std::max(s.Rs, 1e-12)) - std::max(1.0, s.np * p.Iph);
    double hi = s.np * p.Iph + 1.0;
    double step = 1.0;
    int guard = 0;
    while (diode_residual(s, p, v, hi) <= 0.0) {
        step *= 2.0;
        hi += step;
        if (++guard > 60) throw NumericError("solar_pv_current: bracketing failed");
    }
    if (diode_residual(s, p, v, lo) >= 0.0) {
        throw NumericError("solar_pv_current: bracketing failed");
    }

    double i = std::clamp(s.np * p.Iph, lo, hi);
    double r = diode_residual(s, p, v, i);
    for (int it = 0; it < 300 && std::abs(r) > 1e-12; ++it) {
        if (r > 0) hi = i; else lo = i;
        const double arg = (v + i * s.Rs) * p.inv_Vt;
        double next;
        if (arg <= 690.0) {
            const double dr = 1.0 + s.np * p.Is * std::exp(arg) * p.inv_Vt * s.Rs;
            next = i - r / dr;
        } else {
            next = 0.5 * (lo + hi);
        }
        if (!(next > lo) || !(next < hi)) next = 0.5 * (lo + hi);
        i = next;
        r = diode_residual(s, p, v, i);
    }
    if (std::abs(r) > 1e-10) {
        throw NumericError("solar_pv_current: residual " + std::to_string(std::abs(r)) +
                           " A exceeds 1e-10 tolerance");
    }
    return i;
}

}  // namespace

double solar_pv_current(const SolarSpec& spec, double G, double T, double v_pv) {
    if (!std::isfinite(v_pv)) throw InvalidArgumentError("solar_pv_current: non-finite voltage");
    const DiodeParams p = diode_params(spec, G, T);
    return solve_diode(spec, p, v_pv);
}

double solar_pv_residual(const SolarSpec& spec, double G, double T, double v_pv, double i) {
    if (!std::isfinite(v_pv) || !std::isfinite(i))
        throw InvalidArgumentError("solar_pv_residual: non-finite argument");
    return diode_residual(spec, diode_params(spec, G, T), v_pv, i);
}

double solar_pv_current_slope(const SolarSpec& spec, double G, double T, double v_pv) {
    const DiodeParams p = diode_params(spec, G, T);
    const double i = solve_diode(spec, p, v_pv);
    const double e = std::exp((v_pv + i * spec.Rs) * p.inv_Vt);
    const double dF_di = 1.0 + spec.np * p.Is * e * p.inv_Vt * spec.Rs;
    const double dF_dv = spec.np * p.Is * e * p.inv_Vt;
    return -dF_dv / dF_di;
}

double battery_voltage(const SolarSpec& spec, const Eigen::Vector3d& x, double i_L) {
    return spec.Eb + x(2) + (x(1) - i_L) * spec.Rb;
}

bool battery_voltage_in_range(double v_b) { return v_b >= 11.7 && v_b <= 14.7; }

Eigen::Vector3d solar_rhs(const SolarSpec& spec, const Eigen::Vector3d& x, double u,
                          const Eigen::Vector3d& xi) {
    if (!x.allFinite() || !xi.allFinite() || !std::isfinite(u)) {
        throw InvalidArgumentError("solar_rhs: non-finite state, input, or disturbance");
    }
    if (u < 0.0 || u > 1.0) {
        throw InvalidArgumentError("solar_rhs: duty cycle outside [0, 1]");
    }
    const double i_pv = solar_pv_current(spec, xi(0), xi(1), x(0));
    const double v_b = battery_voltage(spec, x, xi(2));
    Eigen::Vector3d dx;
    dx(0) = (i_pv - x(1) * u) / spec.C;
    dx(1) = (-v_b + x(0) * u) / spec.L;
    dx(2) = (x(1) - xi(2)) / spec.Cb;
    return dx;
}

Eigen::MatrixXd solar_integrate(const SolarSpec& spec, const Eigen::Vector3d& x0, double u,
                                const Eigen::Vector3d& xi, double h, int n_steps) {
    if (!(h > 0)) throw InvalidArgumentError("solar_integrate: step size must be positive");
    if (n_steps < 0) throw InvalidArgumentError("solar_integrate: negative step count");
    Eigen::MatrixXd traj(n_steps + 1, 3);
    traj.row(0) = x0.transpose();
    Eigen::Vector3d x = x0;
    for (int k = 0; k < n_steps; ++k) {
        // Solve x1 - x - h f(x1) = 0 by Newton with the analytic Jacobian.
        Eigen::Vector3d x1 = x;
        bool converged = false;
        for (int it = 0; it < 50; ++it) {
            const Eigen::Vector3d g = x1 - x - h * solar_rhs(spec, x1, u, xi);
            if (g.lpNorm<Eigen::Infinity>() < 1e-12 * (1.0 + x1.lpNorm<Eigen::Infinity>())) {
                converged = true;
                break;
            }
            Eigen::Matrix3d Jf;
            Jf << solar_pv_current_slope(spec, xi(0), xi(1), x1(0)) / spec.C, -u / spec.C, 0.0,
                  u / spec.L, -spec.Rb / spec.L, -1.0 / spec.L,
                  0.0, 1.0 / spec.Cb, 0.0;
            const Eigen::Matrix3d Jg = Eigen::Matrix3d::Identity() - h * Jf;
            x1 -= Jg.partialPivLu().solve(g);
            if (!x1.allFinite()) break;
        }
        if (!converged) {
            throw NumericError("solar_integrate: Newton failed at step " + std::to_string(k + 1));
        }
        x = x1;
        traj.row(k + 1) = x.transpose();
    }
    return traj;
}

StabilityRegion::StabilityRegion() {
    P << 1060.0, 22.0, 22.0, 0.52;
    if (P(0, 1) != P(1, 0) || P(0, 0) <= 0.0 || P.determinant() <= 0.0) {
        throw NumericError("StabilityRegion: P must be symmetric positive definite");
    }
}

double StabilityRegion::lyapunov(const Eigen::Vector2d& x) const { return x.dot(P * x); }

bool StabilityRegion::contains(const Eigen::Vector2d& x) const { return lyapunov(x) <= rho; }

Eigen::Vector2d StabilityRegion::axis_extents() const {
    const Eigen::Matrix2d Pinv = P.inverse();
    return Eigen::Vector2d(std::sqrt(rho * Pinv(0, 0)), std::sqrt(rho * Pinv(1, 1)));
}

}  // namespace iclstm::plants
