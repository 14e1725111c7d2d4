#pragma once

#include <functional>

#include "iclstm/common.hpp"

namespace iclstm::plants {

// Nonisothermal CSTR with a second-order exothermic reaction. Units: hours,
// kmol, m^3, K, kJ. Defaults are the benchmark values.
struct CstrSpec {
    double F = 5.0;        // volumetric flow rate, m^3/hr
    double V_L = 1.0;      // reacting liquid volume, m^3
    double R = 8.314;      // gas constant, kJ/kmol K
    double T0 = 300.0;     // inlet temperature, K
    double Cp = 0.231;     // heat capacity, kJ/kg K
    double rho_L = 1000.0; // liquid density, kg/m^3
    double E = 5.0e4;      // activation energy, kJ/kmol
    double k0 = 8.46e6;    // pre-exponential constant, m^3/kmol hr
    double dH = -1.15e4;   // reaction enthalpy, kJ/kmol (exothermic)
    double CA0s = 4.0;     // steady-state inlet concentration, kmol/m^3
    double CAs = 1.95;     // equilibrium concentration, kmol/m^3
    double Ts = 402.0;     // equilibrium temperature, K
    double Qs = 0.0;       // steady-state heat input, kJ/hr

    void validate() const;
};

// Solar PV + DC/DC converter + battery. Units: SI (seconds, volts, amperes).
struct SolarSpec {
    double C = 0.004;       // converter capacitance, F
    double L = 0.005;       // converter inductance, H
    double Cb = 1.8e5;      // battery capacitance, F
    double Eb = 12.0;       // battery voltage source, V
    double Rb = 0.018;      // battery resistance, ohm
    double np = 1.0;        // PV cells in parallel
    double ns = 144.0;      // PV cells in series
    double q = 1.6e-19;     // electron charge, C
    double Rs = 0.05;       // series resistance, ohm
    double A = 1.3;         // diode ideality factor
    double K = 1.38025e-23; // Boltzmann constant, J/K
    double Ki = 4.5e-4;     // short-circuit current temperature coefficient, A/K
    double Tr = 298.15;     // reference temperature, K
    double Gr = 1000.0;     // reference irradiance, W/m^2
    double Voc = 49.75;     // open-circuit voltage, V
    double Isc = 13.93;     // short-circuit current, A
    double Eg = 1.1;        // band gap, eV

    void validate() const;
};

// Deviation state [C_A - CAs, T - Ts]; input [delta C_A0, delta Q].
// Throws InvalidArgumentError when the absolute temperature is non-positive
// or the concentration has gone negative (inadmissible simulation).
Eigen::Vector2d cstr_rhs(const CstrSpec& spec, const Eigen::Vector2d& x, const Eigen::Vector2d& u);

using RhsFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

// Explicit forward Euler with the input held constant by the caller (capture
// it in rhs). Returns the (n_steps+1) x dim trajectory including x0.
Eigen::MatrixXd integrate(const RhsFn& rhs, const Eigen::VectorXd& x0, double h, int n_steps);

// Output current of the PV array: solves the implicit diode equation
//   i = np*Iph - np*Is*(exp(q(v_pv + i*Rs)/(ns*A*K*T)) - 1)
// by safeguarded Newton (bisection fallback) to |residual| < 1e-10 A.
double solar_pv_current(const SolarSpec& spec, double G, double T, double v_pv);

// Residual of the implicit diode equation at a trial current i (amperes);
// zero exactly when i solves the equation solar_pv_current drives to zero.
double solar_pv_residual(const SolarSpec& spec, double G, double T, double v_pv, double i);

// d i_pv / d v_pv at the solved operating point (implicit-function slope).
double solar_pv_current_slope(const SolarSpec& spec, double G, double T, double v_pv);

// v_b = Eb + v_c + (i_s - i_L) Rb
double battery_voltage(const SolarSpec& spec, const Eigen::Vector3d& x, double i_L);
bool battery_voltage_in_range(double v_b);  // [11.7, 14.7] V operating band

// State x = [v_pv, i_s, v_c], exogenous xi = [G, T_cell(K), i_L], duty u in [0,1].
Eigen::Vector3d solar_rhs(const SolarSpec& spec, const Eigen::Vector3d& x, double u,
                          const Eigen::Vector3d& xi);

// Backward-Euler integration of the solar dynamics (the converter time
// constants are far below any usable explicit step at the 60 s sampling
// scale). Newton inner loop with the analytic 3x3 Jacobian. Returns the
// (n_steps+1) x 3 trajectory including x0.
Eigen::MatrixXd solar_integrate(const SolarSpec& spec, const Eigen::Vector3d& x0, double u,
                                const Eigen::Vector3d& xi, double h, int n_steps);

// Quadratic Lyapunov machinery for the CSTR: V(x) = x'Px, region V <= rho.
struct StabilityRegion {
    Eigen::Matrix2d P;
    double rho = 372.0;

    StabilityRegion();  // benchmark P = [[1060, 22], [22, 0.52]]; asserts P > 0
    double lyapunov(const Eigen::Vector2d& x) const;
    bool contains(const Eigen::Vector2d& x) const;
    // Max |x_j| over the ellipse boundary: sqrt(rho * (P^-1)_jj).
    Eigen::Vector2d axis_extents() const;
};

}  // namespace iclstm::plants
