#pragma once

// Master-equation model of the trigger process: a Lambda atom (ground states
// u and g, excited state e) driven on u<->e by the trigger laser and coupled on
// e<->g to one lossy cavity mode. Vacuum-stimulated Raman transfer u -> g puts
// one photon into the cavity, which then leaks out at rate 2*kappa.
//
// Basis (index: state):  0: |u,0>   1: |e,0>   2: |g,1>   3: |g,0>
// Rates are angular frequencies in rad/ns, times in ns.

#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sps/error.hpp"

namespace sps::qed {

using Complex = std::complex<double>;
using Matrix = Eigen::Matrix4cd;

enum Level : int { kU0 = 0, kE0 = 1, kG1 = 2, kG0 = 3 };

/// 2*pi * f for f in MHz, expressed in rad/ns.
constexpr double two_pi_mhz(double f_mhz) { return 2.0 * std::numbers::pi * f_mhz * 1e-3; }

struct QedParams {
  double g = two_pi_mhz(5.0);
  double kappa = two_pi_mhz(5.0);
  double gamma = two_pi_mhz(3.0);
  double delta_trigger = 0.0;  // trigger laser vs Stark-shifted u->e line
  double delta_cavity = 0.0;   // cavity vs Stark-shifted g->e line
  double stark_shift = two_pi_mhz(70.0);  // informational
  double branch_u = 0.5;       // fraction of e decays that land back in u
  double coupling_scale = 1.0;

  void validate() const {
    if (!(g >= 0)) throw ConfigError("g must be non-negative");
    if (!(kappa > 0 && gamma > 0)) throw ConfigError("kappa and gamma must be positive");
    if (!(branch_u >= 0 && branch_u <= 1)) throw ConfigError("branch_u must lie in [0, 1]");
    if (!(coupling_scale > 0 && coupling_scale <= 1))
      throw ConfigError("coupling_scale must lie in (0, 1]");
  }
};

enum class PulseProfile { sin2, constant };

struct PulseShape {
  double omega_max = two_pi_mhz(10.0);
  double duration_ns = 4000.0;
  PulseProfile profile = PulseProfile::sin2;

  double rabi(double t) const {
    if (t < 0 || t > duration_ns) return 0.0;
    if (profile == PulseProfile::constant) return omega_max;
    const double s = std::sin(std::numbers::pi * t / duration_ns);
    return omega_max * s * s;
  }
};

/// 4x4 density matrix with the checks the integrator relies on.
class DensityState {
 public:
  DensityState() : rho_(Matrix::Zero()) {}
  explicit DensityState(const Matrix& rho) : rho_(rho) {}

  static DensityState pure(Level level) {
    DensityState s;
    s.rho_(level, level) = 1.0;
    return s;
  }

  const Matrix& matrix() const { return rho_; }
  double population(Level level) const { return rho_(level, level).real(); }
  double trace() const { return rho_.trace().real(); }
  std::array<double, 4> diagonal() const {
    return {rho_(0, 0).real(), rho_(1, 1).real(), rho_(2, 2).real(), rho_(3, 3).real()};
  }

  double hermiticity_error() const { return (rho_ - rho_.adjoint()).cwiseAbs().maxCoeff(); }

  bool is_valid(double herm_tol = 1e-10, double trace_tol = 1e-9, double pos_tol = 1e-12) const {
    if (!rho_.allFinite()) return false;
    if (hermiticity_error() > herm_tol) return false;
    if (std::abs(trace() - 1.0) > trace_tol) return false;
    for (double p : diagonal())
      if (p < -pos_tol) return false;
    return true;
  }

 private:
  Matrix rho_;
};

/// Collapse operator sqrt(rate) |to><from|.
struct Jump {
  Level to;
  Level from;
  double rate;
};

/// Time-dependent Lindblad generator for one trigger pulse.
class MasterEquation {
 public:
  MasterEquation(const QedParams& params, const PulseShape& pulse)
      : params_(params), pulse_(pulse) {
    params_.validate();
    static_ = Matrix::Zero();
    static_(kE0, kE0) = -params_.delta_trigger;
    static_(kG1, kG1) = -(params_.delta_trigger - params_.delta_cavity);
    const double gc = params_.coupling_scale * params_.g;
    static_(kE0, kG1) = gc;
    static_(kG1, kE0) = gc;
    jumps_ = {{
        {kG0, kG1, 2.0 * params_.kappa},
        {kU0, kE0, 2.0 * params_.gamma * params_.branch_u},
        {kG0, kE0, 2.0 * params_.gamma * (1.0 - params_.branch_u)},
    }};
  }

  const QedParams& params() const { return params_; }
  const PulseShape& pulse() const { return pulse_; }
  const std::array<Jump, 3>& jumps() const { return jumps_; }

  Matrix hamiltonian(double t) const {
    Matrix h = static_;
    const double half_rabi = 0.5 * pulse_.rabi(t);
    h(kU0, kE0) = half_rabi;
    h(kE0, kU0) = half_rabi;
    return h;
  }

  /// d rho / dt
  Matrix derivative(double t, const Matrix& rho) const {
    const Matrix h = hamiltonian(t);
    Matrix d = Complex(0.0, -1.0) * (h * rho - rho * h);
    for (const Jump& j : jumps_) {
      if (j.rate == 0.0) continue;
      d(j.to, j.to) += j.rate * rho(j.from, j.from);
      d.row(j.from) -= 0.5 * j.rate * rho.row(j.from);
      d.col(j.from) -= 0.5 * j.rate * rho.col(j.from);
    }
    return d;
  }

  /// Photon flux out of the cavity, per ns.
  double cavity_flux(const Matrix& rho) const { return 2.0 * params_.kappa * rho(kG1, kG1).real(); }

  /// Spontaneous-emission flux ending in |g,0>, per ns.
  double free_space_flux(const Matrix& rho) const {
    return 2.0 * params_.gamma * (1.0 - params_.branch_u) * rho(kE0, kE0).real();
  }

 private:
  QedParams params_;
  PulseShape pulse_;
  Matrix static_;
  std::array<Jump, 3> jumps_{};
};

inline MasterEquation build_model(const QedParams& params, const PulseShape& pulse) {
  return MasterEquation(params, pulse);
}

/// Sampled integration record. Cumulative emissions are integrated alongside
/// the density matrix by the same Runge-Kutta stages.
struct Trajectory {
  std::vector<double> t_ns;
  std::vector<std::array<double, 4>> populations;
  std::vector<double> flux_per_ns;
  std::vector<double> cumulative_cavity;
  std::vector<double> cumulative_free_g0;
  DensityState final_state;

  std::size_t size() const { return t_ns.size(); }
};

inline constexpr double kTraceFailure = 1e-6;

/// Fixed-step classical RK4 from rho0 over [0, total_ns].
inline Trajectory propagate(const MasterEquation& model, const DensityState& rho0, double dt_ns,
                            double total_ns) {
  if (!(dt_ns > 0) || !(total_ns >= 0)) throw Error("dt must be positive and T non-negative");
  const double steps_f = total_ns / dt_ns;
  const auto steps = static_cast<long>(std::llround(steps_f));
  if (std::abs(steps_f - static_cast<double>(steps)) > 1e-9 * std::max(1.0, steps_f))
    throw Error("dt must divide T");

  struct Stage {
    Matrix rho;
    double cav;
    double free;
  };
  auto rhs = [&](double t, const Matrix& rho) {
    return Stage{model.derivative(t, rho), model.cavity_flux(rho), model.free_space_flux(rho)};
  };

  Trajectory tr;
  tr.t_ns.reserve(static_cast<std::size_t>(steps) + 1);
  Matrix rho = rho0.matrix();
  double cav = 0.0;
  double free = 0.0;
  const double trace0 = rho.trace().real();

  auto record = [&](double t) {
    tr.t_ns.push_back(t);
    tr.populations.push_back(
        {rho(0, 0).real(), rho(1, 1).real(), rho(2, 2).real(), rho(3, 3).real()});
    tr.flux_per_ns.push_back(model.cavity_flux(rho));
    tr.cumulative_cavity.push_back(cav);
    tr.cumulative_free_g0.push_back(free);
  };
  record(0.0);

  for (long n = 0; n < steps; ++n) {
    const double t = static_cast<double>(n) * dt_ns;
    const double h = dt_ns;
    const Stage k1 = rhs(t, rho);
    const Stage k2 = rhs(t + 0.5 * h, rho + 0.5 * h * k1.rho);
    const Stage k3 = rhs(t + 0.5 * h, rho + 0.5 * h * k2.rho);
    const Stage k4 = rhs(t + h, rho + h * k3.rho);
    rho += (h / 6.0) * (k1.rho + 2.0 * k2.rho + 2.0 * k3.rho + k4.rho);
    cav += (h / 6.0) * (k1.cav + 2.0 * k2.cav + 2.0 * k3.cav + k4.cav);
    free += (h / 6.0) * (k1.free + 2.0 * k2.free + 2.0 * k3.free + k4.free);
    // Hermitian part only; the antihermitian residue is pure round-off.
    rho = 0.5 * (rho + rho.adjoint()).eval();

    const double drift = std::abs(rho.trace().real() - trace0);
    if (!rho.allFinite() || drift > kTraceFailure)
      throw IntegrationError("trace drift " + std::to_string(drift) + " at t=" +
                             std::to_string(t + h) + " ns; reduce dt");
    for (int i = 0; i < 4; ++i)
      if (rho(i, i).real() < -kTraceFailure)
        throw IntegrationError("negative population at t=" + std::to_string(t + h) +
                               " ns; reduce dt");
    record(static_cast<double>(n + 1) * dt_ns);
  }
  tr.final_state = DensityState(rho);
  return tr;
}

/// Probability that the trigger pulse put a photon out of the cavity:
/// 2*kappa * integral of the |g,1> population.
inline double emission_probability(const Trajectory& tr) {
  return tr.cumulative_cavity.empty() ? 0.0 : tr.cumulative_cavity.back();
}

/// Same integral by the trapezoid rule over the sampled flux.
inline double trapezoid_emission(const Trajectory& tr) {
  double sum = 0.0;
  for (std::size_t i = 1; i < tr.size(); ++i)
    sum += 0.5 * (tr.flux_per_ns[i] + tr.flux_per_ns[i - 1]) * (tr.t_ns[i] - tr.t_ns[i - 1]);
  return sum;
}

struct EmissionRun {
  double dt_ns = 1.0;
  double total_ns = 0.0;  // 0: pulse duration
};

/// Emission probability for one trigger pulse starting in |u,0>.
inline double emission_for(const QedParams& params, const PulseShape& pulse,
                           const EmissionRun& run = {}) {
  const double total = run.total_ns > 0 ? run.total_ns : pulse.duration_ns;
  return emission_probability(
      propagate(build_model(params, pulse), DensityState::pure(kU0), run.dt_ns, total));
}

inline constexpr double kFitTolerance = 1e-3;

/// Bisects the coupling reduction factor until the emission probability is
/// within 1e-3 of `target`.
inline double fit_coupling_scale(QedParams params, const PulseShape& pulse, double target,
                                 const EmissionRun& run = {}) {
  auto at = [&](double scale) {
    params.coupling_scale = scale;
    return emission_for(params, pulse, run);
  };
  const double top = at(1.0);
  if (std::abs(top - target) < kFitTolerance) return 1.0;
  if (!(target > 0) || target > top)
    throw DomainError("target emission " + std::to_string(target) + " outside (0, " +
                      std::to_string(top) + "]");
  double lo = 0.0;
  double hi = 1.0;
  for (int iter = 0; iter < 60; ++iter) {
    const double mid = 0.5 * (lo + hi);
    const double p = at(mid);
    if (std::abs(p - target) < kFitTolerance) return mid;
    (p < target ? lo : hi) = mid;
  }
  throw DomainError("coupling-scale bisection did not converge");
}

inline void write_trajectory_csv(const Trajectory& tr, std::ostream& out) {
  out.precision(12);
  out << "t_ns,rho_uu,rho_ee,rho_g1,rho_g0,flux_per_ns\n";
  for (std::size_t i = 0; i < tr.size(); ++i) {
    const auto& p = tr.populations[i];
    out << tr.t_ns[i] << ',' << p[0] << ',' << p[1] << ',' << p[2] << ',' << p[3] << ','
        << tr.flux_per_ns[i] << '\n';
  }
}

}  // namespace sps::qed
