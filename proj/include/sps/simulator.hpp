#pragma once

// Seeded Monte Carlo of complete experimental runs: trapped atoms leave one by
// one, each present atom may emit a photon per trigger pulse, recycle pulses
// scatter monitor light, and stray light / dark counts add a flat background.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "sps/clickstream.hpp"
#include "sps/error.hpp"

namespace sps {

enum class LifetimeShape { exponential, gamma };

enum class InitialAtomsKind { one_plus_poisson, fixed };

struct InitialAtoms {
  InitialAtomsKind kind = InitialAtomsKind::one_plus_poisson;
  double poisson_mean = 1.5;
  int count = 1;  // fixed kind; 0 is allowed as a no-atom override
};

/// Arrival-time distribution of photons inside the trigger window, tabulated
/// as a cumulative distribution over 1 ns cells.
class EmissionProfile {
 public:
  EmissionProfile() = default;

  /// Builds the profile from a sampled emission flux (e.g. a qed trajectory).
  static EmissionProfile from_flux(std::span<const double> t_ns, std::span<const double> flux,
                                   TimeNs window_ns) {
    if (t_ns.size() != flux.size() || t_ns.size() < 2) throw Error("emission flux needs >= 2 samples");
    EmissionProfile p;
    p.cdf_.assign(window_ns, 0.0);
    double acc = 0.0;
    std::size_t k = 0;
    for (TimeNs cell = 0; cell < window_ns; ++cell) {
      const double mid = static_cast<double>(cell) + 0.5;
      while (k + 2 < t_ns.size() && t_ns[k + 1] < mid) ++k;
      const double span = t_ns[k + 1] - t_ns[k];
      const double w = span > 0 ? std::clamp((mid - t_ns[k]) / span, 0.0, 1.0) : 0.0;
      acc += std::max(0.0, (1 - w) * flux[k] + w * flux[k + 1]);
      p.cdf_[cell] = acc;
    }
    if (!(acc > 0)) throw Error("emission flux integrates to zero");
    for (double& c : p.cdf_) c /= acc;
    return p;
  }

  bool empty() const { return cdf_.empty(); }
  TimeNs window() const { return cdf_.size(); }

  template <class Rng>
  TimeNs sample(Rng& rng) const {
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    return static_cast<TimeNs>(std::min<std::ptrdiff_t>(it - cdf_.begin(),
                                                         static_cast<std::ptrdiff_t>(cdf_.size()) - 1));
  }

 private:
  std::vector<double> cdf_;
};

struct SimConfig {
  double p_gen = 0.09;
  double t_cavity = 0.50;
  double t_prop = 0.48;
  double eta_det = 0.44;
  double background_rate_hz = 84.0;       // both detectors together
  double recycle_det_rate_per_ms = 4.0;   // per atom, while a recycle pulse is on
  double trap_mean_life_s = 10.3;
  LifetimeShape lifetime_shape = LifetimeShape::exponential;
  double gamma_k = 4.0;
  InitialAtoms initial_atoms;
  double run_duration_s = 60.0;
  double p_two_photon = 0.0;
  TimeNs dead_time_ns = 0;
  bool atoms_pinned = false;          // atoms never leave
  std::vector<double> departures_s;   // when non-empty: one atom per entry, forced departure
  std::optional<EmissionProfile> emission_profile;  // uniform in the trigger window if unset

  /// Probability that an emitted photon produces a click.
  double detection_probability() const { return t_cavity * t_prop * eta_det; }

  void validate() const {
    for (double p : {p_gen, t_cavity, t_prop, eta_det, p_two_photon})
      if (!(p >= 0 && p <= 1)) throw ConfigError("probabilities must lie in [0, 1]");
    if (!(background_rate_hz >= 0 && recycle_det_rate_per_ms >= 0))
      throw ConfigError("rates must be non-negative");
    if (!(trap_mean_life_s > 0)) throw ConfigError("trap_mean_life must be positive");
    if (!(gamma_k > 0)) throw ConfigError("gamma shape must be positive");
    if (!(run_duration_s >= 0)) throw ConfigError("run_duration must be non-negative");
    if (initial_atoms.kind == InitialAtomsKind::one_plus_poisson && !(initial_atoms.poisson_mean >= 0))
      throw ConfigError("initial atom Poisson mean must be non-negative");
    if (initial_atoms.kind == InitialAtomsKind::fixed && initial_atoms.count < 0)
      throw ConfigError("initial atom count must be non-negative");
    for (double d : departures_s)
      if (!(d >= 0)) throw ConfigError("forced departures must be non-negative");
  }
};

enum class ClickSource : std::uint8_t { signal, recycle, background };

struct RunTruth {
  std::vector<double> departures_s;  // sorted; +inf for atoms that never leave
  TimeNs duration = 0;
  BinIndex n_triggers = 0;
  std::vector<BinIndex> emission_triggers;  // sorted trigger indices with >= 1 emitted photon
  std::vector<ClickSource> sources;         // parallel to the simulated stream's clicks
  std::size_t n_signal = 0;
  std::size_t n_recycle = 0;
  std::size_t n_background = 0;

  int initial_atoms() const { return static_cast<int>(departures_s.size()); }

  /// Atoms present at time t (ns).
  int atoms_at(TimeNs t) const {
    const double ts = static_cast<double>(t) * 1e-9;
    return static_cast<int>(departures_s.end() -
                            std::upper_bound(departures_s.begin(), departures_s.end(), ts));
  }

  /// Run lengths of the per-trigger emission flags, alternating and starting
  /// with a (possibly empty) run of non-emitting triggers.
  std::vector<std::int64_t> emission_flags_rle() const {
    std::vector<std::int64_t> rle{0};
    bool value = false;
    BinIndex cursor = 0;
    auto extend = [&](bool v, std::int64_t n) {
      if (n <= 0) return;
      if (v != value) {
        rle.push_back(0);
        value = v;
      }
      rle.back() += n;
    };
    for (BinIndex j : emission_triggers) {
      extend(false, j - cursor);
      extend(true, 1);
      cursor = j + 1;
    }
    extend(false, n_triggers - cursor);
    return rle;
  }
};

namespace detail {

inline std::mt19937_64 stream_engine(std::uint64_t seed, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream};
  return std::mt19937_64(seq);
}

inline TimeNs seconds_to_ns(double s, TimeNs cap) {
  if (!(s * 1e9 < static_cast<double>(cap))) return cap;
  return static_cast<TimeNs>(s * 1e9);
}

}  // namespace detail

template <class Rng>
std::vector<double> draw_lifetimes(const SimConfig& config, std::size_t n, Rng& rng) {
  std::vector<double> out;
  out.reserve(n);
  if (config.lifetime_shape == LifetimeShape::exponential) {
    std::exponential_distribution<double> d(1.0 / config.trap_mean_life_s);
    for (std::size_t i = 0; i < n; ++i) out.push_back(d(rng));
  } else {
    std::gamma_distribution<double> d(config.gamma_k, config.trap_mean_life_s / config.gamma_k);
    for (std::size_t i = 0; i < n; ++i) out.push_back(d(rng));
  }
  return out;
}

/// i.i.d. trap lifetimes (seconds) with mean trap_mean_life_s.
inline std::vector<double> sample_lifetimes(const SimConfig& config, std::size_t n,
                                            std::uint64_t seed) {
  if (n < 1) throw Error("need at least one lifetime");
  auto rng = detail::stream_engine(seed, 1);
  return draw_lifetimes(config, n, rng);
}

/// Total time during which exactly one atom is trapped.
inline double single_atom_availability(const RunTruth& truth) {
  const auto& d = truth.departures_s;
  if (d.empty()) return 0.0;
  if (d.size() == 1) return d[0];
  return d[d.size() - 1] - d[d.size() - 2];
}

struct SimulatedRun {
  ClickStream stream;
  RunTruth truth;
};

inline SimulatedRun simulate_run(const SimConfig& config, const PulseSchedule& schedule,
                                 std::uint64_t seed) {
  config.validate();
  schedule.validate();

  SimulatedRun run;
  RunTruth& truth = run.truth;
  const TimeNs duration = detail::seconds_to_ns(config.run_duration_s,
                                                std::numeric_limits<TimeNs>::max() / 2);
  truth.duration = duration;
  truth.n_triggers = duration > schedule.trigger.begin
                         ? static_cast<BinIndex>((duration - schedule.trigger.begin + schedule.period - 1) /
                                                 schedule.period)
                         : 0;

  // (1) atoms and their departure times
  auto atom_rng = detail::stream_engine(seed, 1);
  if (!config.departures_s.empty()) {
    truth.departures_s = config.departures_s;
  } else {
    int n0 = config.initial_atoms.count;
    if (config.initial_atoms.kind == InitialAtomsKind::one_plus_poisson)
      n0 = 1 + static_cast<int>(std::poisson_distribution<int>(config.initial_atoms.poisson_mean)(atom_rng));
    if (config.atoms_pinned)
      truth.departures_s.assign(static_cast<std::size_t>(n0), std::numeric_limits<double>::infinity());
    else
      truth.departures_s = draw_lifetimes(config, static_cast<std::size_t>(n0), atom_rng);
  }
  std::sort(truth.departures_s.begin(), truth.departures_s.end());

  struct Tagged {
    Click click;
    ClickSource source;
  };
  std::vector<Tagged> events;

  // (2) trigger pulses: every present atom emits independently
  auto trig_rng = detail::stream_engine(seed, 2);
  std::bernoulli_distribution detected(config.detection_probability());
  std::bernoulli_distribution second_photon(config.p_two_photon);
  std::bernoulli_distribution coin(0.5);
  std::uniform_int_distribution<TimeNs> offset(0, schedule.trigger.length() - 1);
  auto photon_time = [&](BinIndex j) {
    const TimeNs off = config.emission_profile && !config.emission_profile->empty()
                           ? std::min(config.emission_profile->sample(trig_rng), schedule.trigger.length() - 1)
                           : offset(trig_rng);
    return static_cast<TimeNs>(j) * schedule.period + schedule.trigger.begin + off;
  };
  auto detect = [&](BinIndex j) {
    if (!detected(trig_rng)) return;
    const std::uint8_t ch = coin(trig_rng) ? 1 : 0;
    const TimeNs t = photon_time(j);
    if (t < duration) events.push_back({{t, ch}, ClickSource::signal});
  };
  if (config.p_gen > 0) {
    std::optional<std::geometric_distribution<BinIndex>> geometric;
    if (config.p_gen < 1.0) geometric.emplace(config.p_gen);
    auto gap = [&] { return geometric ? (*geometric)(trig_rng) : BinIndex{0}; };
    for (double dep : truth.departures_s) {
      // triggers whose pulse starts while the atom is still trapped
      const TimeNs dep_ns = detail::seconds_to_ns(dep, duration);
      const BinIndex last = dep_ns > schedule.trigger.begin
                                ? std::min<BinIndex>(truth.n_triggers,
                                                     static_cast<BinIndex>((dep_ns - schedule.trigger.begin - 1) /
                                                                           schedule.period) + 1)
                                : 0;
      for (BinIndex j = gap(); j < last; j += 1 + gap()) {
        truth.emission_triggers.push_back(j);
        detect(j);
        if (config.p_two_photon > 0 && second_photon(trig_rng)) detect(j);
      }
    }
  }
  std::sort(truth.emission_triggers.begin(), truth.emission_triggers.end());
  truth.emission_triggers.erase(std::unique(truth.emission_triggers.begin(), truth.emission_triggers.end()),
                                truth.emission_triggers.end());

  // (3) recycle pulses: Poisson light while atoms are present, sampled on the
  // concatenated recycle-pulse time axis
  auto rec_rng = detail::stream_engine(seed, 3);
  if (config.recycle_det_rate_per_ms > 0) {
    const double len = static_cast<double>(schedule.recycle.length());
    auto to_real = [&](double x) {
      const auto j = static_cast<TimeNs>(x / len);
      const auto within = static_cast<TimeNs>(x - static_cast<double>(j) * len);
      return j * schedule.period + schedule.recycle.begin + std::min<TimeNs>(within, schedule.recycle.length() - 1);
    };
    TimeNs seg_begin = 0;
    for (std::size_t k = 0; k <= truth.departures_s.size() && seg_begin < duration; ++k) {
      const int atoms = static_cast<int>(truth.departures_s.size() - k);
      const TimeNs seg_end = k < truth.departures_s.size()
                                 ? std::max(seg_begin, detail::seconds_to_ns(truth.departures_s[k], duration))
                                 : duration;
      if (atoms > 0 && seg_end > seg_begin) {
        const double rate_per_ns = atoms * config.recycle_det_rate_per_ms * 1e-6;
        std::exponential_distribution<double> gap(rate_per_ns);
        const double x_end = static_cast<double>(schedule.recycle_exposure_before(seg_end));
        for (double x = static_cast<double>(schedule.recycle_exposure_before(seg_begin)) + gap(rec_rng);
             x < x_end; x += gap(rec_rng)) {
          const TimeNs t = to_real(x);
          if (t < duration) events.push_back({{t, static_cast<std::uint8_t>(coin(rec_rng) ? 1 : 0)}, ClickSource::recycle});
        }
      }
      seg_begin = seg_end;
    }
  }

  // (4) background over the whole run
  auto bg_rng = detail::stream_engine(seed, 4);
  if (config.background_rate_hz > 0) {
    std::exponential_distribution<double> gap(config.background_rate_hz * 1e-9);
    for (double t = gap(bg_rng); t < static_cast<double>(duration); t += gap(bg_rng)) {
      const auto ti = static_cast<TimeNs>(t);
      if (ti < duration)
        events.push_back({{ti, static_cast<std::uint8_t>(coin(bg_rng) ? 1 : 0)}, ClickSource::background});
    }
  }

  // (5) merge, then per-detector dead time
  std::stable_sort(events.begin(), events.end(),
                   [](const Tagged& a, const Tagged& b) { return a.click.t < b.click.t; });
  std::array<std::optional<TimeNs>, 2> last_kept;
  run.stream.duration = duration;
  run.stream.clicks.reserve(events.size());
  truth.sources.reserve(events.size());
  for (const Tagged& e : events) {
    auto& last = last_kept[e.click.channel];
    if (config.dead_time_ns > 0 && last && e.click.t - *last < config.dead_time_ns) continue;
    last = e.click.t;
    run.stream.clicks.push_back(e.click);
    truth.sources.push_back(e.source);
    switch (e.source) {
      case ClickSource::signal: ++truth.n_signal; break;
      case ClickSource::recycle: ++truth.n_recycle; break;
      case ClickSource::background: ++truth.n_background; break;
    }
  }
  return run;
}

}  // namespace sps
