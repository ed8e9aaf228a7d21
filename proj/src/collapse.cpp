#include "stochsplit/collapse.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "stochsplit/parallel.hpp"
#include "stochsplit/report.hpp"

namespace stochsplit {

namespace {

constexpr double kTimeTol = 1e-9;

PathObservation observe(double t, const GridState& s) {
  const auto o = observables(s);
  return {t, o.mean_x, o.var_x};
}

void normalize(GridState& s) {
  const double n2 = s.norm2();
  if (!(n2 > 0.0) || !std::isfinite(n2)) throw std::domain_error("state has zero or non-finite norm");
  const double scale = 1.0 / std::sqrt(n2);
  for (auto& v : s.psi) v *= scale;
}

// GRW path allowing any number of hits (including none). Observables are
// recorded at each requested time, sorted ascending, after free evolution from
// the last hit.
struct GrwRun {
  FlashRecord flashes;
  std::vector<PathObservation> after_hits;
  std::vector<PathObservation> at_times;
  GridState final_state;
};

GrwRun grw_evolve(const CollapseConfig& cfg, const GridState& phi0, std::span<const double> record_times,
                  GrwStreams& rng) {
  const std::size_t total_hits = cfg.hits();
  GrwRun run;
  GridState phi = phi0;
  double tc = 0.0;
  std::size_t k = 0;
  auto advance_to = [&](double t) {
    while (k < total_hits && static_cast<double>(k + 1) / cfg.mu <= t * (1.0 + kTimeTol)) {
      auto hit = grw_step(phi, cfg.alpha, cfg.mu, cfg.include_h, rng);
      phi = std::move(hit.state);
      ++k;
      tc = static_cast<double>(k) / cfg.mu;
      run.flashes.times.push_back(tc);
      run.flashes.positions.push_back(hit.y);
      run.after_hits.push_back(observe(tc, phi));
    }
  };
  for (double t : record_times) {
    advance_to(t);
    const GridState at = cfg.include_h ? free_propagate(phi, t - tc) : phi;
    run.at_times.push_back(observe(t, at));
  }
  advance_to(cfg.horizon);
  run.final_state = cfg.include_h ? free_propagate(phi, cfg.horizon - tc) : phi;
  return run;
}

bool is_power_of_two(std::size_t n) { return n > 0 && std::has_single_bit(n); }

}  // namespace

CollapseConfig CollapseConfig::linked(double lambda, double alpha, double horizon) {
  CollapseConfig c;
  c.lambda = lambda;
  c.alpha = alpha;
  c.mu = 2.0 * lambda / alpha;
  c.horizon = horizon;
  c.linked_scaling = true;
  return c;
}

void CollapseConfig::validate() const {
  auto positive = [](double v) { return v > 0.0 && std::isfinite(v); };
  // lambda = 0 (and then mu = 0 under the link) is the unitary limit.
  if (!(lambda >= 0.0) || !std::isfinite(lambda) || !(mu >= 0.0) || !std::isfinite(mu) || !positive(alpha))
    throw std::invalid_argument("rates must be positive (lambda = 0 allowed)");
  if (!positive(horizon)) throw std::invalid_argument("horizon must be positive");
  if (paths == 0) throw std::invalid_argument("ensemble size must be positive");
  if (!positive(sigma)) throw std::invalid_argument("packet width must be positive");
  if (linked_scaling && std::abs(mu * alpha - 2.0 * lambda) > 1e-12 * std::max(2.0 * lambda, 1e-300))
    throw std::invalid_argument("linked scaling requires mu alpha = 2 lambda");
}

std::size_t CollapseConfig::hits() const {
  return static_cast<std::size_t>(std::floor(mu * horizon * (1.0 + kTimeTol)));
}

GridPtr CollapseConfig::make_grid() const { return stochsplit::make_grid(half_width, points); }

GridState CollapseConfig::initial_state(const GridPtr& grid) const { return gaussian_packet(grid, x0, p0, sigma); }

void grw_hit_in_place(GridState& phi, double alpha, double y) {
  const auto x = phi.grid->x();
  const double pref = std::pow(alpha / std::numbers::pi, 0.25);
  for (std::size_t k = 0; k < phi.psi.size(); ++k) {
    const double d = x[k] - y;
    phi.psi[k] *= pref * std::exp(-0.5 * alpha * d * d);
  }
  normalize(phi);
}

GrwHit grw_step(const GridState& phi, double alpha, double mu, bool include_h, GrwStreams& rng) {
  if (!(phi.norm2() > 0.0)) throw std::domain_error("grw_step: zero state");
  GridState s = include_h ? free_propagate(phi, 1.0 / mu) : phi;
  std::vector<double> cumulative(s.psi.size());
  double acc = 0.0;
  for (std::size_t k = 0; k < s.psi.size(); ++k) {
    acc += std::norm(s.psi[k]);
    cumulative[k] = acc;
  }
  const double u = rng.categorical.uniform() * acc;
  auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
  if (it == cumulative.end()) --it;
  const double x = s.grid->x()[static_cast<std::size_t>(it - cumulative.begin())];
  const double y = x + rng.gaussian.normal() * std::sqrt(1.0 / (2.0 * alpha));
  grw_hit_in_place(s, alpha, y);
  return {std::move(s), y};
}

std::vector<double> flash_density(const GridState& phi, double alpha) {
  const auto x = phi.grid->x();
  const double dx = phi.grid->dx();
  std::vector<double> rho(phi.psi.size()), out(phi.psi.size()), term(phi.psi.size());
  for (std::size_t k = 0; k < rho.size(); ++k) rho[k] = std::norm(phi.psi[k]);
  const double pref = std::sqrt(alpha / std::numbers::pi);
  for (std::size_t j = 0; j < out.size(); ++j) {
    for (std::size_t k = 0; k < rho.size(); ++k) term[k] = std::exp(-alpha * (x[k] - x[j]) * (x[k] - x[j])) * rho[k];
    out[j] = pref * pairwise_sum(term) * dx;
  }
  return out;
}

GrwPath grw_trajectory(const CollapseConfig& config, std::uint64_t path_id) {
  config.validate();
  if (config.hits() < 1) throw std::invalid_argument("grw_trajectory requires mu T >= 1");
  const auto grid = config.make_grid();
  GrwStreams rng(config.seed, path_id);
  auto run = grw_evolve(config, config.initial_state(grid), {}, rng);
  return {std::move(run.flashes), std::move(run.after_hits), std::move(run.final_state)};
}

GridState grw_apply_flashes(const GridState& phi0, std::span<const double> centers, double alpha, double mu,
                            bool include_h) {
  GridState phi = phi0;
  for (double y : centers) {
    if (include_h) free_propagate_in_place(phi, 1.0 / mu);
    grw_hit_in_place(phi, alpha, y);
  }
  return phi;
}

double WeightedEnsemble::ess() const {
  std::vector<WeightedSample> s;
  s.reserve(weights.size());
  for (double w : weights) s.push_back({0.0, w});
  return weight_ratio_ess(s);
}

std::vector<WeightedSample> WeightedEnsemble::weighted(std::size_t record, bool variance) const {
  std::vector<WeightedSample> out(weights.size());
  for (std::size_t p = 0; p < weights.size(); ++p) {
    const auto& r = records.at(p).at(record);
    out[p] = {variance ? r.var_x : r.mean_x, weights[p]};
  }
  return out;
}

WeightedEnsemble qmupl_ensemble(const CollapseConfig& config, std::size_t n, std::span<const double> record_times,
                                int threads) {
  config.validate();
  const int level = dyadic_level(n);
  const double horizon = config.horizon;
  const double dt = horizon / static_cast<double>(n);

  auto lattice_index = [&](double t) -> std::ptrdiff_t {
    const double r = t / dt;
    const double ri = std::round(r);
    if (std::abs(r - ri) > kTimeTol * std::max(1.0, r)) return -1;
    return static_cast<std::ptrdiff_t>(ri);
  };
  std::vector<std::size_t> record_steps;
  const std::vector<double> default_times{horizon};
  if (record_times.empty()) record_times = default_times;
  for (double t : record_times) {
    const auto j = lattice_index(t);
    if (j < 0 || j > static_cast<std::ptrdiff_t>(n)) throw std::invalid_argument("record time not on the n-lattice");
    record_steps.push_back(static_cast<std::size_t>(j));
  }
  std::vector<std::size_t> hit_steps;
  const std::size_t z_count = config.lambda > 0.0 ? config.hits() : 0;
  for (std::size_t k = 1; k <= z_count; ++k) {
    const auto j = lattice_index(static_cast<double>(k) / config.mu);
    if (j < 0) {
      hit_steps.clear();
      break;
    }
    hit_steps.push_back(static_cast<std::size_t>(j));
  }

  const auto grid = config.make_grid();
  const auto phi0 = config.initial_state(grid);
  SseParams params;
  params.lambdas = {config.lambda};
  params.include_h = config.include_h;

  WeightedEnsemble ens;
  ens.steps = n;
  ens.weights.resize(config.paths);
  ens.records.resize(config.paths);
  ens.z.resize(config.paths);
  const double zscale = config.mu / (2.0 * std::sqrt(config.lambda));
  parallel_for(config.paths, threads, [&](std::size_t p) {
    const auto lattice = WienerLattice::generate(config.seed, p, 1, level, horizon);
    auto& rec = ens.records[p];
    rec.resize(record_steps.size());
    auto record = [&](std::size_t k, const GridState& s) {
      for (std::size_t i = 0; i < record_steps.size(); ++i)
        if (record_steps[i] == k) rec[i] = observe(static_cast<double>(k) * dt, s);
    };
    record(0, phi0);
    const auto psi = product_formula_evolve(phi0, lattice, n, params, FactorOrder::CollapseThenFree,
                                            [&](std::size_t k, double, const GridState& s) { record(k, s); });
    ens.weights[p] = psi.norm2();
    if (!hit_steps.empty()) {
      const auto xi = lattice.path_values(level);
      std::size_t prev = 0;
      for (auto j : hit_steps) {
        ens.z[p].push_back(zscale * (xi(0, j) - xi(0, prev)));
        prev = j;
      }
    }
  });
  return ens;
}

EquivalenceReport equivalence_check_h0(const CollapseConfig& config, int threads) {
  config.validate();
  if (config.include_h) throw std::invalid_argument("equivalence check requires include_h = false");
  if (!config.linked_scaling) throw std::invalid_argument("equivalence check requires linked scaling");
  const std::size_t k_hits = config.hits();
  if (!is_power_of_two(k_hits)) throw std::invalid_argument("equivalence check needs floor(mu T) a power of two");

  CollapseConfig cfg = config;
  cfg.horizon = static_cast<double>(k_hits) / config.mu;
  const auto grid = cfg.make_grid();
  const auto phi0 = cfg.initial_state(grid);

  std::vector<std::vector<double>> y(cfg.paths);
  parallel_for(cfg.paths, threads, [&](std::size_t p) {
    GrwStreams rng(cfg.seed, p);
    y[p] = grw_evolve(cfg, phi0, {}, rng).flashes.positions;
  });
  const auto ens = qmupl_ensemble(cfg, k_hits, {}, threads);

  EquivalenceReport rep;
  {
    std::vector<WeightedSample> w;
    for (double v : ens.weights) w.push_back({0.0, v});
    rep.ess = weight_ratio_ess(w);
    rep.ess_kish = effective_sample_size(w);
  }
  for (std::size_t k = 0; k < k_hits; ++k) {
    CoordinateComparison c;
    c.k = k + 1;
    std::vector<double> yk(cfg.paths), zk(cfg.paths);
    std::vector<WeightedSample> wz(cfg.paths);
    for (std::size_t p = 0; p < cfg.paths; ++p) {
      yk[p] = y[p].at(k);
      zk[p] = ens.z[p].at(k);
      wz[p] = {zk[p], ens.weights[p]};
    }
    c.ks = ks_distance(yk, wz);
    c.ks_critical = ks_critical_value(0.01, static_cast<double>(cfg.paths), rep.ess_kish);
    const auto ym = mean_and_stderr(yk);
    c.grw_mean = ym.mean;
    c.grw_var = variance_and_stderr(yk).mean;
    const auto zm = weighted_mean_variance(wz);
    c.z_mean = zm.mean;
    c.z_var = zm.variance;
    c.z_unweighted_var = variance_and_stderr(zk);
    rep.coordinates.push_back(c);
  }

  // Pathwise identity: QMUPL phi on a path equals the GRW map at Y = Z.
  SseParams params;
  params.lambdas = {cfg.lambda};
  params.include_h = false;
  rep.compared_paths = std::min<std::size_t>(cfg.paths, 100);
  std::vector<double> dev(rep.compared_paths);
  parallel_for(rep.compared_paths, threads, [&](std::size_t p) {
    const auto lattice = WienerLattice::generate(cfg.seed, p, 1, dyadic_level(k_hits), cfg.horizon);
    GridState q = product_formula_evolve(phi0, lattice, k_hits, params);
    normalize(q);
    const auto g = grw_apply_flashes(phi0, ens.z[p], cfg.alpha, cfg.mu, false);
    double m = 0.0, amp = 0.0;
    for (std::size_t i = 0; i < q.psi.size(); ++i) {
      m = std::max(m, std::abs(q.psi[i] - g.psi[i]));
      amp = std::max(amp, std::abs(q.psi[i]));
    }
    dev[p] = m / amp;
  });
  rep.max_wavefunction_deviation = dev.empty() ? 0.0 : *std::max_element(dev.begin(), dev.end());
  rep.y = std::move(y);
  rep.z = ens.z;
  rep.weights = ens.weights;
  rep.hit_spacing = 1.0 / cfg.mu;
  return rep;
}

std::vector<double> first_flash_sample(const CollapseConfig& config, std::size_t draws, int threads) {
  config.validate();
  const auto grid = config.make_grid();
  const auto phi0 = config.initial_state(grid);
  std::vector<double> out(draws);
  parallel_for(draws, threads, [&](std::size_t p) {
    GrwStreams rng(config.seed, p);
    out[p] = grw_step(phi0, config.alpha, config.mu, config.include_h, rng).y;
  });
  return out;
}

namespace {

// KS between an unweighted sample and a weighted one, with index resampling.
double resampled_ks(std::span<const double> a, std::span<const WeightedSample> b, CounterStream& rng,
                    std::vector<double>& abuf, std::vector<WeightedSample>& bbuf) {
  abuf.resize(a.size());
  bbuf.resize(b.size());
  for (auto& v : abuf) v = a[static_cast<std::size_t>(rng.uniform() * static_cast<double>(a.size()))];
  for (auto& v : bbuf) v = b[static_cast<std::size_t>(rng.uniform() * static_cast<double>(b.size()))];
  return ks_distance(abuf, bbuf);
}

}  // namespace

ContinuumReport continuum_limit_study(const CollapseConfig& base, std::span<const double> alphas,
                                      const ContinuumOptions& options) {
  if (!base.include_h) throw std::invalid_argument("continuum-limit study requires include_h = true");
  if (alphas.empty()) throw std::invalid_argument("continuum-limit study needs at least one alpha");
  if (options.bootstrap < 2) throw std::invalid_argument("bootstrap count must be >= 2");
  const double horizon = base.horizon;
  const std::vector<double> times{horizon / 2.0, horizon};

  CollapseConfig ref_cfg = base;
  ref_cfg.linked_scaling = false;
  ref_cfg.mu = 1.0;  // unused by the reference apart from Z bookkeeping
  ref_cfg.validate();
  auto ref = qmupl_ensemble(ref_cfg, options.reference_steps, times, options.threads);

  ContinuumReport rep;
  rep.reference_ess = ref.ess();
  rep.reference_mean_weight = ref.mean_weight();

  const auto grid = base.make_grid();
  const auto phi0 = base.initial_state(grid);
  std::vector<double> abuf;
  std::vector<WeightedSample> bbuf;
  std::uint64_t boot_id = 0;

  for (std::size_t i = 0; i < alphas.size(); ++i) {
    CollapseConfig cfg = base;
    cfg.alpha = alphas[i];
    cfg.mu = 2.0 * base.lambda / alphas[i];
    cfg.linked_scaling = true;
    cfg.validate();
    std::vector<std::vector<PathObservation>> obs(cfg.paths);
    parallel_for(cfg.paths, options.threads, [&](std::size_t p) {
      GrwStreams rng(cfg.seed, (static_cast<std::uint64_t>(i + 1) << 32) | p);
      obs[p] = grw_evolve(cfg, phi0, times, rng).at_times;
    });
    for (std::size_t ti = 0; ti < times.size(); ++ti) {
      for (bool variance : {false, true}) {
        ContinuumRow row;
        row.alpha = cfg.alpha;
        row.mu = cfg.mu;
        row.hits = cfg.hits();
        row.few_hits = row.hits < 4;
        row.t = times[ti];
        row.observable = variance ? "var_x" : "mean_x";
        std::vector<double> g(cfg.paths);
        for (std::size_t p = 0; p < cfg.paths; ++p) g[p] = variance ? obs[p][ti].var_x : obs[p][ti].mean_x;
        const auto w = ref.weighted(ti, variance);
        row.ks = ks_distance(g, w);
        const auto wm = weighted_mean_variance(w);
        row.d_mean = mean_and_stderr(g).mean - wm.mean;
        row.d_var = variance_and_stderr(g).mean - wm.variance;
        row.ess = rep.reference_ess;
        CounterStream rng(base.seed, StreamPurpose::Bootstrap, boot_id++);
        std::vector<double> boot(options.bootstrap);
        for (auto& b : boot) b = resampled_ks(g, w, rng, abuf, bbuf);
        row.ks_se = sample_stddev(boot);
        rep.rows.push_back(row);
      }
    }
  }

  // Same-distribution floor: a size-P draw from the weighted reference law
  // against a bootstrap copy of the weighted reference itself.
  {
    const auto w = ref.weighted(times.size() - 1, false);
    std::vector<double> cumulative(w.size());
    double acc = 0.0;
    for (std::size_t p = 0; p < w.size(); ++p) cumulative[p] = (acc += w[p].weight);
    CounterStream rng(base.seed, StreamPurpose::Bootstrap, boot_id++);
    std::vector<double> floor(options.bootstrap), draw(base.paths);
    std::vector<WeightedSample> copy(w.size());
    for (auto& f : floor) {
      for (auto& d : draw) {
        auto it = std::upper_bound(cumulative.begin(), cumulative.end(), rng.uniform() * acc);
        if (it == cumulative.end()) --it;
        d = w[static_cast<std::size_t>(it - cumulative.begin())].value;
      }
      for (auto& c : copy) c = w[static_cast<std::size_t>(rng.uniform() * static_cast<double>(w.size()))];
      f = ks_distance(draw, copy);
    }
    rep.noise_floor = mean_and_stderr(floor);
  }
  rep.reference = std::move(ref);
  return rep;
}

std::vector<LindbladPair> lindblad_check_h0(const CollapseConfig& config,
                                            std::span<const std::pair<double, double>> pairs, std::size_t steps,
                                            int threads) {
  config.validate();
  const auto grid = config.make_grid();
  const auto phi0 = config.initial_state(grid);
  std::vector<std::pair<std::size_t, std::size_t>> idx;
  for (const auto& [x, y] : pairs) {
    idx.emplace_back(grid->node_index(x), grid->node_index(y));
    if (phi0.psi[idx.back().first] == 0.0 || phi0.psi[idx.back().second] == 0.0)
      throw std::invalid_argument("lindblad_check_h0: initial state vanishes at a probe point");
  }
  SseParams params;
  params.lambdas = {config.lambda};
  params.include_h = false;
  const int level = dyadic_level(steps);
  std::vector<std::vector<cplx>> values(pairs.size(), std::vector<cplx>(config.paths));
  parallel_for(config.paths, threads, [&](std::size_t p) {
    const auto lattice = WienerLattice::generate(config.seed, p, 1, level, config.horizon);
    const auto psi = product_formula_evolve(phi0, lattice, steps, params);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto [a, b] = idx[i];
      values[i][p] = psi.psi[a] * std::conj(psi.psi[b]) / (phi0.psi[a] * std::conj(phi0.psi[b]));
    }
  });
  std::vector<LindbladPair> out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    std::vector<double> re(config.paths), im(config.paths);
    for (std::size_t p = 0; p < config.paths; ++p) {
      re[p] = values[i][p].real();
      im[p] = values[i][p].imag();
    }
    LindbladPair lp;
    lp.x = pairs[i].first;
    lp.y = pairs[i].second;
    lp.factor = mean_and_stderr(re);
    lp.imag = mean_and_stderr(im).mean;
    const double d = lp.x - lp.y;
    lp.oracle = std::exp(-config.lambda * d * d * config.horizon / 2.0);
    lp.rel_error = std::abs(lp.factor.mean - lp.oracle) / lp.oracle;
    out.push_back(lp);
  }
  return out;
}

GrwLindbladRate grw_lindblad_factor(double alpha, double mu, double d) {
  const double u = alpha * d * d / 4.0;
  return {-mu * std::expm1(-u), mu * u};
}

std::string flashes_csv(std::span<const GrwPath> paths) {
  CsvWriter csv({"path", "k", "t", "Y"});
  for (std::size_t p = 0; p < paths.size(); ++p)
    for (std::size_t k = 0; k < paths[p].flashes.times.size(); ++k)
      csv.row(p, k + 1, paths[p].flashes.times[k], paths[p].flashes.positions[k]);
  return csv.str();
}

std::string ensemble_csv(const WeightedEnsemble& ensemble) {
  CsvWriter csv({"path", "t", "mean_x", "var_x", "weight"});
  for (std::size_t p = 0; p < ensemble.weights.size(); ++p)
    for (const auto& r : ensemble.records[p]) csv.row(p, r.t, r.mean_x, r.var_x, ensemble.weights[p]);
  return csv.str();
}

std::string distances_csv(const ContinuumReport& report) {
  CsvWriter csv({"alpha", "mu", "t", "observable", "ks", "d_mean", "d_var", "ess"});
  for (const auto& r : report.rows) csv.row(r.alpha, r.mu, r.t, r.observable, r.ks, r.d_mean, r.d_var, r.ess);
  return csv.str();
}

}  // namespace stochsplit
