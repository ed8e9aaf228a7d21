#include "stochsplit/experiments.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "stochsplit/collapse.hpp"
#include "stochsplit/matrix_sde.hpp"
#include "stochsplit/parallel.hpp"
#include "stochsplit/spectral_sse.hpp"

namespace stochsplit {

using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Config reading. Every accessor validates as it reads, so parsing a config is
// the schema check.

class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail("", "must be an object");
  }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ConfigError(path_ + (key.empty() ? "" : "/" + key) + ": " + what);
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  double number(const std::string& key, std::optional<double> def = {}) {
    seen_.insert(key);
    if (!j_.contains(key)) {
      if (def) return *def;
      fail(key, "is required");
    }
    const auto& v = j_.at(key);
    if (!v.is_number()) fail(key, "must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) fail(key, "must be finite");
    return d;
  }
  double positive(const std::string& key, std::optional<double> def = {}) {
    const double d = number(key, def);
    if (!(d > 0.0)) fail(key, "must be > 0");
    return d;
  }
  double non_negative(const std::string& key, std::optional<double> def = {}) {
    const double d = number(key, def);
    if (!(d >= 0.0)) fail(key, "must be >= 0");
    return d;
  }
  std::uint64_t count(const std::string& key, std::optional<std::uint64_t> def = {}, std::uint64_t min = 1) {
    seen_.insert(key);
    if (!j_.contains(key)) {
      if (def) return *def;
      fail(key, "is required");
    }
    const auto& v = j_.at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0))
      fail(key, "must be a non-negative integer");
    const auto u = v.get<std::uint64_t>();
    if (u < min) fail(key, "must be >= " + std::to_string(min));
    return u;
  }
  bool boolean(const std::string& key, bool def) {
    seen_.insert(key);
    if (!j_.contains(key)) return def;
    if (!j_.at(key).is_boolean()) fail(key, "must be a boolean");
    return j_.at(key).get<bool>();
  }
  std::string string(const std::string& key, std::optional<std::string> def = {}) {
    seen_.insert(key);
    if (!j_.contains(key)) {
      if (def) return *def;
      fail(key, "is required");
    }
    if (!j_.at(key).is_string()) fail(key, "must be a string");
    return j_.at(key).get<std::string>();
  }
  std::vector<double> numbers(const std::string& key, std::optional<std::vector<double>> def = {}) {
    seen_.insert(key);
    if (!j_.contains(key)) {
      if (def) return *def;
      fail(key, "is required");
    }
    const auto& v = j_.at(key);
    if (!v.is_array() || v.empty()) fail(key, "must be a non-empty array of numbers");
    std::vector<double> out;
    for (const auto& e : v) {
      if (!e.is_number() || !std::isfinite(e.get<double>())) fail(key, "must contain finite numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }
  std::vector<std::size_t> dyadic_list(const std::string& key, std::optional<std::vector<std::size_t>> def = {}) {
    seen_.insert(key);
    if (!j_.contains(key)) {
      if (def) return *def;
      fail(key, "is required");
    }
    const auto& v = j_.at(key);
    if (!v.is_array() || v.empty()) fail(key, "must be a non-empty array of powers of two");
    std::vector<std::size_t> out;
    for (const auto& e : v) {
      if (!e.is_number_unsigned()) fail(key, "entries must be positive integers");
      const auto n = e.get<std::uint64_t>();
      if (n == 0 || !std::has_single_bit(n) || n > (std::uint64_t{1} << 20)) fail(key, "entries must be powers of two <= 2^20");
      if (!out.empty() && n <= out.back()) fail(key, "entries must be strictly increasing");
      out.push_back(static_cast<std::size_t>(n));
    }
    return out;
  }
  std::vector<std::string> strings(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) fail(key, "is required");
    const auto& v = j_.at(key);
    if (!v.is_array() || v.empty()) fail(key, "must be a non-empty array of strings");
    std::vector<std::string> out;
    for (const auto& e : v) {
      if (!e.is_string()) fail(key, "must contain strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  }
  std::optional<Obj> child(const std::string& key, bool required = false) {
    seen_.insert(key);
    if (!j_.contains(key)) {
      if (required) fail(key, "is required");
      return std::nullopt;
    }
    return Obj(j_.at(key), path_ + "/" + key);
  }
  const json& raw(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) fail(key, "is required");
    return j_.at(key);
  }
  const std::string& path() const { return path_; }

  /// Rejects keys that were never read.
  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) fail(k, "unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

struct GridSpec {
  double half_width = 10.0;
  std::size_t points = 512;
};
struct PacketSpec {
  double x0 = 0.0, p0 = 0.0, sigma = 0.5;
};

GridSpec read_grid(Obj& parent, const std::string& key, GridSpec def = {}) {
  auto o = parent.child(key);
  if (!o) return def;
  GridSpec g;
  g.half_width = o->positive("half_width", def.half_width);
  g.points = o->count("points", def.points, 2);
  if (!std::has_single_bit(g.points) || g.points > (1u << 20)) o->fail("points", "must be a power of two <= 2^20");
  o->finish();
  return g;
}

PacketSpec read_packet(Obj& parent, PacketSpec def = {}) {
  auto o = parent.child("packet");
  if (!o) return def;
  PacketSpec p;
  p.x0 = o->number("x0", def.x0);
  p.p0 = o->number("p0", def.p0);
  p.sigma = o->positive("sigma", def.sigma);
  o->finish();
  return p;
}

GridPtr build_grid(const GridSpec& g) { return make_grid(g.half_width, g.points); }

// Packets that do not fit their grid are config errors, caught before any run.
void check_packet(const Obj& o, const GridSpec& g, const PacketSpec& p, const std::string& key = "packet") {
  try {
    gaussian_packet(build_grid(g), p.x0, p.p0, p.sigma);
  } catch (const std::invalid_argument& e) {
    o.fail(key, e.what());
  }
}

// ---------------------------------------------------------------------------
// Result helpers.

Criterion le(std::string name, double measured, double tol, std::string note = {}) {
  return {std::move(name), measured, tol, measured <= tol, false, std::move(note)};
}
Criterion lt(std::string name, double measured, double tol, std::string note = {}) {
  return {std::move(name), measured, tol, measured < tol, false, std::move(note)};
}
Criterion ge(std::string name, double measured, double tol, std::string note = {}) {
  return {std::move(name), measured, tol, measured >= tol, false, std::move(note)};
}

std::string fmt(double v) { return format_double(v); }

double erfi_integral(double a, double b, double t) {
  // int_a^b e^{t x^2} dx via the entire series sum t^k x^{2k+1} / (k! (2k+1)).
  auto prim = [t](double x) {
    double term = x, sum = 0.0;
    for (int k = 0; k < 400; ++k) {
      const double add = term / (2 * k + 1);
      sum += add;
      if (std::abs(add) < 1e-18 * std::abs(sum)) break;
      term *= t * x * x / (k + 1);
    }
    return sum;
  };
  return prim(b) - prim(a);
}

// ---------------------------------------------------------------------------
// matrix-converge

struct MatrixParams {
  std::string system;
  std::vector<std::string> schemes;
  std::vector<std::size_t> ns;
  std::size_t paths = 0;
  int reference_level = 14;
  std::optional<std::pair<double, double>> slope_window;
  double exactness_tol = 1e-10;
  bool refinement_check = true;
};

MatrixParams read_matrix(Obj& p) {
  MatrixParams m;
  m.system = p.string("system");
  if (m.system != "noncommuting" && m.system != "commuting" && m.system != "partial-split")
    p.fail("system", "must be one of noncommuting, commuting, partial-split");
  m.schemes = p.strings("schemes");
  for (const auto& s : m.schemes) {
    try {
      const auto k = scheme_from_string(s);
      if (k == SchemeKind::Reference || k == SchemeKind::ExactCommuting || k == SchemeKind::TrotterInterpolated)
        p.fail("schemes", "scheme " + s + " is not a discretization under study");
      if (k == SchemeKind::PartialSplit && m.system == "noncommuting")
        p.fail("schemes", "partial_split needs a system with a commuting inner part");
    } catch (const std::invalid_argument&) {
      p.fail("schemes", "unknown scheme " + s);
    }
  }
  m.ns = p.dyadic_list("n");
  m.paths = p.count("paths");
  m.reference_level = static_cast<int>(p.count("reference_level", 14, 0));
  if (m.reference_level > 20) p.fail("reference_level", "must be <= 20");
  if ((std::size_t{1} << m.reference_level) < m.ns.back()) p.fail("reference_level", "2^L must be >= the largest n");
  if (p.has("slope_window")) {
    const auto w = p.numbers("slope_window");
    if (w.size() != 2 || !(w[0] < w[1])) p.fail("slope_window", "must be [lo, hi] with lo < hi");
    m.slope_window = std::make_pair(w[0], w[1]);
  }
  m.exactness_tol = p.positive("exactness_tol", 1e-10);
  m.refinement_check = p.boolean("refinement_check", true);
  return m;
}

struct SystemChoice {
  MatrixSDESystem system;
  ComplexMatrix a1, a2;
};

SystemChoice choose_system(const std::string& name) {
  if (name == "commuting") {
    auto s = benchmark_commuting();
    return {s, 0.5 * s.drift, 0.5 * s.drift};
  }
  if (name == "partial-split") {
    auto b = benchmark_partial_split();
    return {b.system, b.a1, b.a2};
  }
  return {benchmark_noncommuting(), {}, {}};
}

ExperimentResult run_matrix(const MatrixParams& m, std::uint64_t seed, int threads) {
  ExperimentResult r;
  const auto choice = choose_system(m.system);
  const auto& sys = choice.system;
  std::vector<Scheme> schemes;
  for (const auto& s : m.schemes) {
    const auto k = scheme_from_string(s);
    schemes.push_back(k == SchemeKind::PartialSplit ? Scheme::partial_split(choice.a1, choice.a2) : Scheme::of(k));
  }

  if (sys.all_commute(kCommutatorTol)) {
    // Per-path sup deviation from the closed-form flow.
    CsvWriter csv({"scheme", "n", "max_sup_deviation", "seed"});
    for (const auto& scheme : schemes) {
      double worst = 0.0;
      for (auto n : m.ns) {
        std::vector<double> dev(m.paths);
        parallel_for(m.paths, threads, [&](std::size_t p) {
          const auto lattice = WienerLattice::generate(seed, p, sys.channels(), m.reference_level, sys.horizon);
          const auto exact = run_scheme(sys, Scheme::of(SchemeKind::ExactCommuting), n, lattice);
          const auto got = run_scheme(sys, scheme, n, lattice);
          double d = 0.0;
          for (std::size_t k = 0; k < exact.states.size(); ++k)
            d = std::max(d, (exact.states[k] - got.states[k]).norm());
          dev[p] = d;
        });
        const double mx = *std::max_element(dev.begin(), dev.end());
        worst = std::max(worst, mx);
        csv.row(std::string(to_string(scheme.kind)), n, mx, seed);
      }
      r.criteria.push_back(le("exactness:" + std::string(to_string(scheme.kind)), worst, m.exactness_tol,
                              "max over paths and n of sup_k |X_scheme - X_exact|"));
    }
    r.files.add("exactness.csv", csv.str());
    return r;
  }

  const auto reports = convergence_study(sys, m.system, schemes, m.ns, m.paths, seed, m.reference_level, threads);
  r.files.add("convergence.csv", convergence_csv(reports));
  double min_mse = std::numeric_limits<double>::infinity();
  for (const auto& rep : reports) {
    double worst_ratio = 0.0;
    for (std::size_t i = 0; i + 1 < rep.rows.size(); ++i)
      worst_ratio = std::max(worst_ratio, rep.rows[i + 1].mse / rep.rows[i].mse);
    for (const auto& row : rep.rows) min_mse = std::min(min_mse, row.mse);
    if (m.slope_window) {
      Criterion c{"slope:" + rep.scheme, rep.slope, json::array({m.slope_window->first, m.slope_window->second}),
                  rep.slope >= m.slope_window->first && rep.slope <= m.slope_window->second, false,
                  "least-squares slope of log MSE against log n"};
      r.criteria.push_back(c);
    }
    if (rep.rows.size() > 1)
      r.criteria.push_back(lt("monotone:" + rep.scheme, worst_ratio, 1.0, "max over consecutive n of MSE(2n)/MSE(n)"));
  }

  if (m.refinement_check && m.reference_level >= 2) {
    // Reference self-consistency: finest Euler-Maruyama at 2^(L-2) vs 2^L.
    std::vector<double> d(m.paths);
    const std::size_t coarse = std::size_t{1} << (m.reference_level - 2);
    parallel_for(m.paths, threads, [&](std::size_t p) {
      const auto lattice = WienerLattice::generate(seed, p, sys.channels(), m.reference_level, sys.horizon);
      const auto ref = reference_flow(sys, lattice);
      const auto c = run_scheme(sys, Scheme::of(SchemeKind::EulerMaruyama), coarse, lattice);
      d[p] = (ref.states.back() - c.states.back()).squaredNorm();
    });
    const auto est = mean_and_stderr(d);
    auto c = lt("reference_refinement", est.mean, min_mse,
                "E|ref_{L-2}(T) - ref_L(T)|^2 against the smallest scheme MSE in the study");
    c.diagnostic = true;
    r.criteria.push_back(c);
  }
  return r;
}

// ---------------------------------------------------------------------------
// counterexample

struct CounterParams {
  double t = 1.0;
  std::vector<std::size_t> ns{4, 64};
  std::size_t paths = 100;
  double tol = 1e-12;
};

CounterParams read_counter(Obj& p) {
  CounterParams c;
  c.t = p.positive("t", 1.0);
  c.ns = p.dyadic_list("n", std::vector<std::size_t>{4, 64});
  c.paths = p.count("paths", 100);
  c.tol = p.positive("tolerance", 1e-12);
  return c;
}

ExperimentResult run_counter(const CounterParams& c, std::uint64_t seed, int threads) {
  ExperimentResult r;
  const int level = dyadic_level(c.ns.back());
  std::vector<std::vector<double>> ratios(c.paths, std::vector<double>(c.ns.size()));
  parallel_for(c.paths, threads, [&](std::size_t p) {
    const auto lattice = WienerLattice::generate(seed, p, 1, level, c.t);
    for (std::size_t i = 0; i < c.ns.size(); ++i) ratios[p][i] = stochastic_split_counterexample(c.t, c.ns[i], lattice);
  });
  const double target = std::exp(c.t);
  CsvWriter csv({"path", "n", "ratio"});
  double worst = target, worst_dev = -1.0, spread = 0.0;
  for (std::size_t p = 0; p < c.paths; ++p) {
    const auto [lo, hi] = std::minmax_element(ratios[p].begin(), ratios[p].end());
    spread = std::max(spread, *hi - *lo);
    for (std::size_t i = 0; i < c.ns.size(); ++i) {
      csv.row(p, c.ns[i], ratios[p][i]);
      const double dev = std::abs(ratios[p][i] - target);
      if (dev > worst_dev) {
        worst_dev = dev;
        worst = ratios[p][i];
      }
    }
  }
  r.files.add("ratios.csv", csv.str());
  r.criteria.push_back({"ratio_equals_exp_t", worst, c.tol, worst_dev <= c.tol, false,
                        "worst per-path ratio; target e^t = " + fmt(target)});
  r.criteria.push_back(le("n_independence", spread, c.tol, "max per-path spread of the ratio across n"));
  return r;
}

// ---------------------------------------------------------------------------
// sse-growth

struct GrowthParams {
  double t = 1.0;
  std::size_t paths = 10000;
  GridSpec indicator_grid{2.0, 4096};
  double a = 0.0, b = 1.0;
  GridSpec grid;
  PacketSpec packet;
  double contractive_c = 1.0;
  std::size_t residual_states = 100;
  double residual_tol = 1e-10;
  bool flows = true, residual = true;
};

GrowthParams read_growth(Obj& p) {
  GrowthParams g;
  g.t = p.positive("t", 1.0);
  g.paths = p.count("paths", 10000, 2);
  g.indicator_grid = read_grid(p, "indicator_grid", GridSpec{2.0, 4096});
  const auto ab = p.numbers("indicator", std::vector<double>{0.0, 1.0});
  if (ab.size() != 2 || !(ab[0] < ab[1])) p.fail("indicator", "must be [a, b] with a < b");
  g.a = ab[0];
  g.b = ab[1];
  if (g.a < -g.indicator_grid.half_width || g.b >= g.indicator_grid.half_width)
    p.fail("indicator", "interval must lie inside the indicator grid");
  g.grid = read_grid(p, "grid");
  g.packet = read_packet(p);
  g.contractive_c = p.positive("contractive_c", 1.0);
  check_packet(p, g.grid, g.packet);
  g.residual_states = p.count("residual_states", 100);
  g.residual_tol = p.positive("residual_tolerance", 1e-10);
  if (p.has("checks")) {
    g.flows = g.residual = false;
    for (const auto& c : p.strings("checks")) {
      if (c == "flows") g.flows = true;
      else if (c == "residual") g.residual = true;
      else p.fail("checks", "entries must be flows or residual");
    }
  }
  if (g.t * g.indicator_grid.half_width * g.indicator_grid.half_width > 600.0)
    p.fail("t", "raw flow needs t * Lx^2 <= 600 on the indicator grid");
  return g;
}

void run_flow_norms(const GrowthParams& g, const GridPtr& grid, std::uint64_t seed, int threads, ExperimentResult& r);
void run_residuals(const GrowthParams& g, const GridPtr& grid, std::uint64_t seed, int threads, ExperimentResult& r);

ExperimentResult run_growth(const GrowthParams& g, std::uint64_t seed, int threads) {
  ExperimentResult r;
  const auto grid = build_grid(g.grid);
  if (g.flows) run_flow_norms(g, grid, seed, threads, r);
  if (g.residual) run_residuals(g, grid, seed, threads, r);
  return r;
}

void run_flow_norms(const GrowthParams& g, const GridPtr& grid, std::uint64_t seed, int threads, ExperimentResult& r) {
  const auto igrid = build_grid(g.indicator_grid);
  GridState ind = zero_state(igrid);
  for (std::size_t k = 0; k < ind.psi.size(); ++k)
    if (igrid->x()[k] >= g.a && igrid->x()[k] <= g.b) ind.psi[k] = 1.0;
  const auto psi0 = gaussian_packet(grid, g.packet.x0, g.packet.p0, g.packet.sigma);

  const auto growth = flow_norm_study(ind, -0.5, g.t, g.paths, seed, threads);
  const double growth_target = erfi_integral(g.a, g.b, g.t);
  const auto iso = flow_norm_study(psi0, 0.0, g.t, g.paths, seed, threads);
  const auto contr = flow_norm_study(psi0, g.contractive_c, g.t, g.paths, seed, threads);

  CsvWriter csv({"c", "t", "mean", "stderr", "target"});
  csv.row(-0.5, g.t, growth.mean, growth.std_error, growth_target);
  csv.row(0.0, g.t, iso.mean, iso.std_error, 1.0);
  csv.row(g.contractive_c, g.t, contr.mean, contr.std_error, 1.0);
  r.files.add("flow_norms.csv", csv.str());

  r.criteria.push_back(le("growth_c=-0.5", std::abs(growth.mean - growth_target), 3.0 * growth.std_error,
                          "|E|f_t|^2 - int_a^b e^{t x^2} dx| within 3 SE"));
  r.criteria.push_back(le("isometry_c=0", std::abs(iso.mean - 1.0), 3.0 * iso.std_error, "|E|psi_t|^2 - 1| within 3 SE"));
  r.criteria.push_back(le("contraction_c>0", contr.mean - 1.0, 3.0 * contr.std_error, "E|psi_t|^2 - 1 <= 3 SE"));
}

void run_residuals(const GrowthParams& g, const GridPtr& grid, std::uint64_t seed, int threads, ExperimentResult& r) {
  // Conservativity residual on random grid states.
  CsvWriter res({"state", "residual", "norm_a2"});
  double worst = 0.0;
  std::vector<double> rel(g.residual_states);
  std::vector<std::pair<double, double>> rows(g.residual_states);
  parallel_for(g.residual_states, threads, [&](std::size_t i) {
    CounterStream rng(seed, StreamPurpose::TrialStates, i);
    GridState s = zero_state(grid);
    for (auto& v : s.psi) {
      const double re = rng.normal();
      v = cplx(re, rng.normal());
    }
    const double scale = 1.0 / std::sqrt(s.norm2());
    for (auto& v : s.psi) v *= scale;
    std::vector<double> a2(s.psi.size());
    for (std::size_t k = 0; k < a2.size(); ++k) a2[k] = grid->x()[k] * grid->x()[k] * std::norm(s.psi[k]);
    const double na2 = pairwise_sum(a2) * grid->dx();
    const double resid = conservativity_residual_grid(s);
    rows[i] = {resid, na2};
    rel[i] = std::abs(resid) / na2;
  });
  for (std::size_t i = 0; i < rows.size(); ++i) {
    res.row(i, rows[i].first, rows[i].second);
    worst = std::max(worst, rel[i]);
  }
  r.files.add("residuals.csv", res.str());
  r.criteria.push_back(le("conservativity_residual", worst, g.residual_tol, "max |residual| / |A psi|^2"));
}

// ---------------------------------------------------------------------------
// sse-martingale

struct StudySpec {
  std::vector<std::size_t> ns;
  std::size_t paths = 0;
};

struct MartingaleParams {
  GridSpec grid;
  PacketSpec packet;
  double lambda = 1.0;
  double horizon = 0.5;
  bool include_h = true;
  std::optional<StudySpec> martingale;
  std::optional<StudySpec> ordering;
};

StudySpec read_study(Obj& o) {
  StudySpec s;
  s.ns = o.dyadic_list("n");
  s.paths = o.count("paths", std::nullopt, 2);
  o.finish();
  return s;
}

MartingaleParams read_martingale(Obj& p) {
  MartingaleParams m;
  m.grid = read_grid(p, "grid");
  m.packet = read_packet(p);
  m.lambda = p.non_negative("lambda", 1.0);
  m.horizon = p.positive("horizon", 0.5);
  m.include_h = p.boolean("include_h", true);
  check_packet(p, m.grid, m.packet);
  if (auto o = p.child("martingale")) m.martingale = read_study(*o);
  if (auto o = p.child("ordering")) m.ordering = read_study(*o);
  if (!m.martingale && !m.ordering) p.fail("", "needs a martingale or an ordering block");
  return m;
}

ExperimentResult run_martingale(const MartingaleParams& m, std::uint64_t seed, int threads) {
  ExperimentResult r;
  const auto grid = build_grid(m.grid);
  const auto psi0 = gaussian_packet(grid, m.packet.x0, m.packet.p0, m.packet.sigma);
  SseParams params;
  params.lambdas = {m.lambda};
  params.include_h = m.include_h;

  if (m.martingale) {
    const auto rows = martingale_study(psi0, m.horizon, params, m.martingale->ns, m.martingale->paths, seed, threads);
    CsvWriter csv({"n", "mean_norm2", "stderr", "bias"});
    for (const auto& row : rows) csv.row(row.n, row.norm2.mean, row.norm2.std_error, row.bias());
    r.files.add("martingale.csv", csv.str());
    const auto& last = rows.back();
    r.criteria.push_back(le("martingale_bias_n=" + std::to_string(last.n), std::abs(last.bias()),
                            3.0 * last.norm2.std_error, "|E|psi_T|^2 - 1| within 3 SE"));
    if (rows.size() > 1) {
      // Both estimates share paths; the slack is 2 SE of the paired difference.
      const auto& first = rows.front();
      std::vector<double> diff(first.samples.size());
      for (std::size_t p = 0; p < diff.size(); ++p) diff[p] = last.samples[p] - first.samples[p];
      const double slack = 2.0 * mean_and_stderr(diff).std_error;
      r.criteria.push_back(le("bias_non_increasing", std::abs(last.bias()) - std::abs(first.bias()), slack,
                              "|bias(n_max)| - |bias(n_min)| within 2 SE of the paired difference"));
      auto strict = le("bias_non_increasing_strict", std::abs(last.bias()), std::abs(first.bias()),
                       "raw |bias(n_max)| against |bias(n_min)|, no noise allowance");
      strict.diagnostic = true;
      r.criteria.push_back(strict);
    }

    // One monitored trajectory.
    const std::size_t n = m.martingale->ns.back();
    const auto lattice = WienerLattice::generate(seed, 0, 1, dyadic_level(n), m.horizon);
    const auto states = product_formula_run(psi0, lattice, n, params);
    std::vector<double> times(states.size());
    double energy = 0.0;
    bool finite = true;
    for (std::size_t k = 0; k < states.size(); ++k) {
      times[k] = m.horizon * static_cast<double>(k) / static_cast<double>(n);
      const double e = reference_operator_energy(states[k]);
      finite = finite && std::isfinite(e);
      energy = std::max(energy, e);
    }
    r.files.add("trajectory.csv", trajectory_csv(times, states));
    r.criteria.push_back({"reference_energy_finite", energy, "finite", finite, false,
                          "max |N psi_t|^2 along path 0"});
  }
  if (m.ordering) {
    const auto rows = ordering_study(psi0, m.horizon, params, m.ordering->ns, m.ordering->paths, seed, threads);
    CsvWriter csv({"n", "distance2", "stderr", "l2_distance"});
    for (const auto& row : rows) csv.row(row.n, row.distance2.mean, row.distance2.std_error, std::sqrt(row.distance2.mean));
    r.files.add("ordering.csv", csv.str());
    if (rows.size() > 1)
      r.criteria.push_back(lt("ordering_distance_decreases", std::sqrt(rows.back().distance2.mean),
                              std::sqrt(rows.front().distance2.mean),
                              "L2 distance of the two factor orders at the largest n against the smallest n"));
  }
  return r;
}

// ---------------------------------------------------------------------------
// collapse-equivalence

struct FlashSpec {
  double alpha = 2.0;
  PacketSpec packet;
  std::size_t draws = 100000;
};

struct EquivalenceParams {
  double lambda = 1.0, alpha = 1.0;
  std::optional<double> horizon;
  std::size_t paths = 10000;
  GridSpec grid;
  PacketSpec packet;
  std::optional<FlashSpec> flash;
};

EquivalenceParams read_equivalence(Obj& p) {
  EquivalenceParams e;
  e.lambda = p.positive("lambda", 1.0);
  e.alpha = p.positive("alpha", 1.0);
  if (p.has("horizon")) e.horizon = p.positive("horizon");
  e.paths = p.count("paths", 10000, 2);
  e.grid = read_grid(p, "grid");
  e.packet = read_packet(p, PacketSpec{0.0, 0.0, 0.3});
  check_packet(p, e.grid, e.packet);
  if (auto o = p.child("flash")) {
    FlashSpec f;
    f.alpha = o->positive("alpha", 2.0);
    f.packet = read_packet(*o, PacketSpec{0.0, 0.0, 0.6});
    f.draws = o->count("draws", 100000, 2);
    check_packet(*o, e.grid, f.packet);
    o->finish();
    e.flash = f;
  }
  return e;
}

CollapseConfig collapse_config(double lambda, double alpha, double horizon, std::size_t paths, std::uint64_t seed,
                               const GridSpec& g, const PacketSpec& pk) {
  CollapseConfig c = CollapseConfig::linked(lambda, alpha, horizon);
  c.paths = paths;
  c.seed = seed;
  c.half_width = g.half_width;
  c.points = g.points;
  c.x0 = pk.x0;
  c.p0 = pk.p0;
  c.sigma = pk.sigma;
  return c;
}

ExperimentResult run_equivalence(const EquivalenceParams& e, std::uint64_t seed, int threads) {
  ExperimentResult r;
  const double mu = 2.0 * e.lambda / e.alpha;
  auto cfg = collapse_config(e.lambda, e.alpha, e.horizon.value_or(1.0 / mu), e.paths, seed, e.grid, e.packet);
  cfg.include_h = false;
  const auto rep = equivalence_check_h0(cfg, threads);

  CsvWriter flashes({"path", "k", "t", "Y"});
  CsvWriter zs({"path", "k", "t", "Z", "weight"});
  for (std::size_t p = 0; p < rep.y.size(); ++p)
    for (std::size_t k = 0; k < rep.y[p].size(); ++k) {
      const double t = static_cast<double>(k + 1) * rep.hit_spacing;
      flashes.row(p, k + 1, t, rep.y[p][k]);
      zs.row(p, k + 1, t, rep.z[p][k], rep.weights[p]);
    }
  r.files.add("flashes.csv", flashes.str());
  r.files.add("z_samples.csv", zs.str());
  CsvWriter coords({"k", "ks", "ks_critical", "grw_mean", "grw_var", "z_mean", "z_var", "z_unweighted_var",
                    "z_unweighted_var_se"});
  for (const auto& c : rep.coordinates)
    coords.row(c.k, c.ks, c.ks_critical, c.grw_mean, c.grw_var, c.z_mean, c.z_var, c.z_unweighted_var.mean,
               c.z_unweighted_var.std_error);
  r.files.add("coordinates.csv", coords.str());

  r.criteria.push_back(le("wavefunction_identity", rep.max_wavefunction_deviation, 1e-10,
                          "max relative |phi_QMUPL - phi_GRW(Z)| over compared paths"));
  r.criteria.push_back(ge("ess", rep.ess, 100.0, "sum w / max w"));
  for (const auto& c : rep.coordinates) {
    const auto k = std::to_string(c.k);
    r.criteria.push_back(lt("ks_Y" + k + "_vs_Z" + k, c.ks, c.ks_critical, "1% two-sample critical value, m = Kish ESS"));
    r.criteria.push_back(le("z" + k + "_unweighted_variance", std::abs(c.z_unweighted_var.mean - 1.0 / (2.0 * e.alpha)),
                            3.0 * c.z_unweighted_var.std_error, "|V_Q(Z_k) - 1/(2 alpha)| within 3 SE"));
  }

  if (e.flash) {
    const auto& f = *e.flash;
    auto fc = collapse_config(e.lambda, f.alpha, 1.0, 1, seed, e.grid, f.packet);
    fc.linked_scaling = false;
    fc.mu = 1.0;
    fc.include_h = false;
    const auto y = first_flash_sample(fc, f.draws, threads);
    const auto phi0 = fc.initial_state(fc.make_grid());
    const double v = observables(phi0).var_x;
    const auto var = variance_and_stderr(y);
    const auto mean = mean_and_stderr(y);
    const double target = v + 1.0 / (2.0 * f.alpha);
    CsvWriter csv({"draws", "mean", "mean_se", "var", "var_se", "target_var"});
    csv.row(f.draws, mean.mean, mean.std_error, var.mean, var.std_error, target);
    r.files.add("flash_moments.csv", csv.str());
    r.criteria.push_back(le("flash_variance", std::abs(var.mean - target), 3.0 * var.std_error,
                            "|Var(Y_1) - (v + 1/(2 alpha))| within 3 SE"));
  }
  return r;
}

// ---------------------------------------------------------------------------
// lindblad-check

struct LindbladParams {
  double lambda = 1.0, horizon = 0.5;
  std::size_t paths = 10000, steps = 16;
  GridSpec grid{8.0, 256};
  PacketSpec packet{0.0, 0.0, 1.0};
  std::vector<std::pair<double, double>> pairs{{1.0, 0.0}, {0.5, 0.5}};
  std::optional<std::pair<double, double>> grw;  // alpha, d
  double grw_tol = 0.0025;
};

LindbladParams read_lindblad(Obj& p) {
  LindbladParams l;
  l.lambda = p.non_negative("lambda", 1.0);
  l.horizon = p.positive("horizon", 0.5);
  l.paths = p.count("paths", 10000, 2);
  l.steps = p.count("steps", 16);
  if (!std::has_single_bit(l.steps)) p.fail("steps", "must be a power of two");
  l.grid = read_grid(p, "grid", GridSpec{8.0, 256});
  l.packet = read_packet(p, PacketSpec{0.0, 0.0, 1.0});
  check_packet(p, l.grid, l.packet);
  if (p.has("pairs")) {
    const auto& v = p.raw("pairs");
    if (!v.is_array() || v.empty()) p.fail("pairs", "must be a non-empty array of [x, y]");
    l.pairs.clear();
    for (const auto& e : v) {
      if (!e.is_array() || e.size() != 2 || !e[0].is_number() || !e[1].is_number()) p.fail("pairs", "entries must be [x, y]");
      l.pairs.emplace_back(e[0].get<double>(), e[1].get<double>());
      try {
        const auto grid = build_grid(l.grid);
        grid->node_index(l.pairs.back().first);
        grid->node_index(l.pairs.back().second);
      } catch (const std::invalid_argument& ex) {
        p.fail("pairs", ex.what());
      }
    }
  }
  if (auto o = p.child("grw")) {
    l.grw = std::make_pair(o->positive("alpha", 0.01), o->non_negative("d", 1.0));
    l.grw_tol = o->positive("tolerance", 0.0025);
    o->finish();
  }
  return l;
}

ExperimentResult run_lindblad(const LindbladParams& l, std::uint64_t seed, int threads) {
  ExperimentResult r;
  auto cfg = collapse_config(l.lambda, 1.0, l.horizon, l.paths, seed, l.grid, l.packet);
  cfg.linked_scaling = false;
  cfg.include_h = false;
  const auto out = lindblad_check_h0(cfg, l.pairs, l.steps, threads);
  CsvWriter csv({"x", "y", "factor", "stderr", "imag", "oracle", "rel_error"});
  for (const auto& p : out) {
    csv.row(p.x, p.y, p.factor.mean, p.factor.std_error, p.imag, p.oracle, p.rel_error);
    // x + y = 0 makes the factor path-independent, so SE is pure rounding.
    r.criteria.push_back(le("factor(x=" + fmt(p.x) + ",y=" + fmt(p.y) + ")", std::abs(p.factor.mean - p.oracle),
                            std::max(3.0 * p.factor.std_error, 1e-12 * p.oracle),
                            "|MC factor - e^{-lambda (x-y)^2 t / 2}| within 3 SE"));
  }
  r.files.add("lindblad.csv", csv.str());
  if (l.grw) {
    const auto [alpha, d] = *l.grw;
    const double mu = 2.0 * std::max(l.lambda, 1e-300) / alpha;
    const auto rate = grw_lindblad_factor(alpha, mu, d);
    const double rel = rate.linearized == 0.0 ? 0.0 : std::abs(rate.exact - rate.linearized) / rate.linearized;
    CsvWriter g({"alpha", "mu", "d", "exact", "linearized", "rel_diff"});
    g.row(alpha, mu, d, rate.exact, rate.linearized, rel);
    r.files.add("grw_rates.csv", g.str());
    r.criteria.push_back(le("grw_linearization", rel, l.grw_tol, "|exact - linearized| / linearized"));
  }
  return r;
}

// ---------------------------------------------------------------------------
// continuum-limit

struct ContinuumParams {
  double lambda = 1.0, horizon = 0.5;
  std::vector<double> alphas{4.0, 2.0, 1.0};
  std::size_t paths = 4096;
  std::size_t reference_steps = 256;
  std::size_t bootstrap = 100;
  GridSpec grid;
  PacketSpec packet;
};

ContinuumParams read_continuum(Obj& p) {
  ContinuumParams c;
  c.lambda = p.positive("lambda", 1.0);
  c.horizon = p.positive("horizon", 0.5);
  c.alphas = p.numbers("alphas", std::vector<double>{4.0, 2.0, 1.0});
  for (std::size_t i = 0; i < c.alphas.size(); ++i) {
    if (!(c.alphas[i] > 0.0)) p.fail("alphas", "must be positive");
    if (i > 0 && !(c.alphas[i] < c.alphas[i - 1])) p.fail("alphas", "must be strictly decreasing");
  }
  c.paths = p.count("paths", 4096, 2);
  c.reference_steps = p.count("reference_steps", 256);
  if (!std::has_single_bit(c.reference_steps)) p.fail("reference_steps", "must be a power of two");
  if (c.reference_steps % 2 != 0) p.fail("reference_steps", "must be even so that T/2 lies on the lattice");
  c.bootstrap = p.count("bootstrap", 100, 2);
  c.grid = read_grid(p, "grid");
  c.packet = read_packet(p);
  check_packet(p, c.grid, c.packet);
  return c;
}

ExperimentResult run_continuum(const ContinuumParams& c, std::uint64_t seed, int threads) {
  ExperimentResult r;
  auto base = collapse_config(c.lambda, c.alphas.front(), c.horizon, c.paths, seed, c.grid, c.packet);
  base.include_h = true;
  ContinuumOptions opt;
  opt.reference_steps = c.reference_steps;
  opt.bootstrap = c.bootstrap;
  opt.threads = threads;
  const auto rep = continuum_limit_study(base, c.alphas, opt);
  r.files.add("distances.csv", distances_csv(rep));
  CsvWriter se({"alpha", "t", "observable", "ks_se", "hits", "few_hits"});
  for (const auto& row : rep.rows) se.row(row.alpha, row.t, row.observable, row.ks_se, row.hits, row.few_hits ? 1 : 0);
  r.files.add("distance_errors.csv", se.str());
  CsvWriter nf({"noise_floor", "stderr", "reference_ess", "reference_mean_weight", "reference_mean_weight_se"});
  nf.row(rep.noise_floor.mean, rep.noise_floor.std_error, rep.reference_ess, rep.reference_mean_weight.mean,
         rep.reference_mean_weight.std_error);
  r.files.add("noise_floor.csv", nf.str());

  // <x>_{phi_T} rows, one per alpha level.
  std::vector<const ContinuumRow*> final_rows;
  for (const auto& row : rep.rows)
    if (row.observable == "mean_x" && std::abs(row.t - c.horizon) <= 1e-12 * c.horizon) final_rows.push_back(&row);
  double violation = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < final_rows.size(); ++i) {
    const double slack = 2.0 * std::hypot(final_rows[i]->ks_se, final_rows[i + 1]->ks_se);
    violation = std::max(violation, final_rows[i + 1]->ks - final_rows[i]->ks - slack);
  }
  if (final_rows.size() > 1)
    r.criteria.push_back(le("ks_non_increasing", violation, 0.0,
                            "max over consecutive levels of ks_next - ks_prev - 2 SE (empirical expectation, no rate theorem)"));
  std::string few;
  for (const auto* row : final_rows)
    if (row->few_hits) few += (few.empty() ? "" : ",") + fmt(row->alpha);
  r.criteria.push_back(lt("final_ks_below_2x_noise_floor", final_rows.back()->ks, 2.0 * rep.noise_floor.mean,
                          few.empty() ? "" : "levels with fewer than 4 hits before T: alpha = " + few));
  r.criteria.push_back(ge("reference_ess", rep.reference_ess, 100.0, "sum w / max w of the reference ensemble"));
  r.criteria.push_back(le("reference_mean_weight", std::abs(rep.reference_mean_weight.mean - 1.0),
                          3.0 * rep.reference_mean_weight.std_error, "martingale check of the reference weights"));

  r.files.add("ensemble.csv", ensemble_csv(rep.reference));
  return r;
}

// ---------------------------------------------------------------------------

struct Dispatch {
  std::function<ExperimentResult(Obj&, std::uint64_t, int, bool)> run;
};

template <class Params>
Dispatch make_dispatch(Params (*read)(Obj&), ExperimentResult (*exec)(const Params&, std::uint64_t, int)) {
  return {[read, exec](Obj& p, std::uint64_t seed, int threads, bool dry) {
    const Params params = read(p);
    p.finish();
    if (dry) return ExperimentResult{};
    return exec(params, seed, threads);
  }};
}

const std::map<std::string, Dispatch>& dispatch_table() {
  static const std::map<std::string, Dispatch> table = {
      {"matrix-converge", make_dispatch(&read_matrix, &run_matrix)},
      {"counterexample", make_dispatch(&read_counter, &run_counter)},
      {"sse-growth", make_dispatch(&read_growth, &run_growth)},
      {"sse-martingale", make_dispatch(&read_martingale, &run_martingale)},
      {"collapse-equivalence", make_dispatch(&read_equivalence, &run_equivalence)},
      {"lindblad-check", make_dispatch(&read_lindblad, &run_lindblad)},
      {"continuum-limit", make_dispatch(&read_continuum, &run_continuum)},
  };
  return table;
}

ExperimentResult dispatch(const json& config, int threads, bool dry) {
  Obj top(config, "");
  const std::string kind = top.string("experiment");
  const auto& table = dispatch_table();
  const auto it = table.find(kind);
  if (it == table.end()) top.fail("experiment", "unknown experiment kind '" + kind + "'");
  const std::uint64_t seed = top.count("seed", std::nullopt, 0);
  top.string("output_dir", std::string{});
  top.string("description", std::string{});
  auto params = top.child("params", true);
  top.finish();
  ExperimentResult r;
  try {
    r = it->second.run(*params, seed, threads, dry);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("rejected by the engine: ") + e.what());
  } catch (const std::out_of_range& e) {
    throw ConfigError(std::string("rejected by the engine: ") + e.what());
  }
  r.experiment = kind;
  r.seed = seed;
  return r;
}

}  // namespace

bool ExperimentResult::all_pass() const {
  return std::all_of(criteria.begin(), criteria.end(), [](const Criterion& c) { return c.pass || c.diagnostic; });
}

json ExperimentResult::summary() const {
  json list = json::array();
  for (const auto& c : criteria) {
    json e = {{"experiment", experiment}, {"criterion", c.name}, {"measured", c.measured},
              {"tolerance", c.tolerance},  {"pass", c.pass}};
    if (c.diagnostic) e["diagnostic"] = true;
    if (!c.note.empty()) e["note"] = c.note;
    list.push_back(std::move(e));
  }
  return {{"experiment", experiment}, {"seed", seed}, {"pass", all_pass()}, {"criteria", std::move(list)}};
}

const std::vector<ExperimentInfo>& experiment_catalog() {
  static const std::vector<ExperimentInfo> catalog = {
      {"matrix-converge", "Strong error E sup_t |scheme - reference|^2 of the matrix SDE splitting schemes",
       "Convergence of the product formula for dX = A X dt + B X dxi (Euler-Maruyama, piecewise Trotter, "
       "factored first-order and partial splitting); exactness when all generators commute",
       "system (noncommuting|commuting|partial-split), schemes[], n[] dyadic, paths, reference_level, "
       "slope_window [lo, hi], exactness_tol, refinement_check"},
      {"counterexample", "Splitting the stochastic part itself: dX = 2 X dxi as two B = 1 flows per step",
       "The stochastic factor cannot be decomposed further: the split product overshoots by exactly e^t",
       "t, n[] dyadic, paths, tolerance"},
      {"sse-growth", "Mean-square behaviour of the closed-form collapse flows and the conservativity residual",
       "E|psi_t|^2 = int e^{-2 c t x^2} |psi_0|^2 for the flows exp(xi A - (1 + c) t A^2); "
       "sum |L psi|^2 - 2 Re <K psi, psi> = 0 for K = iH + A^2/2",
       "t, paths, indicator [a, b], indicator_grid {half_width, points}, grid, packet {x0, p0, sigma}, "
       "contractive_c, residual_states, residual_tolerance"},
      {"sse-martingale", "Product formula for the conservative stochastic Schroedinger equation",
       "|psi_T|^2 is a martingale in the limit; the order of the free and collapse factors does not matter",
       "grid, packet, lambda, horizon, include_h, martingale {n[], paths}, ordering {n[], paths}"},
      {"collapse-equivalence", "GRW flashes against reweighted QMUPL increments without Hamiltonian",
       "With mu alpha = 2 lambda and H = 0 the GRW flash law equals the law of Z_k under the reweighted measure; "
       "flash marginal is |phi|^2 convolved with N(0, 1/(2 alpha))",
       "lambda, alpha, horizon (default 1/mu), paths, grid, packet, flash {alpha, packet, draws}"},
      {"lindblad-check", "Off-diagonal decay of the ensemble density matrix without Hamiltonian",
       "E_Q[psi_t(x) conj psi_t(y)] = e^{-lambda (x - y)^2 t / 2} psi_0(x) conj psi_0(y); "
       "GRW rate mu (1 - e^{-alpha d^2 / 4}) against its linearization",
       "lambda, horizon, paths, steps, grid, packet, pairs [[x, y], ...], grw {alpha, d, tolerance}"},
      {"continuum-limit", "Scaled GRW (mu = 2 lambda / alpha) against a fine QMUPL reference as alpha decreases",
       "Weak convergence of the finite-dimensional distributions of phi_t; compares <x> and var(x) at T/2 and T",
       "lambda, horizon, alphas[] decreasing, paths, reference_steps, bootstrap, grid, packet"},
  };
  return catalog;
}

std::string list_experiments() {
  std::ostringstream out;
  for (const auto& e : experiment_catalog()) {
    out << e.kind << "\n  " << e.summary << "\n  exercises: " << e.exercises << "\n  params: " << e.parameters
        << "\n\n";
  }
  return out.str();
}

void validate_config(const json& config) { dispatch(config, 1, true); }

json load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file " + path);
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError("invalid JSON in " + path + ": " + e.what());
  }
}

ExperimentResult run_experiment(const json& config, int threads) {
  validate_config(config);
  auto r = dispatch(config, threads, false);
  r.files.add("summary.json", r.summary().dump(2) + "\n");
  return r;
}

bool SweepResult::all_pass() const {
  return std::all_of(runs.begin(), runs.end(), [](const ExperimentResult& r) { return r.all_pass(); });
}

SweepResult seed_sweep(const json& config, std::span<const std::uint64_t> seeds, int threads) {
  if (seeds.size() < 2) throw ConfigError("a sweep needs at least two seeds");
  validate_config(config);
  SweepResult s;
  for (auto seed : seeds) {
    json c = config;
    c["seed"] = seed;
    s.runs.push_back(run_experiment(c, threads));
  }
  std::map<std::string, std::vector<double>> values;
  std::vector<std::string> order;
  for (const auto& run : s.runs)
    for (const auto& c : run.criteria) {
      if (!values.count(c.name)) order.push_back(c.name);
      values[c.name].push_back(c.measured);
    }
  json agg = json::array();
  for (const auto& name : order) {
    const auto& v = values[name];
    agg.push_back({{"criterion", name},
                   {"mean", pairwise_sum(v) / static_cast<double>(v.size())},
                   {"stddev", sample_stddev(v)},
                   {"values", v}});
  }
  json seed_list = json::array();
  for (auto seed : seeds) seed_list.push_back(seed);
  s.aggregate = {{"experiment", s.runs.front().experiment}, {"seeds", seed_list}, {"pass", s.all_pass()},
                 {"statistics", agg}};
  return s;
}

OutputBundle sweep_bundle(const SweepResult& sweep) {
  OutputBundle b;
  for (const auto& run : sweep.runs)
    for (const auto& [name, contents] : run.files.files())
      b.add("seed_" + std::to_string(run.seed) + "/" + name, contents);
  b.add("sweep_summary.json", sweep.aggregate.dump(2) + "\n");
  return b;
}

}  // namespace stochsplit
