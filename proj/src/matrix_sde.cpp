#include "stochsplit/matrix_sde.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "stochsplit/parallel.hpp"
#include "stochsplit/report.hpp"

namespace stochsplit {

namespace {

struct SchemeName {
  SchemeKind kind;
  std::string_view name;
};

constexpr SchemeName kSchemeNames[] = {
    {SchemeKind::ExactCommuting, "exact_commuting"},
    {SchemeKind::Reference, "reference"},
    {SchemeKind::EulerMaruyama, "euler_maruyama"},
    {SchemeKind::TrotterPiecewise, "trotter_piecewise"},
    {SchemeKind::TrotterInterpolated, "trotter_interpolated"},
    {SchemeKind::FirstOrderFactored, "first_order_factored"},
    {SchemeKind::PartialSplit, "partial_split"},
};

ComplexMatrix square_sum(const MatrixSDESystem& s) {
  ComplexMatrix acc = ComplexMatrix::Zero(s.dim(), s.dim());
  for (const auto& b : s.diffusions) acc += b * b;
  return acc;
}

std::vector<double> lattice_times(double horizon, std::size_t n) {
  std::vector<double> t(n + 1);
  for (std::size_t k = 0; k <= n; ++k) t[k] = horizon * static_cast<double>(k) / static_cast<double>(n);
  return t;
}

void check_lattice(const MatrixSDESystem& system, std::size_t n, const WienerLattice& lattice) {
  const int level = dyadic_level(n);
  if (level > lattice.finest_level())
    throw std::invalid_argument("n exceeds the finest lattice resolution 2^L");
  if (lattice.channels() < system.channels())
    throw std::invalid_argument("lattice has fewer channels than the system");
  if (lattice.horizon() != system.horizon) throw std::invalid_argument("lattice horizon differs from system horizon");
}

Trajectory euler_maruyama(const MatrixSDESystem& s, const ChannelTable& inc) {
  const std::size_t n = inc.columns();
  const double dt = inc.dt();
  Trajectory out;
  out.times = lattice_times(s.horizon, n);
  out.states.reserve(n + 1);
  out.states.push_back(s.x0);
  ComplexVector x = s.x0, next(s.dim()), tmp(s.dim());
  for (std::size_t k = 0; k < n; ++k) {
    tmp.noalias() = s.drift * x;
    next = x + dt * tmp;
    for (int j = 0; j < s.channels(); ++j) {
      tmp.noalias() = s.diffusions[static_cast<std::size_t>(j)] * x;
      next += inc(j, k) * tmp;
    }
    x.swap(next);
    out.states.push_back(x);
  }
  return out;
}

// Generic product run: x_{k+1} = step(k) x_k.
template <class StepFn>
Trajectory product_run(const MatrixSDESystem& s, std::size_t n, StepFn&& apply_step) {
  Trajectory out;
  out.times = lattice_times(s.horizon, n);
  out.states.reserve(n + 1);
  out.states.push_back(s.x0);
  ComplexVector x = s.x0;
  for (std::size_t k = 0; k < n; ++k) {
    apply_step(k, x);
    out.states.push_back(x);
  }
  return out;
}

void require_commuting_inner(const MatrixSDESystem& s, const Scheme& scheme) {
  if (scheme.split_a1.rows() != s.dim() || scheme.split_a2.rows() != s.dim() ||
      scheme.split_a1.cols() != s.dim() || scheme.split_a2.cols() != s.dim())
    throw std::invalid_argument("partial split matrices have the wrong dimension");
  if (max_abs(scheme.split_a1 + scheme.split_a2 - s.drift) != 0.0)
    throw std::invalid_argument("partial split requires A1 + A2 == A exactly");
  for (std::size_t i = 0; i < s.diffusions.size(); ++i) {
    if (max_abs(commutator(scheme.split_a2, s.diffusions[i])) > kCommutatorTol)
      throw CommutatorTooLarge("partial split requires [A2, B_j] = 0");
    for (std::size_t j = i + 1; j < s.diffusions.size(); ++j)
      if (max_abs(commutator(s.diffusions[i], s.diffusions[j])) > kCommutatorTol)
        throw CommutatorTooLarge("partial split requires commuting B_j");
  }
}

}  // namespace

void MatrixSDESystem::validate() const {
  const Eigen::Index d = x0.size();
  if (d < 1) throw std::invalid_argument("system dimension must be at least 1");
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw std::invalid_argument("horizon must be positive");
  if (drift.rows() != d || drift.cols() != d) throw std::invalid_argument("drift matrix dimension mismatch");
  for (const auto& b : diffusions)
    if (b.rows() != d || b.cols() != d) throw std::invalid_argument("diffusion matrix dimension mismatch");
}

double MatrixSDESystem::max_commutator() const {
  std::vector<const ComplexMatrix*> all{&drift};
  for (const auto& b : diffusions) all.push_back(&b);
  double worst = 0.0;
  for (std::size_t i = 0; i < all.size(); ++i)
    for (std::size_t j = i + 1; j < all.size(); ++j) worst = std::max(worst, max_abs(commutator(*all[i], *all[j])));
  return worst;
}

std::string_view to_string(SchemeKind kind) noexcept {
  for (const auto& e : kSchemeNames)
    if (e.kind == kind) return e.name;
  return "unknown";
}

SchemeKind scheme_from_string(std::string_view name) {
  for (const auto& e : kSchemeNames)
    if (e.name == name) return e.kind;
  throw std::invalid_argument("unknown scheme '" + std::string(name) + "'");
}

ComplexMatrix b_flow(const ComplexMatrix& b, double dxi, double dt) {
  if (!std::isfinite(dxi)) throw std::invalid_argument("b_flow: non-finite increment");
  if (!(dt >= 0.0)) throw std::invalid_argument("b_flow: negative time step");
  return mat_exp(dxi * b - (0.5 * dt) * (b * b));
}

ComplexVector exact_commuting_flow(const MatrixSDESystem& system, std::span<const double> xi, double t) {
  system.validate();
  if (xi.size() != static_cast<std::size_t>(system.channels()))
    throw std::invalid_argument("need one xi value per channel");
  const double worst = system.max_commutator();
  if (worst > kCommutatorTol)
    throw CommutatorTooLarge("exact flow needs pairwise commuting generators (max |[X,Y]| = " +
                             std::to_string(worst) + ")");
  ComplexMatrix gen = (system.drift - 0.5 * square_sum(system)) * t;
  for (int j = 0; j < system.channels(); ++j) gen += xi[static_cast<std::size_t>(j)] * system.diffusions[static_cast<std::size_t>(j)];
  return mat_exp(gen) * system.x0;
}

Trajectory reference_flow(const MatrixSDESystem& system, const WienerLattice& lattice) {
  system.validate();
  const int level = lattice.finest_level();
  check_lattice(system, lattice.fine_steps(), lattice);
  if (system.all_commute(kCommutatorTol)) {
    const ChannelTable xi = lattice.path_values(level);
    Trajectory out;
    out.times = lattice_times(system.horizon, lattice.fine_steps());
    out.exact = true;
    out.states.reserve(out.times.size());
    std::vector<double> xk(static_cast<std::size_t>(system.channels()));
    for (std::size_t k = 0; k < out.times.size(); ++k) {
      for (int j = 0; j < system.channels(); ++j) xk[static_cast<std::size_t>(j)] = xi(j, k);
      out.states.push_back(exact_commuting_flow(system, xk, out.times[k]));
    }
    return out;
  }
  Trajectory out = euler_maruyama(system, lattice.coarsen(level));
  out.exact = false;
  return out;
}

Trajectory run_scheme(const MatrixSDESystem& system, const Scheme& scheme, std::size_t n,
                      const WienerLattice& lattice) {
  system.validate();
  check_lattice(system, n, lattice);
  const int level = dyadic_level(n);
  const ChannelTable& inc = lattice.coarsen(level);
  const double dt = inc.dt();
  const int m = system.channels();
  const Eigen::Index d = system.dim();

  switch (scheme.kind) {
    case SchemeKind::ExactCommuting: {
      const ChannelTable xi = lattice.path_values(level);
      Trajectory out;
      out.times = lattice_times(system.horizon, n);
      out.exact = true;
      std::vector<double> xk(static_cast<std::size_t>(m));
      for (std::size_t k = 0; k <= n; ++k) {
        for (int j = 0; j < m; ++j) xk[static_cast<std::size_t>(j)] = xi(j, k);
        out.states.push_back(exact_commuting_flow(system, xk, out.times[k]));
      }
      return out;
    }
    case SchemeKind::Reference: {
      Trajectory fine = reference_flow(system, lattice);
      const std::size_t stride = lattice.fine_steps() / n;
      Trajectory out;
      out.exact = fine.exact;
      for (std::size_t k = 0; k <= n; ++k) {
        out.times.push_back(fine.times[k * stride]);
        out.states.push_back(fine.states[k * stride]);
      }
      return out;
    }
    case SchemeKind::EulerMaruyama:
      return euler_maruyama(system, inc);
    case SchemeKind::TrotterPiecewise: {
      const ComplexMatrix step_a = mat_exp(dt * system.drift);
      ComplexVector tmp(d);
      return product_run(system, n, [&](std::size_t k, ComplexVector& x) {
        for (int j = 0; j < m; ++j) {
          tmp.noalias() = b_flow(system.diffusions[static_cast<std::size_t>(j)], inc(j, k), dt) * x;
          x.swap(tmp);
        }
        tmp.noalias() = step_a * x;
        x.swap(tmp);
      });
    }
    case SchemeKind::FirstOrderFactored: {
      const ComplexMatrix step_a = ComplexMatrix::Identity(d, d) + dt * system.drift;
      ComplexVector tmp(d);
      return product_run(system, n, [&](std::size_t k, ComplexVector& x) {
        for (int j = 0; j < m; ++j) {
          tmp.noalias() = system.diffusions[static_cast<std::size_t>(j)] * x;
          x += inc(j, k) * tmp;
        }
        tmp.noalias() = step_a * x;
        x.swap(tmp);
      });
    }
    case SchemeKind::PartialSplit: {
      require_commuting_inner(system, scheme);
      const ComplexMatrix step_a1 = mat_exp(dt * scheme.split_a1);
      const ComplexMatrix inner_drift = (scheme.split_a2 - 0.5 * square_sum(system)) * dt;
      ComplexVector tmp(d);
      return product_run(system, n, [&](std::size_t k, ComplexVector& x) {
        ComplexMatrix gen = inner_drift;
        for (int j = 0; j < m; ++j) gen += inc(j, k) * system.diffusions[static_cast<std::size_t>(j)];
        tmp.noalias() = mat_exp(gen) * x;
        x.noalias() = step_a1 * tmp;
      });
    }
    case SchemeKind::TrotterInterpolated: {
      // g_{n,T}(s_k + tau) = e^{tau A} prod_j B^j_{s_k, s_k + tau} f_{n,T}(s_k),
      // evaluated at every finest-lattice time.
      const Trajectory coarse = run_scheme(system, Scheme::of(SchemeKind::TrotterPiecewise), n, lattice);
      const int fine_level = lattice.finest_level();
      const ChannelTable xi = lattice.path_values(fine_level);
      const std::size_t fine = lattice.fine_steps();
      const std::size_t stride = fine / n;
      const double fine_dt = system.horizon / static_cast<double>(fine);
      Trajectory out;
      out.times = lattice_times(system.horizon, fine);
      out.states.reserve(fine + 1);
      std::vector<ComplexMatrix> partial_a(stride);
      for (std::size_t r = 0; r < stride; ++r) partial_a[r] = mat_exp(static_cast<double>(r) * fine_dt * system.drift);
      ComplexVector x(d), tmp(d);
      for (std::size_t i = 0; i <= fine; ++i) {
        const std::size_t k = i / stride;
        const std::size_t r = i % stride;
        if (r == 0) {
          out.states.push_back(coarse.states[k]);
          continue;
        }
        const double tau = static_cast<double>(r) * fine_dt;
        x = coarse.states[k];
        for (int j = 0; j < m; ++j) {
          const double dxi = xi(j, i) - xi(j, k * stride);
          tmp.noalias() = b_flow(system.diffusions[static_cast<std::size_t>(j)], dxi, tau) * x;
          x.swap(tmp);
        }
        out.states.push_back(partial_a[r] * x);
      }
      return out;
    }
  }
  throw std::invalid_argument("unhandled scheme");
}

namespace {

double sup_sq_deviation(const Trajectory& scheme, const Trajectory& ref) {
  const std::size_t stride = (ref.states.size() - 1) / (scheme.states.size() - 1);
  double sup = 0.0;
  for (std::size_t k = 0; k < scheme.states.size(); ++k)
    sup = std::max(sup, (scheme.states[k] - ref.states[k * stride]).squaredNorm());
  return sup;
}

}  // namespace

std::vector<ConvergenceReport> convergence_study(const MatrixSDESystem& system, std::string_view system_id,
                                                 std::span<const Scheme> schemes, std::span<const std::size_t> ns,
                                                 std::size_t paths, std::uint64_t seed, int finest_level,
                                                 int threads) {
  system.validate();
  if (paths == 0) throw std::invalid_argument("need at least one path");
  for (std::size_t i = 0; i < ns.size(); ++i) {
    if (dyadic_level(ns[i]) > finest_level) throw std::invalid_argument("n exceeds 2^L");
    if (i > 0 && ns[i] <= ns[i - 1]) throw std::invalid_argument("n values must be strictly increasing");
  }
  const std::size_t ns_count = ns.size();
  const std::size_t cells = schemes.size() * ns_count;
  std::vector<double> errors(paths * cells);
  std::vector<char> exact_flags(paths, 0);

  parallel_for(paths, threads, [&](std::size_t p) {
    const auto lattice = WienerLattice::generate(seed, p, system.channels(), finest_level, system.horizon);
    const Trajectory ref = reference_flow(system, lattice);
    exact_flags[p] = ref.exact ? 1 : 0;
    for (std::size_t s = 0; s < schemes.size(); ++s)
      for (std::size_t i = 0; i < ns_count; ++i)
        errors[p * cells + s * ns_count + i] = sup_sq_deviation(run_scheme(system, schemes[s], ns[i], lattice), ref);
  });

  std::vector<ConvergenceReport> reports;
  std::vector<double> column(paths);
  for (std::size_t s = 0; s < schemes.size(); ++s) {
    ConvergenceReport rep;
    rep.scheme = std::string(to_string(schemes[s].kind));
    rep.system_id = std::string(system_id);
    rep.seed = seed;
    rep.reference_exact = exact_flags[0] != 0;
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < ns_count; ++i) {
      for (std::size_t p = 0; p < paths; ++p) column[p] = errors[p * cells + s * ns_count + i];
      const McEstimate est = mean_and_stderr(column);
      rep.rows.push_back({ns[i], est.mean, est.std_error});
      xs.push_back(static_cast<double>(ns[i]));
      ys.push_back(est.mean);
    }
    bool positive = ns_count >= 2;
    for (double y : ys) positive = positive && y > 0.0;
    rep.slope = positive ? loglog_slope(xs, ys) : std::nan("");
    reports.push_back(std::move(rep));
  }
  return reports;
}

McEstimate sup_error_mc(const MatrixSDESystem& system, const Scheme& scheme, std::size_t n, std::size_t paths,
                        std::uint64_t seed, int finest_level, int threads) {
  const std::size_t ns[] = {n};
  const Scheme schemes[] = {scheme};
  const auto reports = convergence_study(system, "", schemes, ns, paths, seed, finest_level, threads);
  return {reports.front().rows.front().mse, reports.front().rows.front().std_error};
}

bool ConvergenceReport::strictly_decreasing() const {
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (!(rows[i].mse < rows[i - 1].mse)) return false;
  return true;
}

std::string convergence_csv(std::span<const ConvergenceReport> reports) {
  CsvWriter csv({"n", "mse", "stderr", "scheme", "system_id", "seed"});
  for (const auto& rep : reports)
    for (const auto& row : rep.rows)
      csv.row(row.n, row.mse, row.std_error, rep.scheme, rep.system_id, rep.seed);
  return csv.str();
}

double dissipativity_residual(const ComplexMatrix& k, std::span<const ComplexMatrix> l_list,
                              std::span<const ComplexVector> trials, double c) {
  const Eigen::Index d = k.rows();
  if (k.cols() != d) throw std::invalid_argument("K must be square");
  for (const auto& l : l_list)
    if (l.rows() != d || l.cols() != d) throw std::invalid_argument("L_j dimension mismatch");
  if (trials.empty()) throw std::invalid_argument("need at least one trial vector");
  double worst = -std::numeric_limits<double>::infinity();
  for (const auto& psi : trials) {
    if (psi.size() != d) throw std::invalid_argument("trial vector dimension mismatch");
    double r = 0.0;
    for (const auto& l : l_list) r += (l * psi).squaredNorm();
    r -= 2.0 * psi.dot(k * psi).real();  // Eigen's dot conjugates the first argument
    r -= c * psi.squaredNorm();
    worst = std::max(worst, r);
  }
  return worst;
}

double stochastic_split_counterexample(double t, std::size_t n, const WienerLattice& lattice) {
  if (t == 0.0) return 1.0;
  if (lattice.horizon() != t) throw std::invalid_argument("lattice horizon must equal t");
  const int level = dyadic_level(n);
  const ChannelTable& inc = lattice.coarsen(level);
  const double dt = inc.dt();
  const ComplexMatrix one = ComplexMatrix::Identity(1, 1);
  ComplexMatrix product = one;
  for (std::size_t k = 0; k < n; ++k) {
    const ComplexMatrix b = b_flow(one, inc(0, k), dt);
    product = b * b * product;
  }
  const double exact = std::exp(2.0 * lattice.total(0) - 2.0 * t);
  return product(0, 0).real() / exact;
}

MatrixSDESystem benchmark_noncommuting() {
  MatrixSDESystem s;
  s.drift.resize(2, 2);
  s.drift << 0.0, 1.0, -1.0, 0.0;
  ComplexMatrix b(2, 2);
  b << 1.0, 0.0, 0.0, -1.0;
  s.diffusions = {b};
  s.x0.resize(2);
  s.x0 << 1.0, 0.5;
  s.horizon = 1.0;
  return s;
}

MatrixSDESystem benchmark_commuting() {
  MatrixSDESystem s;
  s.drift = ComplexMatrix::Zero(2, 2);
  s.drift.diagonal() << 0.3, -0.2;
  ComplexMatrix b = ComplexMatrix::Zero(2, 2);
  b.diagonal() << 0.5, 1.0;
  s.diffusions = {b};
  s.x0.resize(2);
  s.x0 << 1.0, 0.5;
  s.horizon = 1.0;
  return s;
}

PartialSplitBenchmark benchmark_partial_split() {
  PartialSplitBenchmark out;
  out.a1.resize(2, 2);
  out.a1 << 0.0, 1.0, -1.0, 0.0;
  out.a2 = ComplexMatrix::Zero(2, 2);
  out.a2.diagonal() << 0.5, -0.25;
  out.system = benchmark_noncommuting();
  out.system.drift = out.a1 + out.a2;
  return out;
}

}  // namespace stochsplit
