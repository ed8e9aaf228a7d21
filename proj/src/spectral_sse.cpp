#include "stochsplit/spectral_sse.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "stochsplit/parallel.hpp"
#include "stochsplit/report.hpp"

namespace stochsplit {

namespace {

constexpr double kExponentGuard = 700.0;

double weighted_norm2(std::span<const cplx> psi, double dx) {
  std::vector<double> a(psi.size());
  for (std::size_t k = 0; k < psi.size(); ++k) a[k] = std::norm(psi[k]);
  return pairwise_sum(a) * dx;
}

std::vector<cplx> free_multiplier(const SpatialGrid& grid, double dt) {
  std::vector<cplx> m(grid.size());
  const auto kappa = grid.kappa();
  for (std::size_t k = 0; k < m.size(); ++k) m[k] = std::polar(1.0, -0.5 * kappa[k] * kappa[k] * dt);
  return m;
}

void apply_free(const SpatialGrid& grid, std::span<const cplx> multiplier, std::vector<cplx>& psi) {
  grid.fft().forward(psi);
  for (std::size_t k = 0; k < psi.size(); ++k) {
    const double re = psi[k].real(), im = psi[k].imag();
    const double mr = multiplier[k].real(), mi = multiplier[k].imag();
    psi[k] = {re * mr - im * mi, re * mi + im * mr};
  }
  grid.fft().inverse(psi);
}

// psi <- (1/2) kappa^2-multiplied copy, i.e. H psi.
std::vector<cplx> apply_h(const GridState& state) {
  std::vector<cplx> out = state.psi;
  const auto kappa = state.grid->kappa();
  state.grid->fft().forward(out);
  for (std::size_t k = 0; k < out.size(); ++k) out[k] *= 0.5 * kappa[k] * kappa[k];
  state.grid->fft().inverse(out);
  return out;
}

void require_grid(const GridState& s) {
  if (!s.grid) throw std::invalid_argument("state has no grid");
  if (s.psi.size() != s.grid->size()) throw std::invalid_argument("state size does not match its grid");
}

void check_lattice(const WienerLattice& lattice, std::size_t n, const SseParams& params) {
  params.validate();
  if (lattice.channels() != static_cast<int>(params.lambdas.size()))
    throw std::invalid_argument("lattice channel count must equal the number of lambdas");
  const int level = dyadic_level(n);
  if (level > lattice.finest_level()) throw std::invalid_argument("n exceeds the lattice resolution");
}

}  // namespace

SpatialGrid::SpatialGrid(double half_width, std::size_t points)
    : half_width_(half_width), dx_(0.0), plan_(points < 2 ? 2 : points) {
  if (!(half_width > 0.0) || !std::isfinite(half_width)) throw std::invalid_argument("grid half-width must be > 0");
  if (points < 2 || !std::has_single_bit(points)) throw std::invalid_argument("grid size must be a power of two >= 2");
  dx_ = 2.0 * half_width / static_cast<double>(points);
  x_.resize(points);
  kappa_.resize(points);
  const double dk = 2.0 * std::numbers::pi / (2.0 * half_width);
  const auto n = static_cast<std::ptrdiff_t>(points);
  for (std::ptrdiff_t k = 0; k < n; ++k) {
    x_[static_cast<std::size_t>(k)] = -half_width + static_cast<double>(k) * dx_;
    const std::ptrdiff_t m = k < n / 2 ? k : k - n;
    kappa_[static_cast<std::size_t>(k)] = dk * static_cast<double>(m);
  }
}

std::size_t SpatialGrid::node_index(double position) const {
  const double r = std::round((position + half_width_) / dx_);
  if (r < 0.0 || r >= static_cast<double>(size())) throw std::invalid_argument("position outside the grid");
  const auto k = static_cast<std::size_t>(r);
  if (std::abs(x_[k] - position) > 1e-9 * dx_) throw std::invalid_argument("position is not a grid node");
  return k;
}

GridPtr make_grid(double half_width, std::size_t points) {
  return std::make_shared<const SpatialGrid>(half_width, points);
}

double GridState::norm2() const {
  require_grid(*this);
  return weighted_norm2(psi, grid->dx());
}

GridState zero_state(const GridPtr& grid) {
  if (!grid) throw std::invalid_argument("null grid");
  return GridState{grid, std::vector<cplx>(grid->size())};
}

GridState gaussian_packet(const GridPtr& grid, double x0, double p0, double sigma) {
  if (!grid) throw std::invalid_argument("null grid");
  if (!(sigma > 0.0) || !std::isfinite(x0) || !std::isfinite(p0))
    throw std::invalid_argument("gaussian_packet: sigma must be > 0 and x0, p0 finite");
  const double lx = grid->half_width();
  const double outside = 0.5 * std::erfc((lx - x0) / (sigma * std::numbers::sqrt2)) +
                         0.5 * std::erfc((lx + x0) / (sigma * std::numbers::sqrt2));
  if (outside >= 1e-12) throw std::invalid_argument("gaussian_packet: packet does not fit the grid");
  GridState s = zero_state(grid);
  const auto x = grid->x();
  for (std::size_t k = 0; k < s.psi.size(); ++k) {
    const double d = x[k] - x0;
    s.psi[k] = std::polar(std::exp(-d * d / (4.0 * sigma * sigma)), p0 * x[k]);
  }
  const double scale = 1.0 / std::sqrt(s.norm2());
  for (auto& v : s.psi) v *= scale;
  if (tail_mass_fraction(s) > kTailMassLimit) throw std::invalid_argument("gaussian_packet: tail mass guard");
  return s;
}

double tail_mass_fraction(const GridState& state) {
  require_grid(state);
  const auto x = state.grid->x();
  const double edge = 0.9 * state.grid->half_width();
  std::vector<double> tail(state.psi.size(), 0.0);
  for (std::size_t k = 0; k < tail.size(); ++k)
    if (std::abs(x[k]) > edge) tail[k] = std::norm(state.psi[k]);
  const double total = state.norm2();
  if (total == 0.0) return 0.0;
  return pairwise_sum(tail) * state.grid->dx() / total;
}

void free_propagate_in_place(GridState& state, double dt) {
  require_grid(state);
  if (dt == 0.0) return;
  const auto m = free_multiplier(*state.grid, dt);
  apply_free(*state.grid, m, state.psi);
}

GridState free_propagate(const GridState& state, double dt) {
  GridState out = state;
  free_propagate_in_place(out, dt);
  return out;
}

void collapse_flow_in_place(GridState& state, std::span<const double> dxi, double dt, double c) {
  require_grid(state);
  if (!(dt >= 0.0)) throw std::invalid_argument("collapse_flow: dt must be >= 0");
  double s = 0.0;
  for (double v : dxi) {
    if (!std::isfinite(v)) throw std::invalid_argument("collapse_flow: non-finite increment");
    s += v;
  }
  const double q = (1.0 + c) * dt;
  if (s == 0.0 && q == 0.0) return;
  if (std::abs(s) * state.grid->half_width() > kExponentGuard)
    throw std::overflow_error("collapse_flow: |x dxi| exceeds 700");
  const auto x = state.grid->x();
  for (std::size_t k = 0; k < state.psi.size(); ++k) state.psi[k] *= std::exp(x[k] * s - q * x[k] * x[k]);
}

GridState collapse_flow(const GridState& state, std::span<const double> dxi, double dt, double c) {
  GridState out = state;
  collapse_flow_in_place(out, dxi, dt, c);
  return out;
}

double SseParams::total_lambda() const {
  double s = 0.0;
  for (double l : lambdas) s += l;
  return s;
}

void SseParams::validate() const {
  if (lambdas.empty()) throw std::invalid_argument("at least one collapse channel is required");
  for (double l : lambdas)
    if (!(l >= 0.0) || !std::isfinite(l)) throw std::invalid_argument("lambda must be finite and >= 0");
  if (!std::isfinite(c)) throw std::invalid_argument("c must be finite");
}

GridState product_formula_evolve(const GridState& psi0, const WienerLattice& lattice, std::size_t n,
                                 const SseParams& params, FactorOrder order, const StepObserver& observer) {
  require_grid(psi0);
  check_lattice(lattice, n, params);
  const auto& inc = lattice.coarsen(dyadic_level(n));
  const double dt = lattice.horizon() / static_cast<double>(n);
  const double dt_scaled = params.total_lambda() * dt;
  const auto m = free_multiplier(*psi0.grid, dt);
  std::vector<double> sqrt_l(params.lambdas.size());
  for (std::size_t j = 0; j < sqrt_l.size(); ++j) sqrt_l[j] = std::sqrt(params.lambdas[j]);
  std::vector<double> dxi(sqrt_l.size());

  GridState psi = psi0;
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t j = 0; j < dxi.size(); ++j) dxi[j] = sqrt_l[j] * inc(static_cast<int>(j), k);
    if (order == FactorOrder::FreeThenCollapse && params.include_h) apply_free(*psi.grid, m, psi.psi);
    collapse_flow_in_place(psi, dxi, dt_scaled, params.c);
    if (order == FactorOrder::CollapseThenFree && params.include_h) apply_free(*psi.grid, m, psi.psi);
    if (observer) observer(k + 1, lattice.horizon() * static_cast<double>(k + 1) / static_cast<double>(n), psi);
  }
  return psi;
}

namespace {

std::vector<GridState> collect_run(const GridState& psi0, const WienerLattice& lattice, std::size_t n,
                                   const SseParams& params, FactorOrder order) {
  std::vector<GridState> out;
  out.reserve(n + 1);
  out.push_back(psi0);
  product_formula_evolve(psi0, lattice, n, params, order,
                         [&](std::size_t, double, const GridState& s) { out.push_back(s); });
  return out;
}

}  // namespace

std::vector<GridState> product_formula_run(const GridState& psi0, const WienerLattice& lattice, std::size_t n,
                                           const SseParams& params) {
  return collect_run(psi0, lattice, n, params, FactorOrder::CollapseThenFree);
}

std::vector<GridState> reversed_order_run(const GridState& psi0, const WienerLattice& lattice, std::size_t n,
                                          const SseParams& params) {
  return collect_run(psi0, lattice, n, params, FactorOrder::FreeThenCollapse);
}

GridState collapse_closed_form(const GridState& psi0, std::span<const double> xi, double t,
                               std::span<const double> lambdas) {
  require_grid(psi0);
  if (xi.size() != lambdas.size()) throw std::invalid_argument("one xi value per channel required");
  double s = 0.0, l = 0.0;
  for (std::size_t j = 0; j < xi.size(); ++j) {
    s += std::sqrt(lambdas[j]) * xi[j];
    l += lambdas[j];
  }
  GridState out = psi0;
  const auto x = psi0.grid->x();
  for (std::size_t k = 0; k < out.psi.size(); ++k) out.psi[k] *= std::exp(s * x[k] - l * t * x[k] * x[k]);
  return out;
}

double conservativity_residual_grid(const GridState& state, double lambda) {
  require_grid(state);
  const auto x = state.grid->x();
  const auto hpsi = apply_h(state);
  std::vector<double> a2(state.psi.size()), re_k(state.psi.size());
  for (std::size_t k = 0; k < a2.size(); ++k) {
    a2[k] = lambda * x[k] * x[k] * std::norm(state.psi[k]);
    const cplx kpsi = cplx(0.0, 1.0) * hpsi[k] + 0.5 * lambda * x[k] * x[k] * state.psi[k];
    re_k[k] = (kpsi * std::conj(state.psi[k])).real();
  }
  const double dx = state.grid->dx();
  return pairwise_sum(a2) * dx - 2.0 * pairwise_sum(re_k) * dx;
}

double reference_operator_energy(const GridState& state) {
  require_grid(state);
  const auto x = state.grid->x();
  std::vector<cplx> npsi = apply_h(state);
  for (std::size_t k = 0; k < npsi.size(); ++k) npsi[k] += (x[k] * x[k] - 1.0) * state.psi[k];
  return weighted_norm2(npsi, state.grid->dx());
}

Observables observables(const GridState& state) {
  require_grid(state);
  const auto x = state.grid->x();
  std::vector<double> rho(state.psi.size()), m1(rho.size());
  for (std::size_t k = 0; k < rho.size(); ++k) {
    rho[k] = std::norm(state.psi[k]);
    m1[k] = rho[k] * x[k];
  }
  const double total = pairwise_sum(rho);
  if (!(total > 0.0)) throw std::domain_error("observables: zero norm");
  const double mean = pairwise_sum(m1) / total;
  for (std::size_t k = 0; k < rho.size(); ++k) m1[k] = rho[k] * (x[k] - mean) * (x[k] - mean);
  return Observables{mean, pairwise_sum(m1) / total, total * state.grid->dx()};
}

std::vector<unsigned char> dump_amplitudes_le(const GridState& state) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  std::vector<unsigned char> out(state.psi.size() * 2 * sizeof(double));
  std::memcpy(out.data(), state.psi.data(), out.size());
  return out;
}

McEstimate flow_norm_study(const GridState& psi0, double c, double t, std::size_t paths, std::uint64_t seed,
                           int threads) {
  require_grid(psi0);
  if (!(t > 0.0)) throw std::invalid_argument("flow_norm_study: t must be > 0");
  if (paths == 0) throw std::invalid_argument("flow_norm_study: need at least one path");
  const double lx = psi0.grid->half_width();
  if (c < 0.0 && t * lx * lx > 600.0) throw std::invalid_argument("flow_norm_study: c < 0 requires t Lx^2 <= 600");
  std::vector<double> values(paths);
  parallel_for(paths, threads, [&](std::size_t p) {
    const auto lattice = WienerLattice::generate(seed, p, 1, 0, t);
    const double dxi[] = {lattice.total(0)};
    values[p] = collapse_flow(psi0, dxi, t, c).norm2();
  });
  return mean_and_stderr(values);
}

namespace {

std::size_t max_n(std::span<const std::size_t> ns) {
  if (ns.empty()) throw std::invalid_argument("empty n list");
  std::size_t m = 0;
  for (auto n : ns) {
    dyadic_level(n);
    m = std::max(m, n);
  }
  return m;
}

}  // namespace

std::vector<MartingaleRow> martingale_study(const GridState& psi0, double horizon, const SseParams& params,
                                            std::span<const std::size_t> ns, std::size_t paths,
                                            std::uint64_t seed, int threads) {
  params.validate();
  const int level = dyadic_level(max_n(ns));
  std::vector<std::vector<double>> values(ns.size(), std::vector<double>(paths));
  parallel_for(paths, threads, [&](std::size_t p) {
    const auto lattice = WienerLattice::generate(seed, p, static_cast<int>(params.lambdas.size()), level, horizon);
    for (std::size_t i = 0; i < ns.size(); ++i)
      values[i][p] = product_formula_evolve(psi0, lattice, ns[i], params).norm2();
  });
  std::vector<MartingaleRow> rows;
  for (std::size_t i = 0; i < ns.size(); ++i) rows.push_back({ns[i], mean_and_stderr(values[i]), std::move(values[i])});
  return rows;
}

std::vector<OrderingRow> ordering_study(const GridState& psi0, double horizon, const SseParams& params,
                                        std::span<const std::size_t> ns, std::size_t paths, std::uint64_t seed,
                                        int threads) {
  params.validate();
  const int level = dyadic_level(max_n(ns));
  const double dx = psi0.grid->dx();
  std::vector<std::vector<double>> values(ns.size(), std::vector<double>(paths));
  parallel_for(paths, threads, [&](std::size_t p) {
    const auto lattice = WienerLattice::generate(seed, p, static_cast<int>(params.lambdas.size()), level, horizon);
    for (std::size_t i = 0; i < ns.size(); ++i) {
      const auto a = product_formula_evolve(psi0, lattice, ns[i], params, FactorOrder::CollapseThenFree);
      const auto b = product_formula_evolve(psi0, lattice, ns[i], params, FactorOrder::FreeThenCollapse);
      std::vector<cplx> d(a.psi.size());
      for (std::size_t k = 0; k < d.size(); ++k) d[k] = a.psi[k] - b.psi[k];
      values[i][p] = weighted_norm2(d, dx);
    }
  });
  std::vector<OrderingRow> rows;
  for (std::size_t i = 0; i < ns.size(); ++i) rows.push_back({ns[i], mean_and_stderr(values[i])});
  return rows;
}

std::string trajectory_csv(std::span<const double> times, std::span<const GridState> states) {
  if (times.size() != states.size()) throw std::invalid_argument("trajectory_csv: size mismatch");
  CsvWriter csv({"t", "norm2", "mean_x", "var_x"});
  for (std::size_t i = 0; i < states.size(); ++i) {
    const auto o = observables(states[i]);
    csv.row(times[i], o.norm2, o.mean_x, o.var_x);
  }
  return csv.str();
}

}  // namespace stochsplit
