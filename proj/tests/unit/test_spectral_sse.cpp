#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <numbers>
#include <random>

#include "stochsplit/numerics.hpp"
#include "stochsplit/spectral_sse.hpp"

using namespace stochsplit;

namespace {

GridState random_state(const GridPtr& grid, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  GridState s = zero_state(grid);
  for (auto& v : s.psi) v = cplx(g(rng), g(rng));
  const double scale = 1.0 / std::sqrt(s.norm2());
  for (auto& v : s.psi) v *= scale;
  return s;
}

double max_diff(const GridState& a, const GridState& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.psi.size(); ++k) m = std::max(m, std::abs(a.psi[k] - b.psi[k]));
  return m;
}

double max_amp(const GridState& a) {
  double m = 0.0;
  for (auto v : a.psi) m = std::max(m, std::abs(v));
  return m;
}

// Harmonic eigenfunctions of x^2 - 1/2 d^2/dx^2 = 1/2 (-d^2/dx^2 + w^2 x^2), w = sqrt 2.
GridState oscillator_state(const GridPtr& grid, int level) {
  const double w = std::numbers::sqrt2;
  GridState s = zero_state(grid);
  const auto x = grid->x();
  for (std::size_t k = 0; k < s.psi.size(); ++k) {
    const double g = std::pow(w / std::numbers::pi, 0.25) * std::exp(-w * x[k] * x[k] / 2.0);
    s.psi[k] = level == 0 ? g : std::sqrt(2.0 * w) * x[k] * g;
  }
  return s;
}

}  // namespace

TEST_CASE("spatial grid layout") {
  const auto grid = make_grid(10.0, 512);
  CHECK(grid->dx() * 512 == Catch::Approx(20.0).epsilon(1e-15));
  CHECK(grid->x()[0] == -10.0);
  CHECK(grid->x()[256] == 0.0);
  const double dk = std::numbers::pi / 10.0;
  CHECK(grid->kappa()[1] == Catch::Approx(dk));
  CHECK(grid->kappa()[511] == Catch::Approx(-dk));
  CHECK(grid->kappa()[256] == Catch::Approx(-256 * dk));
  const auto lattice_grid = make_grid(8.0, 256);
  CHECK(lattice_grid->node_index(1.0) == 144);
  CHECK(lattice_grid->node_index(-8.0) == 0);
  CHECK_THROWS_AS(lattice_grid->node_index(0.01), std::invalid_argument);
  CHECK_THROWS_AS(lattice_grid->node_index(8.0), std::invalid_argument);
  CHECK_THROWS_AS(make_grid(10.0, 500), std::invalid_argument);
  CHECK_THROWS_AS(make_grid(-1.0, 512), std::invalid_argument);
}

TEST_CASE("gaussian packet") {
  const auto grid = make_grid(10.0, 512);
  const auto s = gaussian_packet(grid, 1.0, 0.5, 0.7);
  CHECK(std::abs(s.norm2() - 1.0) <= 1e-12);
  const auto o = observables(s);
  CHECK(std::abs(o.mean_x - 1.0) <= 1e-8);
  // Oracle: direct quadrature of (x - x0)^2 |psi|^2 on the constructed state.
  std::vector<double> second(grid->size());
  for (std::size_t k = 0; k < second.size(); ++k)
    second[k] = (grid->x()[k] - 1.0) * (grid->x()[k] - 1.0) * std::norm(s.psi[k]);
  CHECK(std::abs(quad_trapezoid(second, grid->dx()) - o.var_x) <= 1e-10);
  CHECK(std::abs(o.var_x - 0.49) <= 1e-8);
  CHECK(std::abs(observables(gaussian_packet(grid, 0.0, 0.0, 1.0)).mean_x) <= 1e-12);
  CHECK_THROWS_AS(gaussian_packet(grid, 9.0, 0.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(gaussian_packet(grid, 0.0, 0.0, 3.0), std::invalid_argument);
  CHECK_THROWS_AS(gaussian_packet(grid, 0.0, 0.0, 0.0), std::invalid_argument);
  CHECK(tail_mass_fraction(s) <= kTailMassLimit);
}

TEST_CASE("free propagation is unitary and composes") {
  const auto grid = make_grid(10.0, 512);
  const auto s = random_state(grid, 4);
  CHECK(max_diff(free_propagate(s, 0.0), s) == 0.0);
  CHECK(std::abs(free_propagate(s, 0.37).norm2() - s.norm2()) <= 1e-12 * s.norm2());
  const auto two = free_propagate(free_propagate(s, 0.2), 0.3);
  const auto one = free_propagate(s, 0.5);
  CHECK(max_diff(two, one) <= 1e-12 * max_amp(s) * 10.0);
  const auto back = free_propagate(one, -0.5);
  CHECK(max_diff(back, s) <= 1e-12 * max_amp(s) * 10.0);
}

TEST_CASE("free Gaussian spreading matches the closed form") {
  const auto grid = make_grid(10.0, 512);
  for (double sigma : {0.5, 1.0}) {
    const auto s = gaussian_packet(grid, 0.0, 0.0, sigma);
    const double v0 = observables(s).var_x;
    const double momentum_var = 1.0 / (4.0 * sigma * sigma);
    const double want = v0 + 0.25 * momentum_var;
    CHECK(std::abs(observables(free_propagate(s, 0.5)).var_x - want) <= 1e-6 * want);
  }
  const auto moving = gaussian_packet(grid, -1.0, 2.0, 0.8);
  CHECK(std::abs(observables(free_propagate(moving, 0.5)).mean_x - 0.0) <= 1e-8);
}

TEST_CASE("collapse flow") {
  const auto grid = make_grid(10.0, 512);
  const auto s = gaussian_packet(grid, 0.3, 0.0, 1.0);
  const double zero[] = {0.0};
  CHECK(max_diff(collapse_flow(s, zero, 0.0, 0.0), s) == 0.0);
  const double dxi[] = {0.4, -0.1};
  const auto out = collapse_flow(s, dxi, 0.2, 0.5);
  for (std::size_t k = 0; k < s.psi.size(); k += 37) {
    const double x = grid->x()[k];
    CHECK(std::abs(out.psi[k] - s.psi[k] * std::exp(0.3 * x - 1.5 * 0.2 * x * x)) <= 1e-15);
  }
  const double big[] = {71.0};
  CHECK_THROWS_AS(collapse_flow(s, big, 0.1, 0.0), std::overflow_error);
  CHECK_THROWS_AS(collapse_flow(s, zero, -0.1, 0.0), std::invalid_argument);
}

TEST_CASE("mean-square contract of the stochastic part") {
  // g = indicator of [0, 1] on a grid with nodes at 0 and 1.
  const auto grid = make_grid(2.0, 4096);
  GridState g = zero_state(grid);
  for (std::size_t k = 0; k < g.psi.size(); ++k)
    if (grid->x()[k] >= 0.0 && grid->x()[k] <= 1.0) g.psi[k] = 1.0;
  const auto growth = flow_norm_study(g, -0.5, 1.0, 10000, 31);
  // Oracle: series for the integral of e^{x^2} over [0, 1].
  double series = 0.0, fact = 1.0;
  for (int k = 0; k < 30; ++k) {
    if (k > 0) fact *= k;
    series += 1.0 / (fact * (2 * k + 1));
  }
  CHECK(std::abs(series - 1.4626517459071816) < 1e-14);
  CHECK(std::abs(growth.mean - series) <= 3.0 * growth.std_error);

  const auto wide = make_grid(10.0, 512);
  const auto psi = gaussian_packet(wide, 0.5, 0.0, 0.8);
  const auto cons = flow_norm_study(psi, 0.0, 1.0, 10000, 32);
  CHECK(std::abs(cons.mean - 1.0) <= 3.0 * cons.std_error);
  const auto contr = flow_norm_study(psi, 1.0, 1.0, 10000, 33);
  CHECK(contr.mean <= 1.0 + 3.0 * contr.std_error);
  CHECK(contr.mean < 1.0);
  // c = -1/2 on a packet: growth is the integral of e^{t x^2} |psi0|^2.
  std::vector<double> weighted(wide->size());
  for (std::size_t k = 0; k < weighted.size(); ++k)
    weighted[k] = std::exp(0.5 * wide->x()[k] * wide->x()[k]) * std::norm(psi.psi[k]);
  const auto raw = flow_norm_study(psi, -0.5, 0.5, 10000, 34);
  CHECK(std::abs(raw.mean - quad_trapezoid(weighted, wide->dx())) <= 3.0 * raw.std_error);
  CHECK_THROWS_AS(flow_norm_study(psi, -0.5, 7.0, 10, 1), std::invalid_argument);
}

TEST_CASE("without H the product formula is the closed form") {
  const auto grid = make_grid(10.0, 512);
  const auto psi0 = gaussian_packet(grid, 0.2, 1.0, 1.0);
  SseParams params;
  params.include_h = false;
  params.lambdas = {1.0, 0.5};
  for (std::size_t p = 0; p < 5; ++p) {
    const auto lattice = WienerLattice::generate(12, p, 2, 6, 0.5);
    const double xi[] = {lattice.total(0), lattice.total(1)};
    const auto want = collapse_closed_form(psi0, xi, 0.5, params.lambdas);
    for (std::size_t n : {1u, 4u, 64u}) {
      const auto run = product_formula_run(psi0, lattice, n, params);
      REQUIRE(run.size() == n + 1);
      CHECK(max_diff(run.back(), want) <= 1e-10 * max_amp(want));
      CHECK(max_diff(reversed_order_run(psi0, lattice, n, params).back(), run.back()) <= 1e-12 * max_amp(want));
    }
  }
}

TEST_CASE("lambda = 0 reduces to free evolution") {
  const auto grid = make_grid(10.0, 512);
  const auto psi0 = gaussian_packet(grid, 0.0, 1.0, 0.6);
  SseParams params;
  params.lambdas = {0.0};
  const auto lattice = WienerLattice::generate(2, 0, 1, 4, 1.0);
  const auto run = product_formula_run(psi0, lattice, 16, params);
  for (const auto& s : run) CHECK(std::abs(s.norm2() - 1.0) <= 1e-12);
  CHECK(max_diff(run.back(), free_propagate(psi0, 1.0)) <= 1e-12);
  CHECK(max_diff(reversed_order_run(psi0, lattice, 16, params).back(), run.back()) <= 1e-13);
}

TEST_CASE("product formula preconditions") {
  const auto grid = make_grid(10.0, 512);
  const auto psi0 = gaussian_packet(grid, 0.0, 0.0, 1.0);
  const auto lattice = WienerLattice::generate(2, 0, 1, 4, 1.0);
  SseParams params;
  CHECK_THROWS_AS(product_formula_run(psi0, lattice, 32, params), std::invalid_argument);
  CHECK_THROWS_AS(product_formula_run(psi0, lattice, 3, params), std::invalid_argument);
  params.lambdas = {1.0, 1.0};
  CHECK_THROWS_AS(product_formula_run(psi0, lattice, 4, params), std::invalid_argument);
  params.lambdas = {-1.0};
  CHECK_THROWS_AS(product_formula_run(psi0, lattice, 4, params), std::invalid_argument);
}

TEST_CASE("martingale study and worker independence") {
  const auto grid = make_grid(10.0, 256);
  const auto psi0 = gaussian_packet(grid, 0.0, 0.0, 0.5);
  SseParams params;
  const std::size_t ns[] = {8, 32};
  const auto rows = martingale_study(psi0, 0.5, params, ns, 400, 5, 1);
  for (const auto& r : rows) CHECK(std::abs(r.bias()) <= 4.0 * r.norm2.std_error);
  const auto again = martingale_study(psi0, 0.5, params, ns, 400, 5, 3);
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(rows[i].norm2.mean == again[i].norm2.mean);
}

TEST_CASE("ordering distance shrinks with n") {
  const auto grid = make_grid(10.0, 256);
  const auto psi0 = gaussian_packet(grid, 0.0, 0.0, 0.5);
  SseParams params;
  const std::size_t ns[] = {16, 64};
  const auto rows = ordering_study(psi0, 0.5, params, ns, 100, 8);
  CHECK(rows[1].distance2.mean < rows[0].distance2.mean);
}

TEST_CASE("grid refinement leaves the ensemble mean position unchanged") {
  SseParams params;
  const auto coarse = make_grid(10.0, 256);
  const auto fine = make_grid(10.0, 512);
  const auto a0 = gaussian_packet(coarse, 0.3, 0.0, 0.6);
  const auto b0 = gaussian_packet(fine, 0.3, 0.0, 0.6);
  std::vector<double> da, mean_a;
  for (std::size_t p = 0; p < 100; ++p) {
    const auto lattice = WienerLattice::generate(44, p, 1, 5, 0.5);
    const double ma = observables(product_formula_evolve(a0, lattice, 32, params)).mean_x;
    const double mb = observables(product_formula_evolve(b0, lattice, 32, params)).mean_x;
    da.push_back(ma - mb);
    mean_a.push_back(ma);
  }
  CHECK(std::abs(mean_and_stderr(da).mean) < mean_and_stderr(mean_a).std_error);
}

TEST_CASE("conservativity residual vanishes") {
  const auto grid = make_grid(10.0, 512);
  auto bound = [](const GridState& s) {
    std::vector<double> a(s.psi.size());
    for (std::size_t k = 0; k < a.size(); ++k) a[k] = s.grid->x()[k] * s.grid->x()[k] * std::norm(s.psi[k]);
    return 1e-10 * pairwise_sum(a) * s.grid->dx();
  };
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto s = random_state(grid, seed);
    CHECK(std::abs(conservativity_residual_grid(s)) <= bound(s));
  }
  GridState flat = zero_state(grid);
  for (auto& v : flat.psi) v = 1.0;
  CHECK(std::abs(conservativity_residual_grid(flat)) <= bound(flat));
  const auto g = gaussian_packet(grid, 1.0, 2.0, 0.7);
  CHECK(std::abs(conservativity_residual_grid(g)) <= bound(g));
}

TEST_CASE("reference operator energy") {
  const auto grid = make_grid(10.0, 512);
  CHECK(reference_operator_energy(zero_state(grid)) == 0.0);
  // x^2 - 1/2 d^2/dx^2 has eigenvalues (j + 1/2) sqrt 2, so N = that - 1 acts
  // on the j-th eigenfunction as multiplication by (j + 1/2) sqrt 2 - 1.
  const double e0 = std::numbers::sqrt2 / 2.0 - 1.0;
  const double e1 = 1.5 * std::numbers::sqrt2 - 1.0;
  const auto g0 = oscillator_state(grid, 0);
  const auto g1 = oscillator_state(grid, 1);
  CHECK(std::abs(g0.norm2() - 1.0) <= 1e-12);
  CHECK(std::abs(g1.norm2() - 1.0) <= 1e-12);
  CHECK(std::abs(reference_operator_energy(g0) - e0 * e0) <= 1e-8);
  CHECK(std::abs(reference_operator_energy(g1) - e1 * e1) <= 1e-8);

  const auto psi0 = gaussian_packet(grid, 0.0, 0.0, 0.5);
  SseParams params;
  const auto lattice = WienerLattice::generate(3, 0, 1, 6, 0.5);
  product_formula_evolve(psi0, lattice, 64, params, FactorOrder::CollapseThenFree,
                         [](std::size_t, double, const GridState& s) {
                           const double e = reference_operator_energy(s);
                           CHECK(std::isfinite(e));
                           CHECK(e >= 0.0);
                         });
}

TEST_CASE("observables") {
  const auto grid = make_grid(8.0, 256);
  GridState two = zero_state(grid);
  two.psi[grid->node_index(1.5)] = 1.0;
  two.psi[grid->node_index(-1.5)] = cplx(0.0, 1.0);
  const auto o = observables(two);
  CHECK(std::abs(o.mean_x) <= 1e-15);
  CHECK(std::abs(o.var_x - 2.25) <= 1e-14);
  CHECK(std::abs(o.norm2 - 2.0 * grid->dx()) <= 1e-15);
  CHECK_THROWS_AS(observables(zero_state(grid)), std::domain_error);
}

TEST_CASE("trajectory csv and amplitude dump") {
  const auto grid = make_grid(10.0, 64);
  const auto psi0 = gaussian_packet(grid, 0.0, 0.0, 1.0);
  const GridState states[] = {psi0, free_propagate(psi0, 0.1)};
  const double times[] = {0.0, 0.1};
  const auto csv = trajectory_csv(times, states);
  CHECK(csv.rfind("t,norm2,mean_x,var_x\n0,", 0) == 0);
  const auto bytes = dump_amplitudes_le(psi0);
  CHECK(bytes.size() == 64 * 16);
  double re = 0.0;
  std::memcpy(&re, bytes.data() + 32 * 16, sizeof re);
  CHECK(re == psi0.psi[32].real());
}
