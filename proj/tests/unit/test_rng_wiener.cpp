#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <vector>

#include "stochsplit/rng.hpp"
#include "stochsplit/wiener.hpp"

using namespace stochsplit;

TEST_CASE("philox4x32-10 matches Random123 known-answer vectors") {
  const auto zero = philox4x32_10({0u, 0u, 0u, 0u}, {0u, 0u});
  CHECK(zero == PhiloxCounter{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
  const auto ones = philox4x32_10({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu});
  CHECK(ones == PhiloxCounter{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
  const auto pi = philox4x32_10({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u});
  CHECK(pi == PhiloxCounter{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("uniform conversions stay inside their intervals") {
  CHECK(uniform_open_closed(0u, 0u) > 0.0);
  CHECK(uniform_open_closed(0xffffffffu, 0xffffffffu) == 1.0);
  CHECK(uniform_closed_open(0u, 0u) == 0.0);
  CHECK(uniform_closed_open(0xffffffffu, 0xffffffffu) < 1.0);
}

TEST_CASE("generate is deterministic in all arguments") {
  const auto a = WienerLattice::generate(7, 0, 1, 3, 1.0);
  const auto b = WienerLattice::generate(7, 0, 1, 3, 1.0);
  REQUIRE(a.fine_increments(0).size() == 8);
  for (std::size_t k = 0; k < 8; ++k) CHECK(a.fine_increments(0)[k] == b.fine_increments(0)[k]);

  // Channel streams are keyed independently: generating more channels does
  // not perturb channel 0.
  const auto wide = WienerLattice::generate(7, 0, 3, 3, 1.0);
  for (std::size_t k = 0; k < 8; ++k) CHECK(wide.fine_increments(0)[k] == a.fine_increments(0)[k]);

  const auto other_path = WienerLattice::generate(7, 1, 1, 3, 1.0);
  CHECK(other_path.fine_increments(0)[0] != a.fine_increments(0)[0]);
  const auto other_seed = WienerLattice::generate(8, 0, 1, 3, 1.0);
  CHECK(other_seed.fine_increments(0)[0] != a.fine_increments(0)[0]);
}

TEST_CASE("generate rejects bad arguments") {
  CHECK_THROWS_AS(WienerLattice::generate(1, 0, 1, 27, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(WienerLattice::generate(1, 0, 1, 3, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(WienerLattice::generate(1, 0, 1, 3, -1.0), std::invalid_argument);
  CHECK_THROWS_AS(WienerLattice::generate(1, 0, 0, 3, 1.0), std::invalid_argument);
}

TEST_CASE("fine increments have variance T/2^L") {
  // Pooled over 1e5 paths at L = 6; the tolerance is three standard errors of
  // the variance estimator, sqrt((m4 - s^4)/N), which for Gaussian data is
  // the chi-square sampling spread sqrt(2/N) s^2.
  const std::size_t paths = 100000;
  std::vector<double> pooled;
  pooled.reserve(paths * 64);
  for (std::size_t p = 0; p < paths; ++p) {
    const auto lat = WienerLattice::generate(2024, p, 1, 6, 1.0);
    for (double v : lat.fine_increments(0)) pooled.push_back(v);
  }
  const auto var = variance_and_stderr(pooled);
  CHECK(std::abs(var.mean - 1.0 / 64.0) <= 3.0 * var.std_error);
  const auto mean = mean_and_stderr(pooled);
  CHECK(std::abs(mean.mean) <= 3.0 * mean.std_error);
}

TEST_CASE("channels are uncorrelated") {
  const std::size_t paths = 100000;
  std::vector<double> products;
  products.reserve(paths * 4);
  for (std::size_t p = 0; p < paths; ++p) {
    const auto lat = WienerLattice::generate(99, p, 2, 2, 1.0);
    for (std::size_t k = 0; k < 4; ++k)
      products.push_back(lat.fine_increments(0)[k] * lat.fine_increments(1)[k] * 4.0 * 4.0);
  }
  const auto corr = mean_and_stderr(products);
  CHECK(std::abs(corr.mean) <= 3.0 * corr.std_error);
}

TEST_CASE("coarsening is exact block summation") {
  const auto lat = WienerLattice::from_increments(1.0, 1, {0.1, -0.25, 0.5, 0.125});
  CHECK(lat.finest_level() == 2);

  const auto& same = lat.coarsen(2);
  for (std::size_t k = 0; k < 4; ++k) CHECK(same(0, k) == lat.fine_increments(0)[k]);

  const auto& half = lat.coarsen(1);
  REQUIRE(half.columns() == 2);
  CHECK(half(0, 0) == 0.1 + -0.25);
  CHECK(half(0, 1) == 0.5 + 0.125);
  CHECK(half.dt() == 0.5);

  CHECK_THROWS_AS(lat.coarsen(3), std::out_of_range);
  CHECK_THROWS_AS(lat.coarsen(-1), std::out_of_range);
}

TEST_CASE("coarsening and path values are bit-consistent across levels") {
  const auto lat = WienerLattice::generate(31337, 5, 2, 10, 2.5);
  for (int j = 0; j < 2; ++j) {
    const double total = lat.total(j);
    const auto fine_values = lat.path_values(10);
    for (int level = 0; level <= 10; ++level) {
      const auto& inc = lat.coarsen(level);
      // Parent = sum of its two children at the next level, bit for bit.
      if (level < 10) {
        const auto& finer = lat.coarsen(level + 1);
        for (std::size_t k = 0; k < inc.columns(); ++k) CHECK(inc(j, k) == finer(j, 2 * k) + finer(j, 2 * k + 1));
      }
      const auto values = lat.path_values(level);
      CHECK(values(j, 0) == 0.0);
      CHECK(values(j, values.columns() - 1) == total);
      const std::size_t stride = std::size_t{1} << (10 - level);
      for (std::size_t k = 0; k < values.columns(); ++k) CHECK(values(j, k) == fine_values(j, k * stride));
    }
  }
}

TEST_CASE("little-endian dump holds the fine increments") {
  const auto lat = WienerLattice::generate(3, 0, 1, 2, 1.0);
  const auto bytes = lat.dump_fine_le();
  REQUIRE(bytes.size() == 32);
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[8 + b]) << (8 * b);
  CHECK(std::bit_cast<double>(bits) == lat.fine_increments(0)[1]);
}

TEST_CASE("dyadic_level rejects non powers of two") {
  CHECK(dyadic_level(1) == 0);
  CHECK(dyadic_level(64) == 6);
  CHECK_THROWS_AS(dyadic_level(0), std::invalid_argument);
  CHECK_THROWS_AS(dyadic_level(12), std::invalid_argument);
}

namespace {

// E max of M i.i.d. (T/M) chi^2_1 variables: (T/M) int_0^inf 1 - F(x)^M dx,
// F(x) = erf(sqrt(x/2)). Integrated by composite Simpson on [0, 80].
double expected_max_scaled_chi2(std::size_t m, double horizon) {
  const int panels = 200000;
  const double upper = 80.0;
  const double h = upper / panels;
  auto f = [&](double x) { return 1.0 - std::pow(std::erf(std::sqrt(x / 2.0)), static_cast<double>(m)); };
  double s = f(0.0) + f(upper);
  for (int i = 1; i < panels; ++i) s += (i % 2 ? 4.0 : 2.0) * f(i * h);
  return s * h / 3.0 * horizon / static_cast<double>(m);
}

}  // namespace

TEST_CASE("sup increment statistic at the finest spacing matches the order-statistic oracle") {
  const int level = 5;
  std::vector<WienerLattice> ensemble;
  for (std::size_t p = 0; p < 20000; ++p) ensemble.push_back(WienerLattice::generate(11, p, 1, level, 1.0));
  const auto est = sup_increment_statistic(ensemble, 32);
  const double oracle = expected_max_scaled_chi2(32, 1.0);
  CHECK(std::abs(est.mean - oracle) <= 3.0 * est.std_error);
  // The per-path value at this spacing is the largest squared fine increment.
  const auto inc = ensemble[0].fine_increments(0);
  double mx = 0.0;
  for (double v : inc) mx = std::max(mx, v * v);
  CHECK(std::abs(sup_increment_sq(ensemble[0], 32) - mx) <= 1e-14 * mx);
}

TEST_CASE("sup increment statistic decreases with n and is nested per path") {
  std::vector<WienerLattice> ensemble;
  for (std::size_t p = 0; p < 10000; ++p) ensemble.push_back(WienerLattice::generate(12, p, 1, 12, 1.0));
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t n : {4u, 8u, 16u, 32u}) {
    const auto est = sup_increment_statistic(ensemble, n);
    CHECK(est.mean < prev);
    CHECK(est.mean >= 0.0);
    prev = est.mean;
  }
  for (std::size_t p = 0; p < 200; ++p) {
    double prev_path = std::numeric_limits<double>::infinity();
    for (std::size_t n = 1; n <= 4096; n *= 2) {
      const double v = sup_increment_sq(ensemble[p], n);
      CHECK(v <= prev_path);
      prev_path = v;
    }
  }
  CHECK_THROWS_AS(sup_increment_sq(ensemble[0], 3), std::invalid_argument);
  CHECK_THROWS_AS(sup_increment_sq(ensemble[0], 8192), std::invalid_argument);
}

TEST_CASE("counter stream is reproducible and separated by purpose") {
  CounterStream a(5, StreamPurpose::GrwGaussian, 17), b(5, StreamPurpose::GrwGaussian, 17);
  CounterStream c(5, StreamPurpose::GrwCategorical, 17);
  for (int i = 0; i < 10; ++i) {
    const double x = a.normal();
    CHECK(x == b.normal());
  }
  CHECK(a.uniform() == b.uniform());
  CHECK(c.uniform() != CounterStream(5, StreamPurpose::GrwGaussian, 17).uniform());
}
