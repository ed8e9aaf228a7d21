#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "stochsplit/fft.hpp"
#include "stochsplit/stats.hpp"
#include "stochsplit/wiener.hpp"

namespace stochsplit {

using cplx = std::complex<double>;

/// Periodic grid x_k = -Lx + k dx, dx = 2 Lx / N, with FFT-ordered
/// wavenumbers. Immutable; shared between states via GridPtr.
class SpatialGrid {
 public:
  /// Throws std::invalid_argument unless Lx > 0 and N is a power of two >= 2.
  SpatialGrid(double half_width, std::size_t points);

  double half_width() const noexcept { return half_width_; }
  std::size_t size() const noexcept { return x_.size(); }
  double dx() const noexcept { return dx_; }
  std::span<const double> x() const noexcept { return x_; }
  std::span<const double> kappa() const noexcept { return kappa_; }
  const FftPlan& fft() const noexcept { return plan_; }

  /// Index of the node equal to `position` up to 1e-9 dx; throws
  /// std::invalid_argument when `position` is not a node.
  std::size_t node_index(double position) const;

 private:
  double half_width_;
  double dx_;
  std::vector<double> x_;
  std::vector<double> kappa_;
  FftPlan plan_;
};

using GridPtr = std::shared_ptr<const SpatialGrid>;

GridPtr make_grid(double half_width, std::size_t points);

struct GridState {
  GridPtr grid;
  std::vector<cplx> psi;

  /// sum |psi_k|^2 dx
  double norm2() const;
};

/// Zero state on the grid.
GridState zero_state(const GridPtr& grid);

/// psi ∝ exp(-(x - x0)^2 / (4 sigma^2) + i p0 x), normalized, so that
/// |psi|^2 has position variance sigma^2 and momentum variance 1/(4 sigma^2).
/// Throws std::invalid_argument when sigma <= 0 or the packet does not fit:
/// mass outside [-Lx, Lx] must be below 1e-12 and the tail guard must pass.
GridState gaussian_packet(const GridPtr& grid, double x0, double p0, double sigma);

/// Fraction of norm^2 on nodes with |x| > 0.9 Lx.
double tail_mass_fraction(const GridState& state);
inline constexpr double kTailMassLimit = 1e-10;

/// exp(-i dt H) with H = -1/2 d^2/dx^2 as the Fourier multiplier
/// exp(-i kappa^2 dt / 2).
GridState free_propagate(const GridState& state, double dt);
void free_propagate_in_place(GridState& state, double dt);

/// Pointwise multiplication by exp(x sum_j dxi_j - (1 + c) dt x^2). The inputs
/// are pre-scaled: for A_j = sqrt(lambda_j) x pass dxi_j = sqrt(lambda_j) dXi_j
/// and dt = sum_j lambda_j dT. Throws std::overflow_error when
/// |x sum dxi| > 700 at some node, std::invalid_argument when dt < 0.
GridState collapse_flow(const GridState& state, std::span<const double> dxi, double dt, double c);
void collapse_flow_in_place(GridState& state, std::span<const double> dxi, double dt, double c);

struct SseParams {
  /// One collapse channel A_j = sqrt(lambda_j) x per entry.
  std::vector<double> lambdas{1.0};
  bool include_h = true;
  /// Flow parameter of the stochastic part; 0 is the conservative equation.
  double c = 0.0;

  double total_lambda() const;
  /// Throws std::invalid_argument on negative or non-finite lambdas, no channels.
  void validate() const;
};

enum class FactorOrder {
  /// psi_{k+1} = H_{T/n} A_{k,k+1} psi_k
  CollapseThenFree,
  /// psi_{k+1} = A_{k,k+1} H_{T/n} psi_k
  FreeThenCollapse,
};

/// Called after every step with (k, t_k, state) for k = 1..n.
using StepObserver = std::function<void(std::size_t, double, const GridState&)>;

/// Run n product-formula steps over the lattice horizon and return the state
/// at T. The lattice must carry one channel per lambda and n <= 2^L dyadic.
GridState product_formula_evolve(const GridState& psi0, const WienerLattice& lattice, std::size_t n,
                                 const SseParams& params, FactorOrder order = FactorOrder::CollapseThenFree,
                                 const StepObserver& observer = {});

/// States at k T / n, k = 0..n, collapse then free in every step.
std::vector<GridState> product_formula_run(const GridState& psi0, const WienerLattice& lattice, std::size_t n,
                                           const SseParams& params);

/// As product_formula_run with the factors of every step swapped.
std::vector<GridState> reversed_order_run(const GridState& psi0, const WienerLattice& lattice, std::size_t n,
                                          const SseParams& params);

/// exp(sqrt(lambda) x xi_t - lambda x^2 t) psi0 summed over channels: the
/// exact solution without H for c = 0.
GridState collapse_closed_form(const GridState& psi0, std::span<const double> xi, double t,
                               std::span<const double> lambdas);

/// sum ||A psi||^2 - 2 Re <(iH + A^2/2) psi, psi> with A = sqrt(lambda) x.
double conservativity_residual_grid(const GridState& state, double lambda = 1.0);

/// ||N psi||^2 with N = x^2 - 1/2 Laplacian - 1, Laplacian applied spectrally.
double reference_operator_energy(const GridState& state);

struct Observables {
  double mean_x = 0.0;
  double var_x = 0.0;
  double norm2 = 0.0;
};
/// Moments of |psi|^2 / norm^2. Throws std::domain_error on zero norm.
Observables observables(const GridState& state);

/// Little-endian interleaved (re, im) float64 dump of the amplitudes.
std::vector<unsigned char> dump_amplitudes_le(const GridState& state);

// Ensemble studies. Every path p draws its noise from
// WienerLattice::generate(seed, p, channels, L, T); results are independent of
// the worker count.

/// MC estimate of E||psi_t||^2 for the stochastic part alone with flow
/// parameter c, one exact step of length t. For c < 0 requires t Lx^2 <= 600.
McEstimate flow_norm_study(const GridState& psi0, double c, double t, std::size_t paths, std::uint64_t seed,
                           int threads = 1);

struct MartingaleRow {
  std::size_t n = 0;
  McEstimate norm2;
  std::vector<double> samples;  // per-path ||psi_T||^2, coupled across rows
  double bias() const { return norm2.mean - 1.0; }
};

/// E||psi_T||^2 for each n over the same coupled paths (L = log2 max n).
/// psi0 must be normalized.
std::vector<MartingaleRow> martingale_study(const GridState& psi0, double horizon, const SseParams& params,
                                            std::span<const std::size_t> ns, std::size_t paths,
                                            std::uint64_t seed, int threads = 1);

struct OrderingRow {
  std::size_t n = 0;
  /// E ||psi^{collapse-first}_T - psi^{free-first}_T||^2 over coupled paths.
  McEstimate distance2;
};

std::vector<OrderingRow> ordering_study(const GridState& psi0, double horizon, const SseParams& params,
                                        std::span<const std::size_t> ns, std::size_t paths, std::uint64_t seed,
                                        int threads = 1);

/// CSV with header t,norm2,mean_x,var_x.
std::string trajectory_csv(std::span<const double> times, std::span<const GridState> states);

}  // namespace stochsplit
