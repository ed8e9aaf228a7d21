#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "stochsplit/rng.hpp"
#include "stochsplit/spectral_sse.hpp"
#include "stochsplit/stats.hpp"

namespace stochsplit {

/// Shared parameters of the GRW and QMUPL simulations. Units: lambda in
/// 1/(length^2 time), alpha in 1/length^2, mu in 1/time.
struct CollapseConfig {
  double lambda = 1.0;
  double alpha = 1.0;
  double mu = 2.0;
  double horizon = 0.5;
  bool include_h = true;
  /// Enforce mu alpha = 2 lambda.
  bool linked_scaling = true;
  std::size_t paths = 1000;
  std::uint64_t seed = 1;

  double half_width = 10.0;
  std::size_t points = 512;
  // Initial Gaussian packet (see gaussian_packet).
  double x0 = 0.0;
  double p0 = 0.0;
  double sigma = 0.5;

  /// Sets mu = 2 lambda / alpha.
  static CollapseConfig linked(double lambda, double alpha, double horizon);

  /// Throws std::invalid_argument on non-positive rates, horizon, paths or
  /// a broken scaling link (relative 1e-12).
  void validate() const;
  /// floor(mu T), robust to rounding of mu T at integers.
  std::size_t hits() const;
  GridPtr make_grid() const;
  GridState initial_state(const GridPtr& grid) const;
};

struct FlashRecord {
  std::vector<double> times;
  std::vector<double> positions;
};

struct PathObservation {
  double t = 0.0;
  double mean_x = 0.0;
  double var_x = 0.0;
};

/// The two independent random streams of one GRW path.
struct GrwStreams {
  CounterStream categorical;
  CounterStream gaussian;
  GrwStreams(std::uint64_t seed, std::uint64_t path_id)
      : categorical(seed, StreamPurpose::GrwCategorical, path_id),
        gaussian(seed, StreamPurpose::GrwGaussian, path_id) {}
};

struct GrwHit {
  GridState state;
  double y = 0.0;
};

/// One GRW step: phi -> e^{-iH/mu} phi (if include_h), draw the flash Y, then
/// multiply by (alpha/pi)^{1/4} e^{-alpha/2 (x - Y)^2} and normalize.
/// Y = X + N(0, 1/(2 alpha)) with X drawn from the grid density |phi|^2 dx.
/// Throws std::domain_error on a zero state.
GrwHit grw_step(const GridState& phi, double alpha, double mu, bool include_h, GrwStreams& rng);

/// Multiply by the hitting function centered at y and normalize.
void grw_hit_in_place(GridState& phi, double alpha, double y);

/// Density of the next flash on the grid nodes:
/// sqrt(alpha/pi) sum_x e^{-alpha (x - y)^2} |phi(x)|^2 dx, with phi already
/// propagated. phi must be normalized.
std::vector<double> flash_density(const GridState& phi, double alpha);

struct GrwPath {
  FlashRecord flashes;
  /// Observables of phi right after every hit.
  std::vector<PathObservation> after_hits;
  /// phi_T, freely evolved from the last hit to T.
  GridState final_state;
};

/// GRW with deterministic hit times k/mu, k = 1..floor(mu T). Requires
/// mu T >= 1 and a valid config.
GrwPath grw_trajectory(const CollapseConfig& config, std::uint64_t path_id);

/// The GRW map applied to given flash centers (no sampling).
GridState grw_apply_flashes(const GridState& phi0, std::span<const double> centers, double alpha, double mu,
                            bool include_h);

struct WeightedEnsemble {
  std::size_t steps = 0;
  /// ||psi_T||^2 per path under the reference measure.
  std::vector<double> weights;
  /// Observables of phi_t = psi_t / ||psi_t|| at the record times, per path.
  std::vector<std::vector<PathObservation>> records;
  /// Z_k = mu / (2 sqrt lambda) (xi_{k/mu} - xi_{(k-1)/mu}) per path, for the
  /// hit times on the lattice.
  std::vector<std::vector<double>> z;

  McEstimate mean_weight() const { return mean_and_stderr(weights); }
  /// sum w / max w
  double ess() const;
  /// Weighted sample of one recorded observable.
  std::vector<WeightedSample> weighted(std::size_t record, bool variance) const;
};

/// QMUPL under the reference measure: n product-formula steps to T (collapse
/// then free), single channel lambda. record_times must lie on the n-lattice;
/// by default only T is recorded.
WeightedEnsemble qmupl_ensemble(const CollapseConfig& config, std::size_t n,
                                std::span<const double> record_times = {}, int threads = 1);

struct CoordinateComparison {
  std::size_t k = 0;
  double ks = 0.0;
  /// Two-sample 1% critical value with m = Kish ESS of the weighted sample.
  double ks_critical = 0.0;
  double grw_mean = 0.0, grw_var = 0.0;
  double z_mean = 0.0, z_var = 0.0;
  /// Unweighted variance of Z_k under the reference measure.
  McEstimate z_unweighted_var;
};

struct EquivalenceReport {
  std::vector<CoordinateComparison> coordinates;
  double ess = 0.0;
  double ess_kish = 0.0;
  /// max over compared paths and nodes of |phi_QMUPL - phi_GRW(Z)| / max|phi|.
  double max_wavefunction_deviation = 0.0;
  std::size_t compared_paths = 0;
  /// Raw samples: GRW flashes, QMUPL Z_k and weights, indexed [path][k].
  std::vector<std::vector<double>> y;
  std::vector<std::vector<double>> z;
  std::vector<double> weights;
  double hit_spacing = 0.0;
};

/// H = 0 comparison of GRW flashes Y_k with QMUPL Z_k at the hit times.
/// Requires include_h = false, linked scaling and floor(mu T) a power of two.
EquivalenceReport equivalence_check_h0(const CollapseConfig& config, int threads = 1);

/// Y_1 over `draws` independent GRW first steps from the initial state.
std::vector<double> first_flash_sample(const CollapseConfig& config, std::size_t draws, int threads = 1);

struct ContinuumRow {
  double alpha = 0.0;
  double mu = 0.0;
  std::size_t hits = 0;
  double t = 0.0;
  std::string observable;
  double ks = 0.0;
  /// Bootstrap standard error of ks.
  double ks_se = 0.0;
  double d_mean = 0.0;
  double d_var = 0.0;
  double ess = 0.0;
  /// Fewer than four hits before T: too few for the GRW dynamics to be
  /// representative of the limit.
  bool few_hits = false;
};

struct ContinuumReport {
  std::vector<ContinuumRow> rows;
  /// Mean KS distance of <x>_{phi_T} between two samples of the reference law
  /// of the sizes used here, with its bootstrap standard error.
  McEstimate noise_floor;
  double reference_ess = 0.0;
  McEstimate reference_mean_weight;
  WeightedEnsemble reference;
};

struct ContinuumOptions {
  std::size_t reference_steps = 256;
  std::size_t bootstrap = 100;
  int threads = 1;
};

/// Scaled GRW (mu = 2 lambda / alpha) against the fine-n QMUPL reference for
/// <x> and var(x) of phi_t at t in {T/2, T}. `base` supplies lambda, T,
/// paths, seed, grid and packet; include_h must be on.
ContinuumReport continuum_limit_study(const CollapseConfig& base, std::span<const double> alphas,
                                      const ContinuumOptions& options = {});

struct LindbladPair {
  double x = 0.0, y = 0.0;
  McEstimate factor;
  double imag = 0.0;
  double oracle = 0.0;
  double rel_error = 0.0;
};

/// H = 0: MC estimate of E_Q[psi_t(x) conj psi_t(y)] / (psi_0(x) conj psi_0(y))
/// against e^{-lambda (x - y)^2 t / 2}. x, y must be grid nodes with psi_0 != 0.
std::vector<LindbladPair> lindblad_check_h0(const CollapseConfig& config, std::span<const std::pair<double, double>> pairs,
                                            std::size_t steps = 16, int threads = 1);

struct GrwLindbladRate {
  double exact = 0.0;
  double linearized = 0.0;
};

/// mu (1 - e^{-alpha d^2 / 4}) and its linearization mu alpha d^2 / 4.
GrwLindbladRate grw_lindblad_factor(double alpha, double mu, double d);

std::string flashes_csv(std::span<const GrwPath> paths);
std::string ensemble_csv(const WeightedEnsemble& ensemble);
std::string distances_csv(const ContinuumReport& report);

}  // namespace stochsplit
