#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stochsplit/numerics.hpp"
#include "stochsplit/stats.hpp"
#include "stochsplit/wiener.hpp"

namespace stochsplit {

/// dX_t = A X_t dt + sum_j B_j X_t dxi^j_t on [0, T], X_0 = x0.
struct MatrixSDESystem {
  ComplexMatrix drift;
  std::vector<ComplexMatrix> diffusions;
  ComplexVector x0;
  double horizon = 1.0;

  int channels() const noexcept { return static_cast<int>(diffusions.size()); }
  Eigen::Index dim() const noexcept { return x0.size(); }

  /// Throws std::invalid_argument on mismatched dimensions, d < 1 or T <= 0.
  void validate() const;

  /// Largest |[X, Y]| entry over all pairs of {A, B_1, ..., B_m}.
  double max_commutator() const;
  bool all_commute(double tol = 1e-12) const { return max_commutator() <= tol; }
};

enum class SchemeKind {
  ExactCommuting,
  Reference,
  EulerMaruyama,
  TrotterPiecewise,
  TrotterInterpolated,
  FirstOrderFactored,
  PartialSplit,
};

std::string_view to_string(SchemeKind kind) noexcept;
/// Throws std::invalid_argument on an unknown name.
SchemeKind scheme_from_string(std::string_view name);

/// A scheme selector. PartialSplit carries the split A = A1 + A2.
struct Scheme {
  SchemeKind kind = SchemeKind::TrotterPiecewise;
  ComplexMatrix split_a1;
  ComplexMatrix split_a2;

  static Scheme of(SchemeKind k) { return Scheme{k, {}, {}}; }
  static Scheme partial_split(ComplexMatrix a1, ComplexMatrix a2) {
    return Scheme{SchemeKind::PartialSplit, std::move(a1), std::move(a2)};
  }
};

/// Commutators below this are treated as zero.
inline constexpr double kCommutatorTol = 1e-12;

class CommutatorTooLarge : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Trajectory {
  std::vector<double> times;
  std::vector<ComplexVector> states;
  /// True when the values are the exact solution on this path.
  bool exact = false;
};

/// Exact flow of dX = B X dxi over one increment: exp(dxi B - dt/2 B^2).
ComplexMatrix b_flow(const ComplexMatrix& b, double dxi, double dt);

/// exp((A - 1/2 sum B_j^2) t + sum B_j xi_j) x0 for pairwise commuting A, B_j.
/// Throws CommutatorTooLarge otherwise.
ComplexVector exact_commuting_flow(const MatrixSDESystem& system, std::span<const double> xi, double t);

/// Scheme trajectory at the n + 1 times k T / n, driven by the lattice
/// coarsened to n steps. TrotterInterpolated is the continuous g_{n,T}
/// process and is returned on the finest lattice instead.
Trajectory run_scheme(const MatrixSDESystem& system, const Scheme& scheme, std::size_t n,
                      const WienerLattice& lattice);

/// Flow on the finest lattice: exact when everything commutes, finest-level
/// Euler-Maruyama otherwise (`exact` = false).
Trajectory reference_flow(const MatrixSDESystem& system, const WienerLattice& lattice);

/// E sup_k |scheme(t_k) - reference(t_k)|^2 over `paths` coupled paths.
McEstimate sup_error_mc(const MatrixSDESystem& system, const Scheme& scheme, std::size_t n,
                        std::size_t paths, std::uint64_t seed, int finest_level, int threads = 1);

struct ConvergenceRow {
  std::size_t n = 0;
  double mse = 0.0;
  double std_error = 0.0;
};

struct ConvergenceReport {
  std::string scheme;
  std::string system_id;
  std::uint64_t seed = 0;
  bool reference_exact = false;
  std::vector<ConvergenceRow> rows;
  double slope = 0.0;

  /// Whether MSE(2n) < MSE(n) at every consecutive pair.
  bool strictly_decreasing() const;
};

/// Runs every scheme at every n on the same paths, sharing one reference per
/// path. ns must be dyadic and strictly increasing.
std::vector<ConvergenceReport> convergence_study(const MatrixSDESystem& system, std::string_view system_id,
                                                 std::span<const Scheme> schemes, std::span<const std::size_t> ns,
                                                 std::size_t paths, std::uint64_t seed, int finest_level,
                                                 int threads = 1);

/// CSV with header n,mse,stderr,scheme,system_id,seed.
std::string convergence_csv(std::span<const ConvergenceReport> reports);

/// max over trials of sum_j |L_j psi|^2 - 2 Re<K psi, psi> - c |psi|^2.
double dissipativity_residual(const ComplexMatrix& k, std::span<const ComplexMatrix> l_list,
                              std::span<const ComplexVector> trials, double c);

/// Ratio of prod_k b_flow(1, dxi_k, dt)^2 to the true solution e^{2 xi_t - 2t}
/// of dX = 2 X dxi, over n steps of the lattice (whose horizon must be t).
/// t = 0 gives 1.
double stochastic_split_counterexample(double t, std::size_t n, const WienerLattice& lattice);

/// Fixed benchmark systems.
MatrixSDESystem benchmark_noncommuting();
MatrixSDESystem benchmark_commuting();
/// Noncommuting system with A = A1 + A2, [A2, B] = 0; returns the split too.
struct PartialSplitBenchmark {
  MatrixSDESystem system;
  ComplexMatrix a1;
  ComplexMatrix a2;
};
PartialSplitBenchmark benchmark_partial_split();

}  // namespace stochsplit
