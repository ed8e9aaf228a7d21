#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "stochsplit/stats.hpp"

namespace stochsplit {

/// Dense channels x columns table of doubles, row-major by channel.
/// Used both for increment sequences (columns = steps) and for path values
/// (columns = steps + 1).
class ChannelTable {
 public:
  ChannelTable() = default;
  ChannelTable(int channels, std::size_t columns, double dt);

  int channels() const noexcept { return channels_; }
  std::size_t columns() const noexcept { return columns_; }
  /// Time spacing between consecutive columns.
  double dt() const noexcept { return dt_; }

  double operator()(int channel, std::size_t k) const noexcept { return data_[index(channel, k)]; }
  double& operator()(int channel, std::size_t k) noexcept { return data_[index(channel, k)]; }
  std::span<const double> channel(int j) const noexcept {
    return {data_.data() + static_cast<std::size_t>(j) * columns_, columns_};
  }

 private:
  std::size_t index(int channel, std::size_t k) const noexcept {
    return static_cast<std::size_t>(channel) * columns_ + k;
  }

  int channels_ = 0;
  std::size_t columns_ = 0;
  double dt_ = 0.0;
  std::vector<double> data_;
};

/// Coupled dyadic Brownian increments for one Monte-Carlo realization.
///
/// The finest grid has 2^L steps on [0, T]. Every coarser grid is obtained by
/// pairwise block sums, so a scheme run with n = 2^l steps sees exactly the
/// same Brownian path as one run with 2^L steps. Immutable after construction.
class WienerLattice {
 public:
  static constexpr int kMaxLevel = 26;

  /// Fine increments i.i.d. N(0, T/2^L), a pure function of the arguments.
  /// Throws std::invalid_argument on L outside [0, 26], T <= 0, m < 1.
  static WienerLattice generate(std::uint64_t master_seed, std::uint64_t path_id, int channels,
                                int finest_level, double horizon);

  /// Wrap given fine increments (channel-major, channels * 2^L values).
  static WienerLattice from_increments(double horizon, int channels, std::vector<double> fine);

  double horizon() const noexcept { return horizon_; }
  int finest_level() const noexcept { return finest_level_; }
  int channels() const noexcept { return channels_; }
  std::size_t fine_steps() const noexcept { return std::size_t{1} << finest_level_; }
  std::uint64_t master_seed() const noexcept { return master_seed_; }
  std::uint64_t path_id() const noexcept { return path_id_; }

  std::span<const double> fine_increments(int channel) const noexcept {
    return levels_.back().channel(channel);
  }

  /// Increments at 2^level steps. Each entry is the exact pairwise sum of its
  /// children, bit-identical to summing the previous level.
  const ChannelTable& coarsen(int level) const;

  /// xi at the 2^level + 1 lattice times. xi_0 = 0. Values at shared times
  /// agree bit-for-bit across levels.
  ChannelTable path_values(int level) const;

  /// xi_T for one channel (the level-0 increment).
  double total(int channel) const { return coarsen(0)(channel, 0); }

  /// Little-endian float64 dump of the fine increments, channel-major.
  std::vector<unsigned char> dump_fine_le() const;

 private:
  WienerLattice() = default;
  void build_pyramid(std::vector<double> fine);

  double horizon_ = 0.0;
  int finest_level_ = 0;
  int channels_ = 0;
  std::uint64_t master_seed_ = 0;
  std::uint64_t path_id_ = 0;
  // levels_[l] holds the 2^l-step increments, l = 0..L.
  std::vector<ChannelTable> levels_;
};

/// Step count 2^level for a dyadic n; throws std::invalid_argument when n is
/// not a power of two.
int dyadic_level(std::size_t n);

/// sup over finest-lattice pairs with |t - s| <= T/n of |xi_t - xi_s|^2,
/// maximized over channels. n must divide 2^L.
double sup_increment_sq(const WienerLattice& lattice, std::size_t n);

/// Monte-Carlo estimate of E sup_{|t-s|<=T/n} |xi_t - xi_s|^2.
McEstimate sup_increment_statistic(std::span<const WienerLattice> ensemble, std::size_t n);

}  // namespace stochsplit
