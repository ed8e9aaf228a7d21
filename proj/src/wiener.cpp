#include "stochsplit/wiener.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <deque>
#include <stdexcept>
#include <string>

#include "stochsplit/rng.hpp"

namespace stochsplit {

ChannelTable::ChannelTable(int channels, std::size_t columns, double dt)
    : channels_(channels), columns_(columns), dt_(dt),
      data_(static_cast<std::size_t>(channels) * columns, 0.0) {}

int dyadic_level(std::size_t n) {
  if (n == 0 || !std::has_single_bit(n))
    throw std::invalid_argument("step count " + std::to_string(n) + " is not a power of two");
  return std::countr_zero(n);
}

WienerLattice WienerLattice::generate(std::uint64_t master_seed, std::uint64_t path_id, int channels,
                                      int finest_level, double horizon) {
  if (finest_level < 0 || finest_level > kMaxLevel)
    throw std::invalid_argument("finest level must lie in [0, 26]");
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw std::invalid_argument("horizon must be positive");
  if (channels < 1) throw std::invalid_argument("need at least one channel");

  const std::size_t steps = std::size_t{1} << finest_level;
  const double scale = std::sqrt(horizon / static_cast<double>(steps));
  const PhiloxKey key = make_key(master_seed);
  const auto path_lo = static_cast<std::uint32_t>(path_id);
  const auto path_hi = static_cast<std::uint32_t>(path_id >> 32);

  std::vector<double> fine(static_cast<std::size_t>(channels) * steps);
  for (int j = 0; j < channels; ++j) {
    double* out = fine.data() + static_cast<std::size_t>(j) * steps;
    // One Philox block yields the normals for steps 2b and 2b + 1.
    for (std::size_t b = 0; 2 * b < steps; ++b) {
      const PhiloxCounter ctr{static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(j), path_lo, path_hi};
      const auto [z0, z1] = box_muller(philox4x32_10(ctr, key));
      out[2 * b] = scale * z0;
      if (2 * b + 1 < steps) out[2 * b + 1] = scale * z1;
    }
  }

  WienerLattice lat;
  lat.horizon_ = horizon;
  lat.finest_level_ = finest_level;
  lat.channels_ = channels;
  lat.master_seed_ = master_seed;
  lat.path_id_ = path_id;
  lat.build_pyramid(std::move(fine));
  return lat;
}

WienerLattice WienerLattice::from_increments(double horizon, int channels, std::vector<double> fine) {
  if (!(horizon > 0.0)) throw std::invalid_argument("horizon must be positive");
  if (channels < 1 || fine.size() % static_cast<std::size_t>(channels) != 0)
    throw std::invalid_argument("increment count must be a multiple of the channel count");
  const std::size_t steps = fine.size() / static_cast<std::size_t>(channels);
  const int level = dyadic_level(steps);
  if (level > kMaxLevel) throw std::invalid_argument("finest level must lie in [0, 26]");
  for (double v : fine)
    if (!std::isfinite(v)) throw std::invalid_argument("increments must be finite");

  WienerLattice lat;
  lat.horizon_ = horizon;
  lat.finest_level_ = level;
  lat.channels_ = channels;
  lat.build_pyramid(std::move(fine));
  return lat;
}

void WienerLattice::build_pyramid(std::vector<double> fine) {
  const int L = finest_level_;
  levels_.assign(static_cast<std::size_t>(L) + 1, {});
  ChannelTable top(channels_, std::size_t{1} << L, horizon_ / static_cast<double>(std::size_t{1} << L));
  for (int j = 0; j < channels_; ++j)
    for (std::size_t k = 0; k < top.columns(); ++k) top(j, k) = fine[static_cast<std::size_t>(j) * top.columns() + k];
  levels_[static_cast<std::size_t>(L)] = std::move(top);
  for (int l = L - 1; l >= 0; --l) {
    const ChannelTable& finer = levels_[static_cast<std::size_t>(l) + 1];
    ChannelTable coarse(channels_, finer.columns() / 2, finer.dt() * 2.0);
    for (int j = 0; j < channels_; ++j)
      for (std::size_t k = 0; k < coarse.columns(); ++k) coarse(j, k) = finer(j, 2 * k) + finer(j, 2 * k + 1);
    levels_[static_cast<std::size_t>(l)] = std::move(coarse);
  }
}

const ChannelTable& WienerLattice::coarsen(int level) const {
  if (level < 0 || level > finest_level_)
    throw std::out_of_range("coarsening level " + std::to_string(level) + " outside [0, " +
                            std::to_string(finest_level_) + "]");
  return levels_[static_cast<std::size_t>(level)];
}

ChannelTable WienerLattice::path_values(int level) const {
  coarsen(level);
  const std::size_t steps = std::size_t{1} << level;
  ChannelTable values(channels_, steps + 1, horizon_ / static_cast<double>(steps));
  for (int j = 0; j < channels_; ++j) {
    for (std::size_t k = 1; k <= steps; ++k) {
      // Sum the dyadic blocks covering [0, k) from coarse to fine. A block at
      // level l contributes when the level-l prefix count is odd, so the same
      // time reached from a finer level adds the same terms in the same order.
      double v = 0.0;
      for (int l = 0; l <= level; ++l) {
        const std::size_t b = k >> (level - l);
        if (b & 1u) v += levels_[static_cast<std::size_t>(l)](j, b - 1);
      }
      values(j, k) = v;
    }
  }
  return values;
}

std::vector<unsigned char> WienerLattice::dump_fine_le() const {
  std::vector<unsigned char> out;
  out.reserve(static_cast<std::size_t>(channels_) * fine_steps() * 8);
  for (int j = 0; j < channels_; ++j) {
    for (double v : fine_increments(j)) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int b = 0; b < 8; ++b) out.push_back(static_cast<unsigned char>(bits >> (8 * b)));
    }
  }
  return out;
}

double sup_increment_sq(const WienerLattice& lattice, std::size_t n) {
  const int level = dyadic_level(n);
  if (level > lattice.finest_level()) throw std::invalid_argument("n must divide 2^L");
  const std::size_t window = lattice.fine_steps() / n;
  const ChannelTable xi = lattice.path_values(lattice.finest_level());
  double sup = 0.0;
  for (int j = 0; j < lattice.channels(); ++j) {
    const auto v = xi.channel(j);
    // Sliding max/min over windows of window + 1 consecutive lattice points.
    std::deque<std::size_t> qmax, qmin;
    for (std::size_t i = 0; i < v.size(); ++i) {
      while (!qmax.empty() && v[qmax.back()] <= v[i]) qmax.pop_back();
      while (!qmin.empty() && v[qmin.back()] >= v[i]) qmin.pop_back();
      qmax.push_back(i);
      qmin.push_back(i);
      while (qmax.front() + window < i) qmax.pop_front();
      while (qmin.front() + window < i) qmin.pop_front();
      const double d = v[qmax.front()] - v[qmin.front()];
      sup = std::max(sup, d * d);
    }
  }
  return sup;
}

McEstimate sup_increment_statistic(std::span<const WienerLattice> ensemble, std::size_t n) {
  std::vector<double> per_path(ensemble.size());
  for (std::size_t p = 0; p < ensemble.size(); ++p) per_path[p] = sup_increment_sq(ensemble[p], n);
  return mean_and_stderr(per_path);
}

}  // namespace stochsplit
