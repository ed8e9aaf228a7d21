#pragma once

#include <array>
#include <cstdint>
#include <utility>

namespace stochsplit {

using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

/// Philox4x32 with 10 rounds (Salmon et al., SC'11). Pure function of
/// (counter, key); matches the Random123 known-answer vectors.
PhiloxCounter philox4x32_10(PhiloxCounter counter, PhiloxKey key) noexcept;

PhiloxKey make_key(std::uint64_t seed) noexcept;

/// Uniform on (0, 1] built from 53 bits of a 64-bit word. Never returns 0,
/// so it is safe as the log argument of Box-Muller.
double uniform_open_closed(std::uint32_t hi, std::uint32_t lo) noexcept;

/// Uniform on [0, 1).
double uniform_closed_open(std::uint32_t hi, std::uint32_t lo) noexcept;

/// Box-Muller transform of one Philox block into two standard normals.
/// Words (0,1) feed the radius, words (2,3) the angle.
std::pair<double, double> box_muller(const PhiloxCounter& block) noexcept;

/// Stream identifiers. Wiener channels use their channel index directly;
/// auxiliary streams live in the upper half of the 32-bit space.
enum class StreamPurpose : std::uint32_t {
  GrwCategorical = 0x8000'0001u,
  GrwGaussian = 0x8000'0002u,
  Bootstrap = 0x8000'0003u,
  TrialStates = 0x8000'0004u,
};

/// Sequential reader over the keyed stream (seed, stream, path_id).
/// Value i of the stream depends only on (seed, stream, path_id, i).
class CounterStream {
 public:
  CounterStream(std::uint64_t seed, std::uint32_t stream, std::uint64_t path_id) noexcept;
  CounterStream(std::uint64_t seed, StreamPurpose purpose, std::uint64_t path_id) noexcept
      : CounterStream(seed, static_cast<std::uint32_t>(purpose), path_id) {}

  /// Uniform on [0, 1).
  double uniform() noexcept;
  double normal() noexcept;

 private:
  PhiloxCounter next_block() noexcept;

  PhiloxKey key_;
  std::uint32_t stream_;
  std::uint64_t path_id_;
  std::uint32_t block_ = 0;
  PhiloxCounter words_{};
  int word_pos_ = 4;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace stochsplit
