#include "stochsplit/rng.hpp"

#include <cmath>
#include <numbers>

namespace stochsplit {

namespace {

constexpr std::uint32_t kWeylA = 0x9E3779B9u;
constexpr std::uint32_t kWeylB = 0xBB67AE85u;
constexpr std::uint32_t kMulA = 0xD2511F53u;
constexpr std::uint32_t kMulB = 0xCD9E8D57u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& lo, std::uint32_t& hi) noexcept {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  lo = static_cast<std::uint32_t>(p);
  hi = static_cast<std::uint32_t>(p >> 32);
}

inline PhiloxCounter round(const PhiloxCounter& c, const PhiloxKey& k) noexcept {
  std::uint32_t lo0, hi0, lo1, hi1;
  mulhilo(kMulA, c[0], lo0, hi0);
  mulhilo(kMulB, c[2], lo1, hi1);
  return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
}

inline std::uint64_t join(std::uint32_t hi, std::uint32_t lo) noexcept {
  return (static_cast<std::uint64_t>(hi) << 32) | lo;
}

}  // namespace

PhiloxCounter philox4x32_10(PhiloxCounter counter, PhiloxKey key) noexcept {
  for (int r = 0; r < 10; ++r) {
    if (r > 0) {
      key[0] += kWeylA;
      key[1] += kWeylB;
    }
    counter = round(counter, key);
  }
  return counter;
}

PhiloxKey make_key(std::uint64_t seed) noexcept {
  return {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
}

double uniform_open_closed(std::uint32_t hi, std::uint32_t lo) noexcept {
  return static_cast<double>((join(hi, lo) >> 11) + 1) * 0x1.0p-53;
}

double uniform_closed_open(std::uint32_t hi, std::uint32_t lo) noexcept {
  return static_cast<double>(join(hi, lo) >> 11) * 0x1.0p-53;
}

std::pair<double, double> box_muller(const PhiloxCounter& block) noexcept {
  const double u1 = uniform_open_closed(block[0], block[1]);
  const double u2 = uniform_closed_open(block[2], block[3]);
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  return {r * std::cos(theta), r * std::sin(theta)};
}

CounterStream::CounterStream(std::uint64_t seed, std::uint32_t stream, std::uint64_t path_id) noexcept
    : key_(make_key(seed)), stream_(stream), path_id_(path_id) {}

PhiloxCounter CounterStream::next_block() noexcept {
  const PhiloxCounter ctr{block_++, stream_, static_cast<std::uint32_t>(path_id_),
                          static_cast<std::uint32_t>(path_id_ >> 32)};
  return philox4x32_10(ctr, key_);
}

double CounterStream::uniform() noexcept {
  if (word_pos_ > 2) {
    words_ = next_block();
    word_pos_ = 0;
  }
  const double u = uniform_closed_open(words_[word_pos_], words_[word_pos_ + 1]);
  word_pos_ += 2;
  return u;
}

double CounterStream::normal() noexcept {
  if (has_spare_) {
    has_spare_ = false;
    return spare_normal_;
  }
  const auto [z0, z1] = box_muller(next_block());
  spare_normal_ = z1;
  has_spare_ = true;
  return z0;
}

}  // namespace stochsplit
