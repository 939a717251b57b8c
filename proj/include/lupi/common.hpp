#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace lupi {

// Every recoverable failure in the library surfaces as lupi::Error. The CLI
// maps it to exit status 1 with a one-line diagnostic on stderr.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

enum class LogLevel { kError = 0, kInfo = 1, kDebug = 2 };

// Resolved once from LUPI_LOG_LEVEL (error|info|debug); defaults to info.
LogLevel log_level();
void log_error(const std::string& msg);
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

// Deterministic RNG: xoshiro256** seeded through SplitMix64. Every random
// decision in the project draws from a stream derived from one 64-bit base
// seed plus a stream id and up to two indices (epoch/iteration, trial, image
// ordinal, ...), so a run is fully reproducible from its config and the
// provenance of any draw can be named in logs.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  double uniform();                          // [0, 1)
  double uniform(double lo, double hi);      // [lo, hi)
  // Inclusive integer range.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  double normal();                           // standard normal, Box-Muller

 private:
  std::uint64_t s_[4];
};

// Stream ids for the seed-splitting scheme (documented in the README).
namespace stream {
inline constexpr std::uint64_t kSynth = 1;      // synthetic dataset latents
inline constexpr std::uint64_t kInit = 2;       // parameter initialization
inline constexpr std::uint64_t kBatch = 3;      // P*K batch sampling (epoch, iter)
inline constexpr std::uint64_t kMix = 4;        // channel-mix weights (epoch, iter)
inline constexpr std::uint64_t kAugment = 5;    // spatial augmentation (epoch, iter)
inline constexpr std::uint64_t kEvalTrial = 6;  // gallery sampling (trial)
inline constexpr std::uint64_t kTrainEval = 7;  // per-epoch snapshot protocol
}  // namespace stream

Rng make_stream(std::uint64_t seed, std::uint64_t stream_id, std::uint64_t a = 0,
                std::uint64_t b = 0);

// CRC-32 (IEEE 802.3 reflected polynomial), used by the checkpoint format.
std::uint32_t crc32(const unsigned char* data, std::size_t len);

}  // namespace lupi
