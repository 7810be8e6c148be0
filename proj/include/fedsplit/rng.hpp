#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedsplit {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Derives an independent stream seed from a base seed and a list of tags
/// (round, iteration, client id, purpose). Order of tags matters.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags);

// Purpose tags so that streams for different consumers never collide.
namespace stream {
inline constexpr std::uint64_t kData = 0x64617461;        // "data"
inline constexpr std::uint64_t kPartition = 0x70617274;   // "part"
inline constexpr std::uint64_t kInit = 0x696e6974;        // "init"
inline constexpr std::uint64_t kSample = 0x73616d70;      // "samp"
inline constexpr std::uint64_t kTrain = 0x7472616e;       // "tran"
inline constexpr std::uint64_t kBaseline = 0x62617365;    // "base"
}  // namespace stream

}  // namespace fedsplit
