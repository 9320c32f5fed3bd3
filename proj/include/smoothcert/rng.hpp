#pragma once

#include <cstdint>
#include <random>

namespace smoothcert {

using Rng = std::mt19937_64;

// SplitMix64 step. Used to whiten seeds and to derive independent
// substreams from a (master seed, stream index) pair.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline Rng make_rng(std::uint64_t seed) {
  std::uint64_t s = seed;
  // Two whitening steps so that small consecutive seeds do not yield
  // correlated engine states.
  std::uint64_t a = splitmix64(s);
  std::uint64_t b = splitmix64(s);
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  return Rng(seq);
}

// Deterministic substream: the engine for worker `stream` under `master`.
// Same (master, stream) always yields the same engine state.
inline Rng substream(std::uint64_t master, std::uint64_t stream) {
  std::uint64_t s = master;
  std::uint64_t m = splitmix64(s);
  std::uint64_t t = m ^ (0xd1342543de82ef95ULL * (stream + 1));
  return make_rng(splitmix64(t));
}

// Draws a fresh 64-bit seed from an engine. Used to hand child components
// their own deterministic stream without sharing engine state.
inline std::uint64_t draw_seed(Rng& rng) { return rng(); }

}  // namespace smoothcert
