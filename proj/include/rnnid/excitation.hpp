#pragma once

#include "rnnid/linalg.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace rnnid {

/// Multilevel pseudo-random signal for one channel: levels evenly spaced on
/// [lo, hi], each held for a uniformly drawn number of steps.
struct ChannelExcitation {
  int levels = 2;
  double lo = -1.0;
  double hi = 1.0;
  int min_hold = 1;
  int max_hold = 1;
};

struct ExcitationSpec {
  std::vector<ChannelExcitation> channels;
  std::uint64_t seed = 0;

  /// Same channel description repeated `n` times.
  static ExcitationSpec uniform(int n, const ChannelExcitation& c, std::uint64_t seed = 0);
  int max_hold() const;
  std::string describe() const;
};

/// Throws PreconditionError when a channel breaks levels >= 2, holds >= 1 or
/// min_hold <= max_hold.
void validate(const ExcitationSpec& spec);

/// Piecewise-constant input sequence (channels x T) drawn from `rng`.
Mat generate_excitation(const ExcitationSpec& spec, int T, std::mt19937_64& rng);
/// Same, seeded from spec.seed. Requires T >= spec.max_hold().
Mat generate_excitation(const ExcitationSpec& spec, int T);

/// Independent generator for substream `index` of `seed`.
std::mt19937_64 substream(std::uint64_t seed, std::uint64_t index);

}  // namespace rnnid
