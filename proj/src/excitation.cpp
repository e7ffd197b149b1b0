#include "rnnid/excitation.hpp"

#include "rnnid/errors.hpp"

#include <sstream>

namespace rnnid {

ExcitationSpec ExcitationSpec::uniform(int n, const ChannelExcitation& c, std::uint64_t seed) {
  ExcitationSpec s;
  s.channels.assign(static_cast<std::size_t>(n), c);
  s.seed = seed;
  return s;
}

int ExcitationSpec::max_hold() const {
  int m = 1;
  for (const auto& c : channels) m = std::max(m, c.max_hold);
  return m;
}

std::string ExcitationSpec::describe() const {
  std::ostringstream os;
  os << "multilevel pseudo-random, " << channels.size() << " channels";
  if (!channels.empty()) {
    const auto& c = channels.front();
    os << " (first: " << c.levels << " levels on [" << c.lo << ", " << c.hi << "], hold "
       << c.min_hold << ".." << c.max_hold << ")";
  }
  return os.str();
}

void validate(const ExcitationSpec& spec) {
  for (const auto& c : spec.channels) {
    if (c.levels < 2) throw PreconditionError("excitation needs at least two levels per channel");
    if (c.min_hold < 1 || c.max_hold < c.min_hold)
      throw PreconditionError("excitation hold durations must satisfy 1 <= min <= max");
    if (!(c.hi >= c.lo)) throw PreconditionError("excitation range must satisfy lo <= hi");
  }
}

Mat generate_excitation(const ExcitationSpec& spec, int T, std::mt19937_64& rng) {
  validate(spec);
  Mat u(static_cast<Eigen::Index>(spec.channels.size()), T);
  for (std::size_t ch = 0; ch < spec.channels.size(); ++ch) {
    const auto& c = spec.channels[ch];
    std::uniform_int_distribution<int> level(0, c.levels - 1);
    std::uniform_int_distribution<int> hold(c.min_hold, c.max_hold);
    int k = 0;
    while (k < T) {
      const double v = c.lo + (c.hi - c.lo) * level(rng) / static_cast<double>(c.levels - 1);
      const int h = hold(rng);
      for (int j = 0; j < h && k < T; ++j, ++k) u(static_cast<Eigen::Index>(ch), k) = v;
    }
  }
  return u;
}

Mat generate_excitation(const ExcitationSpec& spec, int T) {
  if (T < spec.max_hold()) throw PreconditionError("excitation length is shorter than the maximum hold");
  std::mt19937_64 rng(spec.seed);
  return generate_excitation(spec, T, rng);
}

std::mt19937_64 substream(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                    0x9e3779b9u};
  return std::mt19937_64(seq);
}

}  // namespace rnnid
