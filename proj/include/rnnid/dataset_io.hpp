#pragma once

#include "rnnid/plant.hpp"
#include "rnnid/training.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace rnnid {

/// On-disk layout: seq_NNN.csv (header t,u1..u6,y1..y12, SI units, shortest
/// round-trip decimals), normalizer.json and split.json.
std::vector<std::filesystem::path> write_dataset(const std::filesystem::path& dir,
                                                 const std::vector<Sequence>& raw,
                                                 const Normalizer& normalizer,
                                                 const DatasetSplit& split, double dt_sample);

struct LoadedDataset {
  Dataset normalized;
  std::vector<Sequence> raw;
  Normalizer normalizer;
};

LoadedDataset read_dataset(const std::filesystem::path& dir);

std::string sequence_to_csv(const Sequence& s, double dt_sample);
Sequence sequence_from_csv(const std::string& text, int n_u, int id);

/// Shortest decimal string that parses back to exactly `v`.
std::string format_double(double v);

}  // namespace rnnid
