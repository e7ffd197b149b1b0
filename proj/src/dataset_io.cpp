#include "rnnid/dataset_io.hpp"

#include "rnnid/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace rnnid {

namespace fs = std::filesystem;

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

namespace {

std::string sequence_name(int id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "seq_%03d.csv", id);
  return buf;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
  if (!out) throw IoError("write failed for " + p.string());
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

double parse_double(std::string_view s, int line) {
  double v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw ParseError("dataset CSV line " + std::to_string(line) + ": bad number '" +
                     std::string(s) + "'");
  return v;
}

}  // namespace

std::string sequence_to_csv(const Sequence& s, double dt_sample) {
  std::string out = "t";
  for (Eigen::Index j = 1; j <= s.u.rows(); ++j) out += ",u" + std::to_string(j);
  for (Eigen::Index j = 1; j <= s.y.rows(); ++j) out += ",y" + std::to_string(j);
  out += "\n";
  for (Eigen::Index k = 0; k < s.length(); ++k) {
    out += format_double(static_cast<double>(k) * dt_sample);
    for (Eigen::Index j = 0; j < s.u.rows(); ++j) out += "," + format_double(s.u(j, k));
    for (Eigen::Index j = 0; j < s.y.rows(); ++j) out += "," + format_double(s.y(j, k));
    out += "\n";
  }
  return out;
}

Sequence sequence_from_csv(const std::string& text, int n_u, int id) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("dataset CSV is empty");
  const int cols = static_cast<int>(std::count(line.begin(), line.end(), ',')) + 1;
  const int n_y = cols - 1 - n_u;
  if (n_y < 1 || line.rfind("t,", 0) != 0) throw ParseError("dataset CSV header is malformed");
  std::vector<std::vector<double>> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> r;
    std::size_t pos = 0;
    while (true) {
      const std::size_t next = line.find(',', pos);
      r.push_back(parse_double(std::string_view(line).substr(pos, next - pos), lineno));
      if (next == std::string::npos) break;
      pos = next + 1;
    }
    if (static_cast<int>(r.size()) != cols)
      throw ParseError("dataset CSV line " + std::to_string(lineno) + ": wrong column count");
    rows.push_back(std::move(r));
  }
  Sequence s;
  s.id = id;
  s.u.resize(n_u, static_cast<Eigen::Index>(rows.size()));
  s.y.resize(n_y, static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    for (int j = 0; j < n_u; ++j) s.u(j, static_cast<Eigen::Index>(k)) = rows[k][1 + j];
    for (int j = 0; j < n_y; ++j) s.y(j, static_cast<Eigen::Index>(k)) = rows[k][1 + n_u + j];
  }
  return s;
}

std::vector<fs::path> write_dataset(const fs::path& dir, const std::vector<Sequence>& raw,
                                    const Normalizer& normalizer, const DatasetSplit& split,
                                    double dt_sample) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::vector<fs::path> written;
  for (const auto& s : raw) {
    const fs::path p = dir / sequence_name(s.id);
    write_text(p, sequence_to_csv(s, dt_sample));
    written.push_back(p);
  }
  write_json_file(dir / "normalizer.json", normalizer_to_json(normalizer));
  written.push_back(dir / "normalizer.json");
  Json sj = split_to_json(split);
  sj["dt_sample"] = dt_sample;
  write_json_file(dir / "split.json", sj);
  written.push_back(dir / "split.json");
  return written;
}

LoadedDataset read_dataset(const fs::path& dir) {
  LoadedDataset d;
  d.normalizer = normalizer_from_json(read_json_file(dir / "normalizer.json"));
  d.normalized.split = split_from_json(read_json_file(dir / "split.json"));
  const int n = static_cast<int>(d.normalized.split.train.size() + d.normalized.split.validation.size() +
                                 d.normalized.split.test.size());
  validate_split(d.normalized.split, n);
  const int n_u = static_cast<int>(d.normalizer.u.min.size());
  for (int id = 0; id < n; ++id) {
    Sequence s = sequence_from_csv(read_text(dir / sequence_name(id)), n_u, id);
    if (s.y.rows() != d.normalizer.y.min.size())
      throw ParseError(sequence_name(id) + ": output width disagrees with the normalizer");
    d.normalized.sequences.push_back({d.normalizer.u.apply(s.u), d.normalizer.y.apply(s.y), id});
    d.raw.push_back(std::move(s));
  }
  return d;
}

}  // namespace rnnid
