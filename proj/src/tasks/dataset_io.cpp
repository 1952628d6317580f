#include "micronas/tasks/dataset_io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>

#include "micronas/errors.hpp"

namespace micronas {

namespace {

constexpr char kMagic[8] = {'M', 'N', 'D', 'S', 'E', 'T', '0', '1'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::string& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw ConfigError(path + ": truncated dataset file");
  return v;
}

}  // namespace

void write_dataset(const std::string& path, const LabeledDataset& d) {
  d.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write " + path);
  os.write(kMagic, sizeof(kMagic));
  put<std::uint64_t>(os, d.size());
  for (int s : d.sample_shape) put<std::uint32_t>(os, static_cast<std::uint32_t>(s));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(d.num_classes));
  put<std::uint32_t>(os, d.flags.empty() ? 0u : 1u);
  os.write(reinterpret_cast<const char*>(d.features.data()),
           static_cast<std::streamsize>(d.features.size() * sizeof(double)));
  for (int l : d.labels) put<std::int32_t>(os, l);
  for (int f : d.flags) put<std::int32_t>(os, f);
  if (!os) throw ConfigError("failed writing " + path);
}

LabeledDataset read_dataset(const std::string& path, const std::string& split) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open dataset " + path);
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw ConfigError(path + ": not a dataset file");
  }
  LabeledDataset d;
  d.split = split;
  const auto n = get<std::uint64_t>(is, path);
  for (int& s : d.sample_shape) s = static_cast<int>(get<std::uint32_t>(is, path));
  d.num_classes = static_cast<int>(get<std::uint32_t>(is, path));
  const bool has_flags = get<std::uint32_t>(is, path) != 0;
  d.features.resize(n * d.sample_size());
  if (!is.read(reinterpret_cast<char*>(d.features.data()),
               static_cast<std::streamsize>(d.features.size() * sizeof(double)))) {
    throw ConfigError(path + ": truncated dataset file");
  }
  d.labels.resize(n);
  for (auto& l : d.labels) l = get<std::int32_t>(is, path);
  if (has_flags) {
    d.flags.resize(n);
    for (auto& f : d.flags) f = get<std::int32_t>(is, path);
  }
  d.validate();
  return d;
}

void write_scores_csv(const std::string& path, const std::vector<double>& scores, const std::vector<int>& flags) {
  if (scores.size() != flags.size()) throw ShapeError("scores and flags differ in length");
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write " + path);
  os << "sample_id,score,is_anomalous\n" << std::setprecision(17);
  for (std::size_t i = 0; i < scores.size(); ++i) os << i << "," << scores[i] << "," << flags[i] << "\n";
}

}  // namespace micronas
