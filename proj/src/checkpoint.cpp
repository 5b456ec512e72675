// Copyright Contributors to the nrt Project
// SPDX-License-Identifier: Apache-2.0
#include "nrt/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

namespace nrt {

namespace {

constexpr char kMagic[8] = {'N', 'R', 'T', 'C', 'K', 'P', 'T', '\0'};
constexpr uint32_t kVersion = 1;

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <class T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw CheckpointError("checkpoint: truncated file");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const nn::ParamRegistry& reg) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("checkpoint: cannot open " + path + " for writing");
  os.write(kMagic, sizeof(kMagic));
  write_pod(os, kVersion);
  write_pod(os, static_cast<uint64_t>(reg.params().size()));
  for (const auto& p : reg.params()) {
    const std::string& name = p->name;
    write_pod(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(os, static_cast<uint32_t>(p.rank()));
    for (int d : p.shape()) write_pod(os, static_cast<uint64_t>(d));
    os.write(reinterpret_cast<const char*>(p.values().data()),
             static_cast<std::streamsize>(p.numel() * sizeof(double)));
  }
  if (!os) throw CheckpointError("checkpoint: write failed for " + path);
}

void load_checkpoint(const std::string& path, nn::ParamRegistry& reg) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw CheckpointError("checkpoint: bad magic in " + path);
  const auto version = read_pod<uint32_t>(is);
  if (version != kVersion)
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  const auto count = read_pod<uint64_t>(is);

  std::map<std::string, std::pair<Shape, std::vector<double>>> records;
  for (uint64_t i = 0; i < count; ++i) {
    const auto name_len = read_pod<uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const auto rank = read_pod<uint32_t>(is);
    Shape shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int>(read_pod<uint64_t>(is));
    std::vector<double> data(shape_numel(shape));
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!is) throw CheckpointError("checkpoint: truncated payload for " + name);
    records[name] = {std::move(shape), std::move(data)};
  }

  for (auto p : reg.params()) {
    auto it = records.find(p->name);
    if (it == records.end())
      throw CheckpointError("checkpoint: missing parameter " + p->name);
    if (it->second.first != p.shape())
      throw CheckpointError("checkpoint: shape mismatch for " + p->name);
    p.node()->val = it->second.second;
    records.erase(it);
  }
  if (!records.empty())
    throw CheckpointError("checkpoint: file has " + std::to_string(records.size()) +
                          " parameters unknown to this model, first: " +
                          records.begin()->first);
}

}  // namespace nrt
