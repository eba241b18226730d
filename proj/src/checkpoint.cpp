#include "ucrn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

namespace ucrn {

namespace {

const char kMagic[4] = {'U', 'C', 'R', 'N'};

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.insert(out.end(), b, b + sizeof(T));  // x86-64: native order is little-endian
}

template <typename T>
T get(const std::vector<std::uint8_t>& in, std::size_t& pos, const std::string& origin) {
  if (pos + sizeof(T) > in.size())
    throw std::runtime_error("checkpoint: truncated file " + origin + " at byte " +
                             std::to_string(pos));
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const NamedTensors& named) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  for (const auto& [name, t] : named) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    for (double v : t.values()) put<double>(out, v);
  }
  return out;
}

void write_checkpoint(const std::string& path, const NamedTensors& named) {
  std::vector<std::uint8_t> bytes = serialize_checkpoint(named);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

NamedTensors parse_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin) {
  std::size_t pos = 0;
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + origin);
  pos = 4;
  const auto version = get<std::uint32_t>(bytes, pos, origin);
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version) +
                             " in " + origin);
  NamedTensors out;
  while (pos < bytes.size()) {
    const auto name_len = get<std::uint32_t>(bytes, pos, origin);
    if (pos + name_len > bytes.size())
      throw std::runtime_error("checkpoint: truncated file " + origin + " at byte " +
                               std::to_string(pos));
    std::string name(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                     bytes.begin() + static_cast<std::ptrdiff_t>(pos + name_len));
    pos += name_len;
    const auto rank = get<std::uint32_t>(bytes, pos, origin);
    std::vector<std::size_t> shape(rank);
    std::size_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      shape[i] = static_cast<std::size_t>(get<std::uint64_t>(bytes, pos, origin));
      numel *= shape[i];
    }
    std::vector<double> values(numel);
    for (std::size_t i = 0; i < numel; ++i) values[i] = get<double>(bytes, pos, origin);
    out.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(values)));
  }
  return out;
}

NamedTensors read_checkpoint(const std::string& path) {
  return parse_checkpoint(read_file_bytes(path), path);
}

void load_into(const NamedTensors& source, const NamedTensors& dest) {
  std::map<std::string, Tensor> by_name;
  for (const auto& [name, t] : source) by_name.emplace(name, t);
  // the record sets must match exactly before anything is copied
  std::string missing, unexpected;
  std::set<std::string> wanted;
  for (const auto& [name, t] : dest) {
    wanted.insert(name);
    if (!by_name.count(name)) missing += (missing.empty() ? "" : ", ") + name;
  }
  for (const auto& [name, t] : by_name)
    if (!wanted.count(name)) unexpected += (unexpected.empty() ? "" : ", ") + name;
  if (!missing.empty() || !unexpected.empty()) {
    std::string msg = "checkpoint: record mismatch";
    if (!missing.empty()) msg += "; missing " + missing;
    if (!unexpected.empty()) msg += "; unexpected " + unexpected;
    throw std::runtime_error(msg);
  }
  for (const auto& [name, t] : dest) {
    const Tensor& s = by_name.at(name);
    if (s.shape() != t.shape())
      throw std::runtime_error("checkpoint: shape mismatch for " + name + ": file " +
                               shape_str(s.shape()) + " vs model " + shape_str(t.shape()));
  }
  for (const auto& [name, t] : dest) {
    Tensor d = t;
    d.values() = by_name.at(name).values();
  }
}

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
}

std::uint64_t file_fnv1a64(const std::string& path) {
  std::vector<std::uint8_t> bytes = read_file_bytes(path);
  return fnv1a64(bytes.data(), bytes.size());
}

}  // namespace ucrn
