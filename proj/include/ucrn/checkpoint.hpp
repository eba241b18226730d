#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ucrn/tensor.hpp"

namespace ucrn {

// Binary parameter container. Layout (all little-endian):
//   magic "UCRN" | version u32 | record*
//   record = name_len u32 | name bytes | rank u32 | dims u64[rank] | f64 payload
// Payloads are f64 only; the index file bit-casts its u64 params checksum into
// a single f64 element to stay inside this contract.
inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

std::vector<std::uint8_t> serialize_checkpoint(const NamedTensors& named);
void write_checkpoint(const std::string& path, const NamedTensors& named);

// name -> tensor (values only, requires_grad=false), insertion order preserved
NamedTensors read_checkpoint(const std::string& path);
NamedTensors parse_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin);

// copies values from a checkpoint into live parameters, verifying names/shapes
void load_into(const NamedTensors& source, const NamedTensors& dest);

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n);
std::uint64_t file_fnv1a64(const std::string& path);
std::vector<std::uint8_t> read_file_bytes(const std::string& path);

}  // namespace ucrn
