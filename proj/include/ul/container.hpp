#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ul/param.hpp"
#include "ul/tensor.hpp"

namespace ul {

// Named-tensor container file. Fixed little-endian layout, so files are
// byte-identical wherever they are produced:
//   magic "ULTC" | u32 version=1 | u64 count |
//   per entry: u32 name_len | name bytes | u8 tag | u32 ndim | u32 dims[] |
//              f64 data[] (LE bit pattern)
// tag carries the component for checkpoints (0,1,2) or 255 when unused.
struct ContainerEntry {
  std::string name;
  std::uint8_t tag = 255;
  Tensor t;
};

void save_container(const std::string& path, const std::vector<ContainerEntry>& entries);
std::vector<ContainerEntry> load_container(const std::string& path);

// Entry-block codec without the file magic, for embedding in other formats.
void encode_entries(std::string& out, const std::vector<ContainerEntry>& entries);
std::vector<ContainerEntry> decode_entries(const std::string& in, std::size_t& off);

std::vector<ContainerEntry> params_to_entries(const ParamSet& ps);
ParamSet entries_to_params(const std::vector<ContainerEntry>& entries);

// Little-endian primitives shared with the checkpoint header writer.
void put_u32(std::string& out, std::uint32_t v);
void put_u64(std::string& out, std::uint64_t v);
void put_f64(std::string& out, double v);
std::uint32_t get_u32(const std::string& in, std::size_t& off);
std::uint64_t get_u64(const std::string& in, std::size_t& off);
double get_f64(const std::string& in, std::size_t& off);

std::string read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::string& bytes);

}  // namespace ul
