#include "ul/container.hpp"

#include <bit>
#include <fstream>

namespace ul {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::uint32_t get_u32(const std::string& in, std::size_t& off) {
  UL_CHECK(off + 4 <= in.size(), "io", "container: truncated file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[off + i])) << (8 * i);
  off += 4;
  return v;
}

std::uint64_t get_u64(const std::string& in, std::size_t& off) {
  UL_CHECK(off + 8 <= in.size(), "io", "container: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[off + i])) << (8 * i);
  off += 8;
  return v;
}

double get_f64(const std::string& in, std::size_t& off) {
  return std::bit_cast<double>(get_u64(in, off));
}

std::string read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  UL_CHECK(f.good(), "io", "cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  UL_CHECK(!f.bad(), "io", "read failed: " + path);
  return bytes;
}

void write_file_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  UL_CHECK(f.good(), "io", "cannot write " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  f.flush();
  UL_CHECK(f.good(), "io", "write failed: " + path);
}

namespace {
constexpr char kMagic[4] = {'U', 'L', 'T', 'C'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void encode_entries(std::string& out, const std::vector<ContainerEntry>& entries) {
  put_u64(out, entries.size());
  for (const auto& e : entries) {
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out.append(e.name);
    out.push_back(static_cast<char>(e.tag));
    put_u32(out, static_cast<std::uint32_t>(e.t.shape.size()));
    for (int d : e.t.shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : e.t.data) put_f64(out, v);
  }
}

std::vector<ContainerEntry> decode_entries(const std::string& in, std::size_t& off) {
  std::uint64_t count = get_u64(in, off);
  std::vector<ContainerEntry> out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    ContainerEntry e;
    std::uint32_t nl = get_u32(in, off);
    UL_CHECK(off + nl <= in.size(), "io", "container: truncated file");
    e.name = in.substr(off, nl);
    off += nl;
    UL_CHECK(off + 1 <= in.size(), "io", "container: truncated file");
    e.tag = static_cast<std::uint8_t>(in[off++]);
    std::uint32_t nd = get_u32(in, off);
    std::vector<int> shape(nd);
    for (auto& d : shape) d = static_cast<int>(get_u32(in, off));
    std::size_t n = shape_numel(shape);
    std::vector<double> data(n);
    for (auto& v : data) v = get_f64(in, off);
    e.t = Tensor(std::move(shape), std::move(data));
    require_finite(e.t, "container entry " + e.name);
    out.push_back(std::move(e));
  }
  return out;
}

void save_container(const std::string& path, const std::vector<ContainerEntry>& entries) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  encode_entries(out, entries);
  write_file_bytes(path, out);
}

std::vector<ContainerEntry> load_container(const std::string& path) {
  std::string in = read_file_bytes(path);
  UL_CHECK(in.size() >= 4 && in.compare(0, 4, kMagic, 4) == 0, "io",
           "container: bad magic in " + path);
  std::size_t off = 4;
  std::uint32_t ver = get_u32(in, off);
  UL_CHECK(ver == kVersion, "io", "container: unsupported version in " + path);
  auto out = decode_entries(in, off);
  UL_CHECK(off == in.size(), "io", "container: trailing bytes in " + path);
  return out;
}

std::vector<ContainerEntry> params_to_entries(const ParamSet& ps) {
  std::vector<ContainerEntry> out;
  out.reserve(ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto& e = ps.entry(i);
    out.push_back({e.name, static_cast<std::uint8_t>(e.comp), e.value});
  }
  return out;
}

ParamSet entries_to_params(const std::vector<ContainerEntry>& entries) {
  ParamSet ps;
  for (const auto& e : entries) {
    UL_CHECK(e.tag <= 2, "io", "container: entry " + e.name + " has no component tag");
    ps.add(e.name, static_cast<Component>(e.tag), e.t);
  }
  return ps;
}

}  // namespace ul
