#include "oxygan/oxt.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace oxygan {

static_assert(std::endian::native == std::endian::little,
              "OXT1 io assumes a little-endian host");
static_assert(sizeof(float) == 4);

namespace {

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  if (!is) throw IoError("OXT1: truncated header");
  return v;
}

}  // namespace

void oxt_write(std::ostream& os, const Tensor& t) {
  os.write("OXT1", 4);
  write_u32(os, static_cast<std::uint32_t>(t.ndim()));
  for (int d : t.dims) write_u32(os, static_cast<std::uint32_t>(d));
  os.write(reinterpret_cast<const char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  if (!os) throw IoError("OXT1: write failed");
}

Tensor oxt_read(std::istream& is) {
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "OXT1", 4) != 0)
    throw IoError("OXT1: bad magic");
  const std::uint32_t ndim = read_u32(is);
  if (ndim == 0 || ndim > 8) throw IoError("OXT1: implausible ndim " + std::to_string(ndim));
  std::vector<int> dims(ndim);
  for (auto& d : dims) {
    std::uint32_t v = read_u32(is);
    if (v == 0 || v > (1u << 24)) throw IoError("OXT1: implausible dim " + std::to_string(v));
    d = static_cast<int>(v);
  }
  Tensor t(dims);
  is.read(reinterpret_cast<char*>(t.data.data()),
          static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  if (!is) throw IoError("OXT1: truncated payload");
  return t;
}

void oxt_save(const std::string& path, const Tensor& t) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  oxt_write(f, t);
}

Tensor oxt_load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  return oxt_read(f);
}

}  // namespace oxygan
