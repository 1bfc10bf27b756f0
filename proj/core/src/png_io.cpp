#include "oxygan/png_io.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>

namespace oxygan {

namespace {

constexpr std::uint8_t kSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | p[3];
}

void write_chunk(std::ofstream& f, const char type[4], const std::uint8_t* data,
                 std::size_t len) {
  std::vector<std::uint8_t> head;
  put_u32(head, static_cast<std::uint32_t>(len));
  f.write(reinterpret_cast<const char*>(head.data()), 4);
  f.write(type, 4);
  if (len) f.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(len));
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(type), 4);
  if (len) crc = crc32(crc, data, static_cast<uInt>(len));
  std::vector<std::uint8_t> tail;
  put_u32(tail, static_cast<std::uint32_t>(crc));
  f.write(reinterpret_cast<const char*>(tail.data()), 4);
}

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

void png_write(const std::string& path, const PngImage& img,
               const std::map<std::string, std::string>& texts) {
  if (img.width < 1 || img.height < 1 || (img.channels != 1 && img.channels != 3))
    throw InvalidArgument("png_write: bad image geometry");
  if (img.pixels.size() !=
      static_cast<std::size_t>(img.width) * img.height * img.channels)
    throw InvalidArgument("png_write: pixel buffer does not match dims");

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(kSignature), 8);

  std::vector<std::uint8_t> ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(img.width));
  put_u32(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.push_back(8);                                    // bit depth
  ihdr.push_back(img.channels == 1 ? 0 : 2);            // gray / truecolor
  ihdr.push_back(0);                                    // compression
  ihdr.push_back(0);                                    // filter method
  ihdr.push_back(0);                                    // no interlace
  write_chunk(f, "IHDR", ihdr.data(), ihdr.size());

  for (const auto& [key, value] : texts) {
    std::vector<std::uint8_t> chunk;
    chunk.insert(chunk.end(), key.begin(), key.end());
    chunk.push_back(0);
    chunk.insert(chunk.end(), value.begin(), value.end());
    write_chunk(f, "tEXt", chunk.data(), chunk.size());
  }

  const std::size_t row = static_cast<std::size_t>(img.width) * img.channels;
  std::vector<std::uint8_t> raw;
  raw.reserve((row + 1) * static_cast<std::size_t>(img.height));
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);  // filter: none
    raw.insert(raw.end(), img.pixels.begin() + static_cast<std::ptrdiff_t>(y * row),
               img.pixels.begin() + static_cast<std::ptrdiff_t>((y + 1) * row));
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) !=
      Z_OK)
    throw IoError("png_write: deflate failed");
  write_chunk(f, "IDAT", compressed.data(), bound);
  write_chunk(f, "IEND", nullptr, 0);
  if (!f) throw IoError("png_write: write failed: " + path);
}

PngImage png_read(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kSignature, 8) != 0)
    throw IoError("png_read: not a PNG: " + path);

  PngImage img;
  std::vector<std::uint8_t> idat;
  std::size_t pos = 8;
  bool seen_ihdr = false;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t len = get_u32(&bytes[pos]);
    if (pos + 12 + len > bytes.size()) throw IoError("png_read: truncated chunk");
    const char* type = reinterpret_cast<const char*>(&bytes[pos + 4]);
    const std::uint8_t* data = &bytes[pos + 8];
    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw IoError("png_read: bad IHDR");
      img.width = static_cast<int>(get_u32(data));
      img.height = static_cast<int>(get_u32(data + 4));
      const int depth = data[8], color = data[9], interlace = data[12];
      if (depth != 8) throw IoError("png_read: only 8-bit PNGs supported");
      if (color == 0)
        img.channels = 1;
      else if (color == 2)
        img.channels = 3;
      else
        throw IoError("png_read: unsupported color type " + std::to_string(color));
      if (interlace != 0) throw IoError("png_read: interlaced PNGs unsupported");
      seen_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "tEXt", 4) == 0) {
      const std::uint8_t* sep =
          static_cast<const std::uint8_t*>(std::memchr(data, 0, len));
      if (sep) {
        std::string key(reinterpret_cast<const char*>(data),
                        static_cast<std::size_t>(sep - data));
        std::string value(reinterpret_cast<const char*>(sep + 1),
                          len - static_cast<std::size_t>(sep - data) - 1);
        img.texts[key] = value;
      }
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    pos += 12 + len;
  }
  if (!seen_ihdr || idat.empty()) throw IoError("png_read: missing IHDR/IDAT");

  const std::size_t row = static_cast<std::size_t>(img.width) * img.channels;
  const std::size_t raw_size = (row + 1) * static_cast<std::size_t>(img.height);
  std::vector<std::uint8_t> raw(raw_size);
  uLongf out_len = static_cast<uLongf>(raw_size);
  if (uncompress(raw.data(), &out_len, idat.data(), static_cast<uLong>(idat.size())) != Z_OK ||
      out_len != raw_size)
    throw IoError("png_read: inflate failed");

  img.pixels.assign(static_cast<std::size_t>(img.width) * img.height * img.channels, 0);
  const int bpp = img.channels;
  std::vector<std::uint8_t> prev(row, 0);
  for (int y = 0; y < img.height; ++y) {
    const std::uint8_t filter = raw[static_cast<std::size_t>(y) * (row + 1)];
    const std::uint8_t* src = &raw[static_cast<std::size_t>(y) * (row + 1) + 1];
    std::uint8_t* dst = &img.pixels[static_cast<std::size_t>(y) * row];
    for (std::size_t i = 0; i < row; ++i) {
      const int left = i >= static_cast<std::size_t>(bpp) ? dst[i - static_cast<std::size_t>(bpp)] : 0;
      const int up = prev[i];
      const int ul = i >= static_cast<std::size_t>(bpp) ? prev[i - static_cast<std::size_t>(bpp)] : 0;
      int v = src[i];
      switch (filter) {
        case 0: break;
        case 1: v += left; break;
        case 2: v += up; break;
        case 3: v += (left + up) / 2; break;
        case 4: v += paeth(left, up, ul); break;
        default: throw IoError("png_read: unknown filter " + std::to_string(filter));
      }
      dst[i] = static_cast<std::uint8_t>(v & 0xff);
    }
    std::memcpy(prev.data(), dst, row);
  }
  return img;
}

PngImage tensor_to_png(const Tensor& chw) {
  if (chw.ndim() != 3 || (chw.dims[0] != 1 && chw.dims[0] != 3))
    throw ShapeError("tensor_to_png expects 1xHxW or 3xHxW, got " + dims_to_string(chw.dims));
  PngImage img;
  img.channels = chw.dims[0];
  img.height = chw.dims[1];
  img.width = chw.dims[2];
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        const float v = std::min(1.0f, std::max(0.0f, chw.at3(c, y, x)));
        img.at(y, x, c) = static_cast<std::uint8_t>(std::lround(255.0f * v));
      }
  return img;
}

Tensor png_to_tensor(const PngImage& img) {
  Tensor t({img.channels, img.height, img.width});
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        t.at3(c, y, x) = static_cast<float>(img.at(y, x, c)) / 255.0f;
  return t;
}

}  // namespace oxygan
