#pragma once

#include <iosfwd>
#include <string>

#include "oxygan/tensor.hpp"

namespace oxygan {

// OXT1 tensor container: magic "OXT1", u32 LE ndim, ndim u32 LE dims,
// then product(dims) f32 LE values, row-major. Bit-exact round trip.
void oxt_write(std::ostream& os, const Tensor& t);
Tensor oxt_read(std::istream& is);

void oxt_save(const std::string& path, const Tensor& t);
Tensor oxt_load(const std::string& path);

}  // namespace oxygan
