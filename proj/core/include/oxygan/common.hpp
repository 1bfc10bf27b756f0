#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace oxygan {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor dimensionality / layout disagreements. Message names both shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Bad user-facing configuration (files, CLI, network topology).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Crop/resize geometry that cannot be satisfied.
class GeometryError : public Error {
 public:
  using Error::Error;
};

// Out-of-range scalar arguments (dropout p, depth, ...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

std::string dims_to_string(const std::vector<int>& dims);

[[noreturn]] void throw_shape_mismatch(const char* op, const std::vector<int>& a,
                                       const std::vector<int>& b);

// FNV-1a, used for config hashes embedded in output artifacts.
std::uint64_t fnv1a64(const void* data, std::size_t len);
std::uint64_t fnv1a64(const std::string& s);
std::string hash_hex(std::uint64_t h);

// Reads a positive integer from the environment, 0 if unset/invalid.
int env_thread_cap(const char* name = "OXYGAN_THREADS");

}  // namespace oxygan
