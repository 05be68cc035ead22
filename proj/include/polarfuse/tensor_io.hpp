#pragma once

#include <stdexcept>
#include <string>

#include "polarfuse/params.hpp"
#include "polarfuse/tensor.hpp"

namespace polarfuse {

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// PFT1 tensor container: magic "PFT1", u8 dtype (0 = float32, 1 = float64),
// u8 ndim, ndim little-endian u32 dims, row-major payload.
void write_pft1(const std::string& path, const Tensor& t, bool as_float32 = false);
Tensor read_pft1(const std::string& path);

// PWA1 weight archive: magic "PWA1", u32 entry count, then per entry
// u16 name length, name bytes, u8 ndim, ndim u32 dims, float32 payload.
// Entries are sorted by name; duplicates are rejected on read.
void write_pwa1(const std::string& path, const ParamStore& params);
ParamStore read_pwa1(const std::string& path);

}  // namespace polarfuse
