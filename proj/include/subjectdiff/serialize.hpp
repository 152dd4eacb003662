#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "subjectdiff/tensor.hpp"

namespace sdiff {

// FNV-1a over raw bytes; used for checkpoint integrity, not security.
uint64_t fnv1a(const void* data, size_t n, uint64_t h = 1469598103934665603ULL);
std::string hash_hex(uint64_t h);

// Little-endian binary tensor blob: [u32 ndim][i32 dims...][f64 data...]
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void write_file_bytes(const std::string& path, const std::string& bytes);
std::string read_file_bytes(const std::string& path);

uint64_t hash_tensor(const Tensor& t, uint64_t h = 1469598103934665603ULL);

}  // namespace sdiff
