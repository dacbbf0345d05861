#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "eegscribe/numerics/tensor.hpp"

namespace eegscribe::nx {

/// STK1 tensor container:
///   "STK1" | u8 version (1) | u8 dtype (1 = f64 LE) | u8 ndim | ndim × u64 LE extents | row-major payload
inline constexpr std::uint8_t kStkVersion = 1;
inline constexpr std::uint8_t kStkFloat64 = 1;

std::vector<std::uint8_t> encode_stk(const Tensor& t);
Tensor decode_stk(const std::vector<std::uint8_t>& bytes);

void write_stk(const std::filesystem::path& path, const Tensor& t);
Tensor read_stk(const std::filesystem::path& path);

}  // namespace eegscribe::nx
