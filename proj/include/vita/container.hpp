#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "vita/tensor.hpp"

namespace vita {

// Named tensor file.
//
//   magic    "VITA"
//   version  u32 (= 1)
//   count    u32
//   count x { name_len u16, name utf-8, dtype u8 (0 = f32), rank u8,
//             dims u32 x rank, payload }
//
// All integers and payload values are little-endian. Tensors are held as
// doubles in memory; f32 -> f64 is exact, so loaded values are bit-identical
// to the file after promotion.
inline constexpr char kContainerMagic[4] = {'V', 'I', 'T', 'A'};
inline constexpr std::uint32_t kContainerVersion = 1;

enum class DType : std::uint8_t { F32 = 0 };

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

std::vector<NamedTensor> read_container(std::istream& in);
std::vector<NamedTensor> read_container(const std::filesystem::path& path);

// Values are narrowed to f32.
void write_container(std::ostream& out, const std::vector<NamedTensor>& entries);
void write_container(const std::filesystem::path& path, const std::vector<NamedTensor>& entries);

}  // namespace vita
