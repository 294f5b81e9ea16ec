#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>

#include "teir/matrix.hpp"

namespace teir {

inline constexpr std::string_view kEmbeddingMagic = "TEIREMB1";
inline constexpr std::string_view kImageMagic = "TEIRIMG1";
inline constexpr std::uint32_t kMatrixFormatVersion = 1;

// 8-byte magic, u32 version, u32 rows, u32 cols, then row-major
// little-endian float32 values.
void write_matrix_file(const std::filesystem::path& path, std::string_view magic,
                       const Matrix& m);
Matrix read_matrix_file(const std::filesystem::path& path, std::string_view magic);

}  // namespace teir
