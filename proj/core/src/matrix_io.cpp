#include "teir/matrix_io.hpp"

#include <array>
#include <bit>
#include <fstream>
#include <vector>

#include "teir/error.hpp"

namespace teir {
namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  std::array<char, 4> b;
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b.data(), 4);
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

constexpr std::size_t kHeaderBytes = 8 + 4 * 3;

}  // namespace

void write_matrix_file(const std::filesystem::path& path, std::string_view magic,
                       const Matrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
  put_u32(out, kMatrixFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(m.rows()));
  put_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (float v : m.values()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  if (!out) throw IoError("short write to " + path.string());
}

Matrix read_matrix_file(const std::filesystem::path& path, std::string_view magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < magic.size() ||
      std::string_view(reinterpret_cast<const char*>(bytes.data()), magic.size()) != magic) {
    throw FormatError(path.string() + ": bad magic, expected " + std::string(magic));
  }
  if (bytes.size() < kHeaderBytes) throw TruncatedFile(path.string() + ": header");
  const std::uint32_t version = get_u32(bytes.data() + 8);
  if (version != kMatrixFormatVersion) {
    throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
  }
  const std::uint32_t rows = get_u32(bytes.data() + 12);
  const std::uint32_t cols = get_u32(bytes.data() + 16);
  const std::size_t expected = kHeaderBytes + std::size_t{rows} * cols * 4;
  if (bytes.size() < expected) {
    throw TruncatedFile(path.string() + ": expected " + std::to_string(expected) +
                        " bytes, found " + std::to_string(bytes.size()));
  }
  if (bytes.size() > expected) {
    throw FormatError(path.string() + ": trailing bytes after matrix payload");
  }
  Matrix m(rows, cols);
  auto values = m.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = std::bit_cast<float>(get_u32(bytes.data() + kHeaderBytes + 4 * i));
  }
  return m;
}

}  // namespace teir
