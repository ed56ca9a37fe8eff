#pragma once

// Binary view blobs and small file helpers. The on-disk layout is documented
// in docs/FORMATS.md; all multi-byte values are little-endian.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vsap/scenegen.hpp"

namespace vsap::io {

inline constexpr char kViewMagic[4] = {'V', 'S', 'V', '1'};
inline constexpr std::uint32_t kViewVersion = 1;

/// Append-only little-endian encoder.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void raw(const void* data, std::size_t n);
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

/// Bounds-checked little-endian decoder; throws Errc::kFormat on truncation.
class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  void raw(void* out, std::size_t n);
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const;
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

std::vector<std::uint8_t> encode_view(const PosedView& view);
PosedView decode_view(const std::vector<std::uint8_t>& bytes);

/// Binary PPM (P6).
void write_ppm(const std::filesystem::path& path, int width, int height,
               const std::vector<std::uint8_t>& rgb);

}  // namespace vsap::io
