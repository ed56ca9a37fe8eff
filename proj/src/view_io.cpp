#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "vsap/error.hpp"
#include "vsap/io.hpp"

namespace vsap::io {

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::raw(const void* data, std::size_t n) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  bytes_.insert(bytes_.end(), p, p + n);
}

void ByteReader::need(std::size_t n) const {
  if (pos_ + n > bytes_.size()) throw Error(Errc::kFormat, "truncated binary blob");
}

std::uint8_t ByteReader::u8() {
  need(1);
  return bytes_[pos_++];
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }
double ByteReader::f64() { return std::bit_cast<double>(u64()); }

void ByteReader::raw(void* out, std::size_t n) {
  need(n);
  std::memcpy(out, bytes_.data() + pos_, n);
  pos_ += n;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::kIo, "short write to " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::kIo, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::kIo, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(Errc::kIo, "short write to " + path.string());
}

std::vector<std::uint8_t> encode_view(const PosedView& view) {
  ByteWriter w;
  w.raw(kViewMagic, 4);
  w.u32(kViewVersion);
  w.u32(static_cast<std::uint32_t>(view.width));
  w.u32(static_cast<std::uint32_t>(view.height));
  w.u32(view.environment);
  w.u32(view.view_id);
  w.f64(view.intr.fx);
  w.f64(view.intr.fy);
  w.f64(view.intr.cx);
  w.f64(view.intr.cy);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) w.f64(view.pose.rotation(r, c));
  }
  for (int k = 0; k < 3; ++k) w.f64(view.pose.translation[k]);
  for (float d : view.depth) w.f32(d);
  w.raw(view.rgb.data(), view.rgb.size());
  for (auto id : view.instance) w.u32(id);
  for (auto s : view.semantic) w.u32(s);
  return w.bytes();
}

PosedView decode_view(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kViewMagic, 4) != 0) throw Error(Errc::kFormat, "bad view magic");
  if (r.u32() != kViewVersion) throw Error(Errc::kFormat, "unsupported view version");
  PosedView v;
  v.width = static_cast<int>(r.u32());
  v.height = static_cast<int>(r.u32());
  if (v.width <= 0 || v.height <= 0 || v.width > 1 << 14 || v.height > 1 << 14) {
    throw Error(Errc::kFormat, "implausible view size");
  }
  v.environment = r.u32();
  v.view_id = r.u32();
  v.intr.fx = r.f64();
  v.intr.fy = r.f64();
  v.intr.cx = r.f64();
  v.intr.cy = r.f64();
  v.intr.width = v.width;
  v.intr.height = v.height;
  for (int i = 0; i < 3; ++i) {
    for (int c = 0; c < 3; ++c) v.pose.rotation(i, c) = r.f64();
  }
  for (int k = 0; k < 3; ++k) v.pose.translation[k] = r.f64();
  const std::size_t n = static_cast<std::size_t>(v.width) * v.height;
  v.depth.resize(n);
  for (auto& d : v.depth) d = r.f32();
  v.rgb.resize(n * 3);
  r.raw(v.rgb.data(), v.rgb.size());
  v.instance.resize(n);
  for (auto& id : v.instance) id = r.u32();
  v.semantic.resize(n);
  for (auto& s : v.semantic) s = r.u32();
  if (!r.at_end()) throw Error(Errc::kFormat, "trailing bytes in view blob");
  return v;
}

void write_ppm(const std::filesystem::path& path, int width, int height,
               const std::vector<std::uint8_t>& rgb) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::kIo, "cannot write " + path.string());
  out << "P6\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
}

}  // namespace vsap::io
