#include <cmath>
#include <cstring>

#include "vsap/encoder.hpp"
#include "vsap/error.hpp"
#include "vsap/io.hpp"

namespace vsap {

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  const EncoderState& e = ckpt.encoder;
  const OptimizerState& o = ckpt.optimizer;
  io::ByteWriter w;
  w.raw(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(e.dims.size()));
  for (auto d : e.dims) w.u32(static_cast<std::uint32_t>(d));
  w.u32(static_cast<std::uint32_t>(e.activation));
  w.u64(e.init_seed);
  w.u64(e.params.size());
  for (double p : e.params) w.f64(p);
  w.f64(o.config.learning_rate);
  w.f64(o.config.beta1);
  w.f64(o.config.beta2);
  w.f64(o.config.epsilon);
  w.u64(o.step);
  w.u64(o.m.size());
  for (double v : o.m) w.f64(v);
  for (double v : o.v) w.f64(v);
  w.u64(ckpt.train_step);
  return w.bytes();
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw Error(Errc::kFormat, "bad checkpoint magic");
  if (r.u32() != kCheckpointVersion) throw Error(Errc::kFormat, "unsupported checkpoint version");
  Checkpoint c;
  const std::uint32_t ndims = r.u32();
  if (ndims < 2 || ndims > 64) throw Error(Errc::kFormat, "implausible layer count");
  c.encoder.dims.clear();
  for (std::uint32_t k = 0; k < ndims; ++k) c.encoder.dims.push_back(r.u32());
  const std::uint32_t act = r.u32();
  if (act > 1) throw Error(Errc::kFormat, "unknown activation id");
  c.encoder.activation = static_cast<Activation>(act);
  c.encoder.init_seed = r.u64();
  const std::uint64_t np = r.u64();
  if (np != c.encoder.parameter_count()) throw Error(Errc::kFormat, "parameter count disagrees with architecture");
  c.encoder.params.resize(np);
  for (auto& p : c.encoder.params) p = r.f64();
  c.optimizer.config.learning_rate = r.f64();
  c.optimizer.config.beta1 = r.f64();
  c.optimizer.config.beta2 = r.f64();
  c.optimizer.config.epsilon = r.f64();
  c.optimizer.step = r.u64();
  const std::uint64_t nm = r.u64();
  if (nm != np) throw Error(Errc::kFormat, "optimizer moment count disagrees with parameters");
  c.optimizer.m.resize(nm);
  c.optimizer.v.resize(nm);
  for (auto& v : c.optimizer.m) v = r.f64();
  for (auto& v : c.optimizer.v) v = r.f64();
  c.train_step = r.u64();
  if (!r.at_end()) throw Error(Errc::kFormat, "trailing bytes in checkpoint");
  for (double p : c.encoder.params) {
    if (!std::isfinite(p)) throw Error(Errc::kCorruptedState, "checkpoint holds non-finite parameters");
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  // Write-then-rename so an interrupted save never leaves a torn file.
  auto tmp = path;
  tmp += ".tmp";
  io::write_file(tmp, encode_checkpoint(ckpt));
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(Errc::kIo, "cannot move checkpoint into place: " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(io::read_file(path)); }

}  // namespace vsap
