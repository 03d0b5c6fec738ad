#include "cardioseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "binary_io.hpp"

namespace cardioseg {

namespace {

constexpr char kMagic[4] = {'C', 'S', 'E', 'G'};

}  // namespace

std::string serialize_checkpoint(const ModelParameters<float>& params) {
  validate_parameters(params);
  detail::ByteWriter w;
  w.bytes(kMagic, 4);
  w.u32(params.format_version);
  w.u32(static_cast<std::uint32_t>(params.arch.kind));
  w.u32(static_cast<std::uint32_t>(params.arch.image_size));
  w.u32(static_cast<std::uint32_t>(params.arch.filter));
  w.u32(static_cast<std::uint32_t>(params.arch.widths.size()));
  for (std::size_t width : params.arch.widths) w.u32(static_cast<std::uint32_t>(width));
  w.f64(params.arch.leaky_slope);
  w.f64(params.arch.batch_norm.momentum);
  w.f64(params.arch.batch_norm.epsilon);

  std::uint32_t count = 0;
  for_each_tensor(params, [&](const std::string&, const Tensor<float>&, ParamRole) { ++count; });
  w.u32(count);
  for_each_tensor(params, [&](const std::string& name, const Tensor<float>& t, ParamRole) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) w.u32(static_cast<std::uint32_t>(e));
    for (float v : t.values()) w.f32(v);
  });
  return w.take();
}

ModelParameters<float> deserialize_checkpoint(const std::string& bytes) {
  detail::ByteReader r(bytes, "checkpoint");
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("checkpoint: bad magic, not a CSEG file");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointFormatVersion)
    throw FormatError("checkpoint: unsupported format version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointFormatVersion) + ")");
  const std::uint32_t kind = r.u32();
  if (kind != static_cast<std::uint32_t>(NetworkKind::init) &&
      kind != static_cast<std::uint32_t>(NetworkKind::propagation))
    throw FormatError("checkpoint: unknown network kind " + std::to_string(kind));

  ArchSpec arch;
  arch.kind = static_cast<NetworkKind>(kind);
  arch.image_size = r.u32();
  arch.filter = r.u32();
  const std::uint32_t widths = r.u32();
  if (widths == 0 || widths > 64) throw FormatError("checkpoint: implausible conv group count");
  arch.widths.clear();
  for (std::uint32_t i = 0; i < widths; ++i) arch.widths.push_back(r.u32());
  arch.leaky_slope = r.f64();
  arch.batch_norm.momentum = r.f64();
  arch.batch_norm.epsilon = r.f64();
  try {
    arch.validate();
  } catch (const std::exception& e) {
    throw FormatError(std::string("checkpoint: invalid architecture block: ") + e.what());
  }

  // The architecture determines the expected layout; read tensors into it.
  ModelParameters<float> params = zeros_like(init_parameters<float>(arch, 0));
  params.format_version = version;
  std::uint32_t count = 0;
  for_each_tensor(params, [&](const std::string&, Tensor<float>&, ParamRole) { ++count; });
  if (r.u32() != count) throw FormatError("checkpoint: tensor count does not match the architecture");
  for_each_tensor(params, [&](const std::string& name, Tensor<float>& t, ParamRole) {
    const std::uint32_t len = r.u32();
    if (len > 256) throw FormatError("checkpoint: implausible tensor name length");
    std::string stored(len, '\0');
    r.bytes(stored.data(), len);
    if (stored != name) throw FormatError("checkpoint: expected tensor " + name + ", found " + stored);
    const std::uint32_t rank = r.u32();
    if (rank != t.rank()) throw FormatError("checkpoint: rank mismatch for " + name);
    for (std::size_t e : t.shape())
      if (r.u32() != e) throw FormatError("checkpoint: shape mismatch for " + name);
    for (float& v : t.values()) v = r.f32();
  });
  if (!r.at_end()) throw FormatError("checkpoint: trailing bytes after last tensor");
  return params;
}

void save_checkpoint(const ModelParameters<float>& params, const std::filesystem::path& path) {
  detail::write_file(path, serialize_checkpoint(params));
}

ModelParameters<float> load_checkpoint(const std::filesystem::path& path, std::optional<NetworkKind> expected_kind) {
  ModelParameters<float> params = deserialize_checkpoint(detail::read_file(path));
  if (expected_kind && params.kind() != *expected_kind)
    throw FormatError("checkpoint " + path.string() + " holds a " + to_string(params.kind()) +
                      " network, expected " + to_string(*expected_kind));
  return params;
}

}  // namespace cardioseg
