#include "fedlm/io.hpp"
#include "fedlm/model.hpp"
#include "fedlm/optim.hpp"

namespace fedlm {

namespace {
constexpr std::string_view kMagic = "FEDLM1";
}

std::vector<std::uint8_t> encode_checkpoint(const ParameterSet& params) {
  io::ByteWriter w;
  w.raw(kMagic);
  write_tensor_map(w, params.values());
  return std::move(w).bytes();
}

TensorMap decode_checkpoint(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  if (r.remaining() < kMagic.size() || r.str(kMagic.size()) != kMagic) {
    throw DecodeError("not a checkpoint: bad magic at offset 0");
  }
  TensorMap m = read_tensor_map(r);
  if (!r.done()) r.fail("trailing bytes after checkpoint");
  return m;
}

void save_checkpoint(const std::filesystem::path& path,
                     const ParameterSet& params) {
  io::write_file(path, encode_checkpoint(params));
}

TensorMap load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path));
}

void assign_checkpoint(ParameterSet& params, const TensorMap& values) {
  if (values.size() != params.size()) {
    throw ConfigError("checkpoint has " + std::to_string(values.size()) +
                      " tensors, model has " + std::to_string(params.size()));
  }
  for (const auto& [name, t] : values) {
    if (!params.contains(name)) {
      throw ConfigError("checkpoint tensor " + name + " not in model");
    }
    Parameter& p = params.at(name);
    if (p.value.shape != t.shape) {
      throw ConfigError("checkpoint tensor " + name + " has shape " +
                        shape_string(t.shape) + ", model expects " +
                        shape_string(p.value.shape));
    }
    p.value = t;
  }
}

}  // namespace fedlm
