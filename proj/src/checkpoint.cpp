#include "lupi/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

#include "lupi/config.hpp"

namespace lupi {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

struct Reader {
  const unsigned char* data;
  std::size_t size;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > size) fail("checkpoint: truncated file");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data + pos), n);
    pos += n;
    return s;
  }
};

}  // namespace

void save_checkpoint(const ModelParams& params, const std::string& config_echo,
                     const std::string& path) {
  std::string buf;
  buf += "LUPI";
  put_u32(buf, kCheckpointVersion);
  put_u32(buf, static_cast<std::uint32_t>(config_echo.size()));
  buf += config_echo;
  put_u32(buf, static_cast<std::uint32_t>(params.tensors.size()));
  for (const auto& [name, tensor] : params.tensors) {  // map order is canonical
    put_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    put_u32(buf, static_cast<std::uint32_t>(tensor.shape().size()));
    for (std::size_t d : tensor.shape()) put_u32(buf, static_cast<std::uint32_t>(d));
    for (double v : tensor.data()) put_f32(buf, static_cast<float>(v));
  }
  put_u32(buf, crc32(reinterpret_cast<const unsigned char*>(buf.data()), buf.size()));

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail("checkpoint: cannot open '" + tmp + "'");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) fail("checkpoint: failed writing '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    fail("checkpoint: cannot move '" + tmp + "' into place");
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("checkpoint: cannot open '" + path + "'");
  std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (raw.size() < 12) fail("checkpoint: truncated file");

  const auto* bytes = reinterpret_cast<const unsigned char*>(raw.data());
  const std::uint32_t stored_crc =
      static_cast<std::uint32_t>(bytes[raw.size() - 4]) |
      static_cast<std::uint32_t>(bytes[raw.size() - 3]) << 8 |
      static_cast<std::uint32_t>(bytes[raw.size() - 2]) << 16 |
      static_cast<std::uint32_t>(bytes[raw.size() - 1]) << 24;
  if (crc32(bytes, raw.size() - 4) != stored_crc)
    fail("checkpoint: CRC mismatch, file is corrupt");

  Reader r{bytes, raw.size() - 4};
  if (r.bytes(4) != "LUPI") fail("checkpoint: bad magic, not a LUPI checkpoint");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    fail("checkpoint: format version " + std::to_string(version) + " unsupported, expected " +
         std::to_string(kCheckpointVersion));

  LoadedCheckpoint out;
  out.config_echo = r.bytes(r.u32());
  const std::uint32_t num_params = r.u32();
  for (std::uint32_t p = 0; p < num_params; ++p) {
    const std::string name = r.bytes(r.u32());
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    std::vector<double> values(numel(shape));
    for (auto& v : values) v = static_cast<double>(r.f32());
    out.params.tensors[name] = Tensor::from_data(std::move(shape), std::move(values));
  }
  if (r.pos != r.size) fail("checkpoint: trailing bytes after parameters");
  out.params.config = model_config_from_echo(out.config_echo);
  return out;
}

}  // namespace lupi
