#include "bevloc/params.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace bevloc::nn {

namespace {

using json = nlohmann::json;

void write_u64_le(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64_le(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw Error("BRW1: truncated header");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void float_to_le(float f, unsigned char* out) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  for (int i = 0; i < 4; ++i) out[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
}

float float_from_le(const unsigned char* in) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(in[i]) << (8 * i);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

}  // namespace

void save_brw1(const ParamStore& params, const std::string& path) {
  json manifest = json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, e] : params) {
    manifest[name] = {{"dtype", "f32"}, {"shape", e.value.shape}, {"byte_offset", offset}};
    offset += e.value.numel() * 4;
  }
  const std::string mtext = manifest.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("BRW1: cannot open " + path + " for writing");
  os.write("BRW1", 4);
  write_u64_le(os, mtext.size());
  os.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
  std::vector<unsigned char> buf;
  for (const auto& [name, e] : params) {
    buf.resize(e.value.numel() * 4);
    for (std::size_t i = 0; i < e.value.numel(); ++i) float_to_le(e.value.data[i], buf.data() + 4 * i);
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }
  if (!os) throw Error("BRW1: write failed for " + path);
}

namespace {

void load_blob(std::istream& is, const json& manifest, ParamStore& params, bool create) {
  const std::streampos blob_start = is.tellg();
  for (auto it = manifest.begin(); it != manifest.end(); ++it) {
    const std::string& name = it.key();
    const json& desc = it.value();
    if (desc.at("dtype").get<std::string>() != "f32")
      throw Error("BRW1: unsupported dtype for " + name);
    std::vector<int> shape = desc.at("shape").get<std::vector<int>>();
    const std::uint64_t off = desc.at("byte_offset").get<std::uint64_t>();
    const std::size_t n = Tensor::count(shape);

    Tensor* dst;
    if (create) {
      dst = &params.create(name, shape);
    } else {
      dst = &params.value(name);
      if (dst->shape != shape)
        throw Error("BRW1: shape mismatch for " + name + " (store " + dst->shape_str() + ")");
    }
    is.seekg(blob_start + static_cast<std::streamoff>(off));
    std::vector<unsigned char> buf(n * 4);
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!is) throw Error("BRW1: truncated blob for " + name);
    for (std::size_t i = 0; i < n; ++i) dst->data[i] = float_from_le(buf.data() + 4 * i);
  }
}

json read_manifest(std::istream& is, const std::string& path) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "BRW1", 4) != 0) throw Error("BRW1: bad magic in " + path);
  const std::uint64_t mlen = read_u64_le(is);
  std::string mtext(mlen, '\0');
  is.read(mtext.data(), static_cast<std::streamsize>(mlen));
  if (!is) throw Error("BRW1: truncated manifest in " + path);
  json manifest = json::parse(mtext, nullptr, false);
  if (manifest.is_discarded() || !manifest.is_object())
    throw Error("BRW1: manifest is not a JSON object in " + path);
  return manifest;
}

}  // namespace

void load_brw1(ParamStore& params, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("BRW1: cannot open " + path);
  json manifest = read_manifest(is, path);
  load_blob(is, manifest, params, false);
}

ParamStore load_brw1_fresh(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("BRW1: cannot open " + path);
  json manifest = read_manifest(is, path);
  ParamStore params;
  load_blob(is, manifest, params, true);
  return params;
}

}  // namespace bevloc::nn
