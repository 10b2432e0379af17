#include "sqd/store.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <zlib.h>

namespace sqd {

namespace {

constexpr char kMagic[4] = {'S', 'Q', 'D', 'S'};
constexpr uint32_t kVersion = 1;
constexpr uint8_t kDtypeF64 = 1;

void push_u32_le(std::vector<uint8_t>& b, uint32_t v) {
  b.push_back(uint8_t(v));
  b.push_back(uint8_t(v >> 8));
  b.push_back(uint8_t(v >> 16));
  b.push_back(uint8_t(v >> 24));
}

uint32_t read_u32_le(const uint8_t* p) {
  return uint32_t(p[0]) | (uint32_t(p[1]) << 8) | (uint32_t(p[2]) << 16) |
         (uint32_t(p[3]) << 24);
}

void push_f64_le(std::vector<uint8_t>& b, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int i = 0; i < 8; ++i) b.push_back(uint8_t(bits >> (8 * i)));
}

double read_f64_le(const uint8_t* p) {
  uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= uint64_t(p[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

void write_bytes_atomic(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw StoreError("cannot write " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw StoreError("short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw StoreError("cannot rename " + tmp + " to " + path);
}

}  // namespace

void write_text_atomic(const std::string& path, const std::string& text) {
  std::vector<uint8_t> bytes(text.begin(), text.end());
  write_bytes_atomic(path, bytes);
}

void save_store(const std::string& path, StoreKind kind, const Tensor& payload,
                const nlohmann::json& manifest) {
  if (!payload.defined() || payload.size() == 0)
    throw StoreError("save_store: refusing to write an empty payload to " + path);

  std::vector<uint8_t> out;
  out.reserve(18 + 4 * payload.shape().size() + 8 * size_t(payload.size()) + 4);
  out.insert(out.end(), kMagic, kMagic + 4);
  push_u32_le(out, kVersion);
  out.push_back(uint8_t(kind));
  out.push_back(kDtypeF64);
  push_u32_le(out, uint32_t(payload.shape().size()));
  for (Index d : payload.shape()) push_u32_le(out, uint32_t(d));
  for (Index i = 0; i < payload.size(); ++i) push_f64_le(out, payload.at(i));
  uint32_t crc = uint32_t(crc32(0, out.data(), uInt(out.size())));
  push_u32_le(out, crc);

  write_bytes_atomic(path, out);
  write_text_atomic(path + ".json", manifest.dump(2) + "\n");
}

StoreData load_store(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError("store not found: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  if (bytes.size() < 18 + 4) throw StoreError(path + ": too short for a store header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw StoreError(path + ": bad magic");
  uint32_t version = read_u32_le(bytes.data() + 4);
  if (version != kVersion)
    throw StoreError(path + ": unsupported version " + std::to_string(version));
  uint8_t kind = bytes[8];
  if (kind < 1 || kind > 3) throw StoreError(path + ": unknown payload kind");
  if (bytes[9] != kDtypeF64) throw StoreError(path + ": unknown dtype");
  uint32_t shape_count = read_u32_le(bytes.data() + 10);
  if (shape_count > 8) throw StoreError(path + ": implausible shape count");
  size_t off = 14;
  if (bytes.size() < off + 4 * shape_count + 4) throw StoreError(path + ": truncated header");
  Shape shape;
  uint64_t total = 1;
  for (uint32_t i = 0; i < shape_count; ++i, off += 4) {
    uint32_t d = read_u32_le(bytes.data() + off);
    if (d == 0) throw StoreError(path + ": zero dimension");
    shape.push_back(Index(d));
    total *= d;
  }
  size_t expect = off + 8 * total + 4;
  if (bytes.size() != expect)
    throw StoreError(path + ": size " + std::to_string(bytes.size()) + " does not match header (expected " +
                     std::to_string(expect) + ")");
  uint32_t stored_crc = read_u32_le(bytes.data() + bytes.size() - 4);
  uint32_t crc = uint32_t(crc32(0, bytes.data(), uInt(bytes.size() - 4)));
  if (crc != stored_crc) throw StoreError(path + ": checksum mismatch");

  std::vector<double> data(total);
  for (uint64_t i = 0; i < total; ++i) data[i] = read_f64_le(bytes.data() + off + 8 * i);
  StoreData out;
  out.kind = StoreKind(kind);
  out.payload = Tensor::wrap(std::move(shape), std::move(data));
  return out;
}

StoreData load_store(const std::string& path, StoreKind expected) {
  StoreData d = load_store(path);
  if (d.kind != expected)
    throw StoreError(path + ": payload kind " + std::to_string(int(d.kind)) + ", expected " +
                     std::to_string(int(expected)));
  return d;
}

nlohmann::json load_manifest(const std::string& path) {
  std::ifstream in(path + ".json");
  if (!in) throw MissingInputError("manifest not found: " + path + ".json");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw StoreError(path + ".json: " + e.what());
  }
}

nlohmann::json arch_to_json(const Architecture& arch) {
  nlohmann::json j;
  j["kind"] = arch.kind == ArchKind::Mlp ? "mlp" : "convnet-mini";
  j["input_shape"] = arch.input_shape;
  j["classes"] = arch.classes;
  j["hidden"] = arch.hidden;
  j["channels"] = arch.channels;
  j["blocks"] = arch.blocks;
  switch (arch.activation) {
    case Activation::Tanh: j["activation"] = "tanh"; break;
    case Activation::Relu: j["activation"] = "relu"; break;
    case Activation::Softplus: j["activation"] = "softplus"; break;
  }
  return j;
}

Architecture arch_from_json(const nlohmann::json& j) {
  Architecture arch;
  std::string kind = j.at("kind").get<std::string>();
  if (kind == "mlp")
    arch.kind = ArchKind::Mlp;
  else if (kind == "convnet-mini")
    arch.kind = ArchKind::ConvNetMini;
  else
    throw ConfigError("arch.kind", "unknown architecture '" + kind + "'");
  arch.input_shape = j.at("input_shape").get<Shape>();
  arch.classes = j.at("classes").get<Index>();
  arch.hidden = j.at("hidden").get<std::vector<Index>>();
  arch.channels = j.value("channels", Index(8));
  arch.blocks = j.value("blocks", Index(3));
  std::string a = j.value("activation", "tanh");
  if (a == "tanh")
    arch.activation = Activation::Tanh;
  else if (a == "relu")
    arch.activation = Activation::Relu;
  else if (a == "softplus")
    arch.activation = Activation::Softplus;
  else
    throw ConfigError("arch.activation", "unknown activation '" + a + "'");
  arch.validate();
  return arch;
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
  std::ostringstream os;
  for (size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
  os << "\n";
  os.precision(17);
  for (const auto& row : rows) {
    if (row.size() != header.size())
      throw StoreError("write_csv: row width " + std::to_string(row.size()) +
                       " vs header width " + std::to_string(header.size()));
    for (size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
    os << "\n";
  }
  write_text_atomic(path, os.str());
}

CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("csv not found: " + path);
  CsvTable out;
  std::string line;
  if (!std::getline(in, line)) throw StoreError(path + ": empty csv");
  std::istringstream hs(line);
  std::string cell;
  while (std::getline(hs, cell, ',')) out.header.push_back(cell);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::vector<double> row;
    while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
    if (row.size() != out.header.size()) throw StoreError(path + ": ragged csv row");
    out.rows.push_back(std::move(row));
  }
  return out;
}

}  // namespace sqd
