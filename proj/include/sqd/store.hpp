#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "sqd/models.hpp"
#include "sqd/tensor.hpp"

namespace sqd {

/// "SQDS" container: magic, version u32, kind u8, dtype u8 (1 = f64),
/// shape-count u32, dims u32 each, little-endian f64 payload, then a CRC32
/// trailer computed over every preceding byte. Covering the header too means
/// any single corrupted byte is caught either by field validation or by the
/// checksum's burst-error guarantee.
enum class StoreKind : uint8_t { Trajectory = 1, Synthetic = 2, Metrics = 3 };

struct StoreData {
  StoreKind kind = StoreKind::Metrics;
  Tensor payload;
};

/// Writes payload plus a JSON manifest sidecar at `path + ".json"`. Both go
/// through a temp file and rename, so readers never observe partial writes.
void save_store(const std::string& path, StoreKind kind, const Tensor& payload,
                const nlohmann::json& manifest);

// Validates header, size, and checksum; missing file raises MissingInputError.
StoreData load_store(const std::string& path);
StoreData load_store(const std::string& path, StoreKind expected);

nlohmann::json load_manifest(const std::string& path);

nlohmann::json arch_to_json(const Architecture& arch);
Architecture arch_from_json(const nlohmann::json& j);

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
};
CsvTable read_csv(const std::string& path);

// Atomic small-file write (temp + rename), shared by stores and reports.
void write_text_atomic(const std::string& path, const std::string& text);

}  // namespace sqd
