#include "ows/archive.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ows/error.hpp"

namespace ows {
namespace {

void append_le_float(std::vector<char>& out, float f) {
  auto bits = std::bit_cast<std::uint32_t>(f);
  for (int b = 0; b < 4; ++b) {
    out.push_back(static_cast<char>(bits & 0xFFu));
    bits >>= 8;
  }
}

float read_le_float(const char* p) {
  std::uint32_t bits = 0;
  for (int b = 3; b >= 0; --b) bits = (bits << 8) | static_cast<unsigned char>(p[b]);
  return std::bit_cast<float>(bits);
}

std::vector<char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::int64_t require_int(const nlohmann::json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key) || !obj[key].is_number_integer() || obj[key].get<std::int64_t>() < 0) {
    throw FormatError("manifest field " + where + "." + key + " missing or not a non-negative integer");
  }
  return obj[key].get<std::int64_t>();
}

}  // namespace

const Matrix& TensorArchive::at(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.value;
  }
  throw FormatError("manifest has no tensor named '" + name + "'");
}

std::filesystem::path blob_path_for(const std::filesystem::path& manifest) {
  auto blob = manifest;
  blob.replace_extension(".bin");
  return blob;
}

void write_archive(const std::filesystem::path& manifest, const nlohmann::json& meta,
                   std::span<const NamedTensor> tensors) {
  nlohmann::json doc = meta.is_null() ? nlohmann::json::object() : meta;
  const auto blob_path = blob_path_for(manifest);
  doc["blob"] = blob_path.filename().string();
  doc["tensors"] = nlohmann::json::array();

  std::vector<char> blob;
  for (const auto& t : tensors) {
    doc["tensors"].push_back({{"name", t.name},
                              {"rows", t.value.rows()},
                              {"cols", t.value.cols()},
                              {"offset", blob.size()}});
    for (Index i = 0; i < t.value.rows(); ++i) {
      for (Index j = 0; j < t.value.cols(); ++j) append_le_float(blob, static_cast<float>(t.value(i, j)));
    }
  }

  std::ofstream blob_out(blob_path, std::ios::binary | std::ios::trunc);
  if (!blob_out) throw FileError("cannot write " + blob_path.string());
  blob_out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!blob_out) throw FileError("short write to " + blob_path.string());

  std::ofstream man_out(manifest, std::ios::trunc);
  if (!man_out) throw FileError("cannot write " + manifest.string());
  man_out << doc.dump(2) << '\n';
  if (!man_out) throw FileError("short write to " + manifest.string());
}

TensorArchive read_archive(const std::filesystem::path& manifest) {
  const auto text = slurp(manifest);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("manifest " + manifest.string() + " is not valid JSON: " + e.what());
  }
  if (!doc.is_object()) throw FormatError("manifest root must be an object");
  if (!doc.contains("tensors") || !doc["tensors"].is_array()) {
    throw FormatError("manifest field 'tensors' missing or not an array");
  }
  auto blob_path = blob_path_for(manifest);
  if (doc.contains("blob")) {
    if (!doc["blob"].is_string()) throw FormatError("manifest field 'blob' must be a string");
    blob_path = manifest.parent_path() / doc["blob"].get<std::string>();
  }
  const auto blob = slurp(blob_path);

  TensorArchive out;
  std::int64_t expected_offset = 0;
  const auto& entries = doc["tensors"];
  for (size_t k = 0; k < entries.size(); ++k) {
    const auto where = "tensors[" + std::to_string(k) + "]";
    const auto& e = entries[k];
    if (!e.is_object() || !e.contains("name") || !e["name"].is_string()) {
      throw FormatError("manifest field " + where + ".name missing or not a string");
    }
    const auto rows = require_int(e, "rows", where);
    const auto cols = require_int(e, "cols", where);
    const auto offset = require_int(e, "offset", where);
    if (offset != expected_offset) {
      throw FormatError("manifest field " + where + ".offset is " + std::to_string(offset) +
                        ", expected " + std::to_string(expected_offset));
    }
    const auto bytes = rows * cols * 4;
    if (offset + bytes > static_cast<std::int64_t>(blob.size())) {
      throw FormatError("manifest field " + where + " (" + shape_string(rows, cols) +
                        ") runs past end of blob (" + std::to_string(blob.size()) + " bytes)");
    }
    Matrix m(rows, cols);
    const char* p = blob.data() + offset;
    for (Index i = 0; i < rows; ++i) {
      for (Index j = 0; j < cols; ++j, p += 4) m(i, j) = read_le_float(p);
    }
    if (!all_finite(m)) throw FormatError("tensor " + where + " contains non-finite values");
    out.tensors.push_back({e["name"].get<std::string>(), std::move(m)});
    expected_offset = offset + bytes;
  }
  if (expected_offset != static_cast<std::int64_t>(blob.size())) {
    throw FormatError("blob has " + std::to_string(blob.size()) + " bytes but manifest 'tensors' describe " +
                      std::to_string(expected_offset));
  }
  doc.erase("tensors");
  doc.erase("blob");
  out.meta = std::move(doc);
  return out;
}

}  // namespace ows
