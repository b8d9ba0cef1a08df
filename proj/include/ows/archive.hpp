#ifndef OWS_ARCHIVE_HPP
#define OWS_ARCHIVE_HPP

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ows/linalg.hpp"

namespace ows {

// On-disk tensor container shared by model checkpoints, optimizer snapshots and
// dataset dumps: a JSON manifest plus one raw little-endian float32 blob.
//
// The manifest holds caller metadata at top level plus
//   "blob":    file name of the blob, relative to the manifest,
//   "tensors": [{"name", "rows", "cols", "offset"}]   (offset in bytes).
// Tensors are packed back to back in manifest order.

struct NamedTensor {
  std::string name;
  Matrix value;
};

struct TensorArchive {
  nlohmann::json meta;  // manifest minus "blob" and "tensors"
  std::vector<NamedTensor> tensors;

  const Matrix& at(const std::string& name) const;
};

std::filesystem::path blob_path_for(const std::filesystem::path& manifest);

void write_archive(const std::filesystem::path& manifest, const nlohmann::json& meta,
                   std::span<const NamedTensor> tensors);

/// Throws FileError when either file is unreadable and FormatError (naming the
/// offending manifest field) when the manifest and blob disagree.
TensorArchive read_archive(const std::filesystem::path& manifest);

}  // namespace ows

#endif  // OWS_ARCHIVE_HPP
