#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "mmpop/ensemble.hpp"

namespace mmpop {

inline constexpr std::uint32_t kBundleVersion = 1;

/// Single-file model archive:
///
///   mmpop-bundle <version>\n
///   meta <bytes>\n<json>\n
///   block <name> <rows> <cols>\n<rows*cols little-endian float32>\n   (repeated)
///   end\n
///
/// The JSON carries the run config, seeds, dims, bank ids/authors/masks,
/// target scalers and recorded validation scores; every weight matrix and
/// bank array is a block.
std::string serialize_bundle(const ensemble::TrainedEnsemble& ensemble);

/// Throws DataError on a bad magic line, a version other than
/// kBundleVersion (naming both), truncation or inconsistent blocks.
ensemble::TrainedEnsemble deserialize_bundle(const std::string& bytes);

/// Atomic write (temp file + rename).
void save_bundle(const ensemble::TrainedEnsemble& ensemble, const std::filesystem::path& path);
ensemble::TrainedEnsemble load_bundle(const std::filesystem::path& path);

}  // namespace mmpop
