#pragma once

#include <string>

#include "spaformer/model.hpp"

namespace spaformer {

inline constexpr const char* kCheckpointMagic = "spaformer-checkpoint";
inline constexpr int kCheckpointVersion = 1;

/// One file: a text manifest (version line, model config, one line per
/// parameter with name, shape and byte offset, then "end") followed by the
/// little-endian float32 blob. Written through a temporary file and renamed,
/// so an interrupted save leaves the previous checkpoint intact.
void save_checkpoint(const std::string& path, const Model<float>& model);

/// Rebuilds the model from the embedded config and fills every parameter.
/// Throws IoError on a malformed file or a manifest that does not match the
/// parameters the config builds.
Model<float> load_checkpoint(const std::string& path);

}  // namespace spaformer
