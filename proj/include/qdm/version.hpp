#pragma once

namespace qdm {

inline constexpr const char* kEngineVersion = "0.1.0";

// First line of every model file. Bump when the manifest layout changes.
inline constexpr const char* kModelMagic = "qdm1";

}  // namespace qdm
