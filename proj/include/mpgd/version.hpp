#pragma once

namespace mpgd {

inline constexpr const char* kLibraryVersion = "0.1.0";

}  // namespace mpgd
