#ifndef SSSA_VERSION_HPP
#define SSSA_VERSION_HPP

namespace sssa {

inline constexpr const char* kVersion = "1.0.0";

}

#endif
