#pragma once

#define SRLAB_VERSION "0.1.0"

namespace srlab {
inline const char* version() { return SRLAB_VERSION; }
}
