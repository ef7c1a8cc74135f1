#include "one/version.hpp"

#ifndef ONE_GIT_REV
#define ONE_GIT_REV "unknown"
#endif

namespace one {

const char* build_revision() { return ONE_GIT_REV; }

}  // namespace one
