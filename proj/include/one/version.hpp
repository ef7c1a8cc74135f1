#pragma once

namespace one {

// Short git revision the binary was built from, "unknown" outside a checkout.
const char* build_revision();

}  // namespace one
