#pragma once

// httplib pulls in <resolv.h>, whose `_res` macro collides with identifiers
// inside Eigen. httplib itself never uses it.
#include <httplib.h>
#undef _res
