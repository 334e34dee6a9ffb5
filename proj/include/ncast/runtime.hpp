#pragma once

#include <string>

namespace ncast {

// Resolve the compute device from NOWCAST_DEVICE (absent == "auto" == cpu).
// Anything other than auto/cpu is a config error.
std::string resolve_device();

// Barrier for asynchronous backends; the CPU backend has nothing pending but
// timing code calls it so latency numbers stay honest if a device is added.
void device_synchronize();

int max_threads();

}  // namespace ncast
