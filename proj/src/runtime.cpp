#include "ncast/runtime.hpp"

#include <omp.h>

#include <cstdlib>

#include "ncast/errors.hpp"

namespace ncast {

std::string resolve_device() {
    const char* e = std::getenv("NOWCAST_DEVICE");
    std::string v = e ? e : "auto";
    if (v == "auto" || v == "cpu") return "cpu";
    throw ConfigError("unsupported device '" + v + "' (supported: auto, cpu)");
}

void device_synchronize() {}

int max_threads() { return omp_get_max_threads(); }

}  // namespace ncast
