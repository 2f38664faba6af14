#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dppn {

struct GradCheckEntry {
    std::string group;
    double max_err = 0.0;  // scaled so 1.0 sits exactly at the tolerance
    bool pass = false;
};

// Builds a tiny random model (eta 6, d 4, 3 classes, 2 prototypes each) and
// checks every analytic gradient group against central finite differences at
// h = 1e-3: backbone, normalization, interpolation features / Delta1 /
// Delta2, prototype parts, offset branch, last layer.
std::vector<GradCheckEntry> run_grad_checks(std::uint32_t seed);

bool all_groups_pass(const std::vector<GradCheckEntry>& entries);

} // namespace dppn
