#pragma once

#include <string>
#include <vector>

namespace mmcd::train {

// One finite-difference sweep over a small subnetwork. `pass` means the
// analytic gradient agreed within `tolerance` — except for the deliberately
// corrupted control, where it means the sweep caught the mismatch.
struct GradCheckCase {
    std::string name;
    long params = 0;
    double tolerance = 0.0;
    double max_rel_err = 0.0;
    bool expect_mismatch = false;
    bool pass = false;
};

// Central differences (step 1e-4) against the tape for every differentiable
// block, each instance kept under 2000 parameters so the sweep stays fast.
std::vector<GradCheckCase> run_grad_checks(std::uint64_t seed);

}  // namespace mmcd::train
