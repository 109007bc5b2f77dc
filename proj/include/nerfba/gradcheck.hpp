#pragma once

#include <string>
#include <vector>

namespace nerfba {

struct GradcheckOptions {
    uint64_t seed = 4242;
    int trials = 100;
    // Test-fixture hook: deliberately flips the sign of the analytic point-
    // encoding Jacobian so the harness can prove it catches a planted bug.
    bool inject_pe_sign_flip = false;
};

struct OracleReport {
    std::string name;
    int trials = 0;
    double worst_rel = 0.0;
    double tol = 0.0;
    bool pass = false;
};

// Central-difference verification of every hand-written gradient path:
// point-encoding Jacobians (plain and annealed), integrated-encoding
// Jacobians (approximate and full chain), the MLP, compositing, and the
// end-to-end pixel-loss pose gradient.
std::vector<OracleReport> run_gradcheck(const GradcheckOptions& options);

bool gradcheck_passed(const std::vector<OracleReport>& reports);

}  // namespace nerfba
