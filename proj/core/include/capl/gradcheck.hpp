#pragma once

#include <string>
#include <vector>

namespace capl {

/// Loss-by-loss finite-difference verification suite. Each named loss is
/// checked on `seeds` independently seeded random instances; a loss passes
/// when the worst relative error across all instances stays below 1e-4.
struct GradCheckOptions {
    std::size_t seeds = 100;
    std::vector<std::string> losses;  // empty = all of kGradCheckLosses
    std::uint64_t base_seed = 1;
    /// Test fixture: negates the analytic Dice gradient so the suite must
    /// report a failure. Never set outside tests.
    bool inject_dice_sign_bug = false;
};

inline constexpr const char* kGradCheckLosses[] = {"ce",     "dice",  "mse",    "hv",
                                                   "adv_bce", "nc_ca", "stage1", "lp"};

struct LossCheckResult {
    std::string loss;
    double max_rel_error = 0.0;
    bool pass = false;
};

std::vector<LossCheckResult> run_gradcheck(const GradCheckOptions& opts);

bool gradcheck_all_passed(const std::vector<LossCheckResult>& results);

}  // namespace capl
