#pragma once

#include "mvgamba/diff.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace mvg {

struct GradCheckOptions {
    double step = 1e-5;
    double tolerance = 1e-4;
    // Denominator floor of the relative error: |a - n| / max(|a|, |n|, floor).
    double magnitude_floor = 1e-3;
    // Coordinates checked per input; 0 checks all of them.
    std::size_t max_coordinates = 0;
    std::uint64_t seed = 7;
};

struct GradCheckFailure {
    std::size_t input = 0;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t coordinates = 0;
    std::vector<GradCheckFailure> failures;
    bool passed() const { return failures.empty(); }
    std::string summary() const;
};

using GradCheckFn = std::function<Var<double>(const std::vector<Var<double>>&)>;

/// Compares reverse-mode gradients of fn against central differences. Tensor
/// outputs are reduced to a scalar with fixed random weights. Inputs must be
/// parameter leaves; their values are restored afterwards.
GradCheckReport grad_check(const GradCheckFn& fn, const std::vector<Var<double>>& inputs,
                           const GradCheckOptions& options = {});

}  // namespace mvg
