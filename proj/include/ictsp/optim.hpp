#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>

#include "ictsp/autograd.hpp"

namespace ictsp {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Moments for one parameter. Each slot keeps its own step count so a
/// parameter that starts training late gets a fresh bias correction.
struct AdamSlot {
    Tensor m;
    Tensor v;
    std::int64_t t = 0;
};

struct AdamState {
    AdamConfig config;
    std::int64_t t = 0;
    std::map<std::string, AdamSlot> slots;
};

/// One bias-corrected Adam update over `params` using their current grad
/// fields. Throws TrainingError before touching anything if a gradient is not
/// finite.
void adam_step(AdamState& state, std::span<Parameter* const> params, double lr);

/// Builds a scalar loss on the given tape from the parameters it closes over.
using LossFn = std::function<Var(Tape&)>;

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;  // entries with |analytic| above the floor
    std::string worst;        // "<param>[<index>]"
};

/// Central finite differences against the tape gradient. Relative error is
/// |a - n| / max(|a|, |n|), taken over entries with |a| > 1e-8.
GradCheckResult check_gradients(const LossFn& f, std::span<Parameter* const> params, double h = 1e-5);

}  // namespace ictsp
