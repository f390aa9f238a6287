#include "ictsp/optim.hpp"

#include <algorithm>
#include <cmath>

#include "ictsp/errors.hpp"

namespace ictsp {

void adam_step(AdamState& state, std::span<Parameter* const> params, double lr) {
    for (const Parameter* p : params) {
        if (!p->grad.same_shape(p->value)) throw ShapeError("adam_step: gradient shape mismatch for " + p->name);
        if (!p->grad.all_finite()) throw TrainingError("non-finite gradient in parameter " + p->name);
    }
    ++state.t;
    const auto& cfg = state.config;
    for (Parameter* p : params) {
        AdamSlot& slot = state.slots[p->name];
        if (!slot.m.same_shape(p->value)) {
            slot.m = Tensor(p->value.shape());
            slot.v = Tensor(p->value.shape());
            slot.t = 0;
        }
        ++slot.t;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(slot.t));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(slot.t));
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double g = p->grad[i];
            slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * g;
            slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * g * g;
            const double mhat = slot.m[i] / bc1;
            const double vhat = slot.v[i] / bc2;
            p->value[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

GradCheckResult check_gradients(const LossFn& f, std::span<Parameter* const> params, double h) {
    for (Parameter* p : params) p->zero_grad();
    {
        Tape tape;
        Var loss = f(tape);
        tape.backward(loss);
    }
    auto eval = [&f]() {
        Tape tape;
        return f(tape).value()[0];
    };

    GradCheckResult result;
    for (Parameter* p : params) {
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double analytic = p->grad[i];
            if (std::abs(analytic) <= 1e-8) continue;
            const double saved = p->value[i];
            p->value[i] = saved + h;
            const double up = eval();
            p->value[i] = saved - h;
            const double down = eval();
            p->value[i] = saved;
            const double numeric = (up - down) / (2.0 * h);
            const double rel = std::abs(analytic - numeric) / std::max(std::abs(analytic), std::abs(numeric));
            ++result.checked;
            if (rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst = p->name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return result;
}

}  // namespace ictsp
