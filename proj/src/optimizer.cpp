#include "beatformer/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace beatformer {

void OptimizerConfig::validate() const {
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
        throw std::invalid_argument("Adam betas must lie in (0, 1)");
    }
    if (!(epsilon > 0.0)) throw std::invalid_argument("Adam epsilon must be positive");
    if (warmup_steps < 1) throw std::invalid_argument("warmup_steps must be at least 1");
    if (d_model == 0 || batch_size == 0) throw std::invalid_argument("d_model and batch_size must be positive");
}

double lr_schedule(std::uint64_t step_num, std::size_t d_model, std::uint64_t warmup_steps) {
    if (step_num == 0) throw std::invalid_argument("lr_schedule is defined for step_num >= 1");
    const auto step = static_cast<double>(step_num);
    const auto d = static_cast<double>(d_model);
    const auto warm = static_cast<double>(warmup_steps);
    // Both branches folded into one square root so the warm-up boundary and
    // round powers of ten evaluate exactly.
    const double decay = 1.0 / std::sqrt(d * step);
    const double ramp = step / (warm * std::sqrt(d * warm));
    return std::min(decay, ramp);
}

double adam_step(std::vector<Parameter>& params, AdamState& state, const OptimizerConfig& cfg) {
    for (const auto& p : params) {
        if (p.trainable && !p.tensor.has_grad()) {
            throw std::invalid_argument("parameter " + p.name + " has no gradient");
        }
    }
    const std::uint64_t t = state.step_num + 1;
    const double lr = lr_schedule(t, cfg.d_model, cfg.warmup_steps);
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));

    for (auto& p : params) {
        if (!p.trainable) continue;
        auto& slot = state.moments[p.name];
        auto& w = p.tensor.data();
        const auto& g = p.tensor.grad();
        if (slot.m.size() != w.size()) {
            slot.m.assign(w.size(), 0.0);
            slot.v.assign(w.size(), 0.0);
        }
        for (std::size_t i = 0; i < w.size(); ++i) {
            slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * g[i];
            slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double m_hat = slot.m[i] / bc1;
            const double v_hat = slot.v[i] / bc2;
            w[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
        }
    }
    state.step_num = t;
    return lr;
}

}  // namespace beatformer
