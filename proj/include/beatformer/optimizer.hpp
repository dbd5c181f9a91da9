#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "beatformer/tensor.hpp"

namespace beatformer {

struct OptimizerConfig {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double epsilon = 1e-9;
    std::uint64_t warmup_steps = 4000;
    std::size_t d_model = 1000;
    std::size_t batch_size = 128;
    std::size_t epochs = 50;
    double threshold = 0.5;

    void validate() const;
};

/// Warm-up then inverse square root decay:
/// d_model^-0.5 * min(step^-0.5, step * warmup^-1.5). Throws for step 0.
double lr_schedule(std::uint64_t step_num, std::size_t d_model, std::uint64_t warmup_steps);

struct AdamMoments {
    std::vector<double> m;
    std::vector<double> v;
};

struct AdamState {
    std::uint64_t step_num = 0;
    std::map<std::string, AdamMoments> moments;
};

/// One bias-corrected Adam update over the trainable parameters, using
/// lr_schedule(step_num + 1). Throws std::invalid_argument naming the first
/// trainable parameter without a gradient buffer. Returns the learning rate.
double adam_step(std::vector<Parameter>& params, AdamState& state, const OptimizerConfig& cfg);

}  // namespace beatformer
