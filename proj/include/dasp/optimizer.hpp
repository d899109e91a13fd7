#pragma once

#include <cmath>
#include <map>
#include <string>

#include "dasp/tensor.hpp"

namespace dasp {

struct AdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Adam moments per tracked parameter. Step counts are kept per parameter so
// bias correction stays right when the trainable selection changes between
// steps.
struct OptimizerState {
    struct Slot {
        Tensor m, v;
        std::size_t step = 0;
    };
    std::map<std::string, Slot> slots;

    void reset() { slots.clear(); }
};

inline void adam_update(OptimizerState& state, const std::string& name, Tensor& param,
                        const Tensor& grad, const AdamConfig& cfg) {
    auto it = state.slots.find(name);
    if (it == state.slots.end()) {
        OptimizerState::Slot slot;
        slot.m = Tensor(param.shape());
        slot.v = Tensor(param.shape());
        it = state.slots.emplace(name, std::move(slot)).first;
    }
    OptimizerState::Slot& s = it->second;
    s.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.step));
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad[i];
        s.m[i] = cfg.beta1 * s.m[i] + (1.0 - cfg.beta1) * g;
        s.v[i] = cfg.beta2 * s.v[i] + (1.0 - cfg.beta2) * g * g;
        const double mhat = s.m[i] / bc1;
        const double vhat = s.v[i] / bc2;
        param[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
}

}  // namespace dasp
