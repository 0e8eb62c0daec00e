#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "basisloss/numeric.hpp"

namespace basisloss {

enum class OptimizerKind { Adam, Sgd };
enum class DecayMode { Decoupled, Coupled };

inline std::string_view optimizer_name(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "sgd"; }
inline std::string_view decay_mode_name(DecayMode m) {
    return m == DecayMode::Decoupled ? "decoupled" : "coupled";
}

struct OptimizerSettings {
    OptimizerKind kind = OptimizerKind::Adam;
    double learning_rate = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;
    DecayMode decay_mode = DecayMode::Decoupled;
};

/// One parameter tensor and its gradient. `decay` marks weight matrices.
struct ParamSlot {
    std::span<double> values;
    std::span<const double> grads;
    bool decay = false;
};

struct OptimizerState {
    OptimizerSettings settings;
    std::vector<Vector> first_moment;
    std::vector<Vector> second_moment;
    std::size_t step = 0;

    explicit OptimizerState(OptimizerSettings s = {}) : settings(s) {}
};

namespace detail {

inline void check_slots(OptimizerState& state, std::span<const ParamSlot> slots) {
    if (state.first_moment.empty()) {
        for (const auto& s : slots) {
            state.first_moment.emplace_back(s.values.size(), 0.0);
            state.second_moment.emplace_back(s.values.size(), 0.0);
        }
    }
    if (state.first_moment.size() != slots.size())
        throw ShapeMismatch("optimizer was built for " + std::to_string(state.first_moment.size()) +
                            " parameters, got " + std::to_string(slots.size()));
    for (std::size_t p = 0; p < slots.size(); ++p) {
        if (slots[p].values.size() != slots[p].grads.size() ||
            slots[p].values.size() != state.first_moment[p].size())
            throw ShapeMismatch("parameter " + std::to_string(p) + " changed shape");
    }
}

}  // namespace detail

/// Adam with bias correction. Decoupled decay applies
/// theta <- theta - lr * wd * theta after the gradient step; coupled decay
/// adds wd * theta to the gradient. Only slots marked `decay` are decayed.
inline void adam_step(OptimizerState& state, std::span<const ParamSlot> slots) {
    detail::check_slots(state, slots);
    const auto& s = state.settings;
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(s.beta1, t);
    const double correction2 = 1.0 - std::pow(s.beta2, t);
    for (std::size_t p = 0; p < slots.size(); ++p) {
        auto theta = slots[p].values;
        const auto grad = slots[p].grads;
        auto& m = state.first_moment[p];
        auto& v = state.second_moment[p];
        const bool decay = slots[p].decay && s.weight_decay > 0.0;
        for (std::size_t k = 0; k < theta.size(); ++k) {
            double g = grad[k];
            if (decay && s.decay_mode == DecayMode::Coupled) g += s.weight_decay * theta[k];
            m[k] = s.beta1 * m[k] + (1.0 - s.beta1) * g;
            v[k] = s.beta2 * v[k] + (1.0 - s.beta2) * g * g;
            const double m_hat = m[k] / correction1;
            const double v_hat = v[k] / correction2;
            theta[k] -= s.learning_rate * m_hat / (std::sqrt(v_hat) + s.epsilon);
            if (decay && s.decay_mode == DecayMode::Decoupled)
                theta[k] -= s.learning_rate * s.weight_decay * theta[k];
        }
    }
}

inline void sgd_step(OptimizerState& state, std::span<const ParamSlot> slots) {
    detail::check_slots(state, slots);
    const auto& s = state.settings;
    ++state.step;
    for (const auto& slot : slots) {
        const bool decay = slot.decay && s.weight_decay > 0.0;
        for (std::size_t k = 0; k < slot.values.size(); ++k) {
            double g = slot.grads[k];
            if (decay && s.decay_mode == DecayMode::Coupled) g += s.weight_decay * slot.values[k];
            slot.values[k] -= s.learning_rate * g;
            if (decay && s.decay_mode == DecayMode::Decoupled)
                slot.values[k] -= s.learning_rate * s.weight_decay * slot.values[k];
        }
    }
}

inline void optimizer_step(OptimizerState& state, std::span<const ParamSlot> slots) {
    if (state.settings.kind == OptimizerKind::Adam)
        adam_step(state, slots);
    else
        sgd_step(state, slots);
}

}  // namespace basisloss
