#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "model.hpp"

namespace domada {

struct AdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 1.0;  // <= 0 disables clipping
};

/// First and second moments, shaped like make_gradients(model).
template <class T>
struct AdamState {
    std::uint64_t step = 0;
    ModelState<T> m;
    ModelState<T> v;

    bool initialized() const noexcept { return !m.blocks.empty() || !m.tok_emb.empty() || !m.lm_head.empty(); }
    bool operator==(const AdamState&) const = default;
};

template <class T>
AdamState<T> make_adam_state(const ModelState<T>& model) {
    return {0, make_gradients(model), make_gradients(model)};
}

template <class T>
double gradient_norm(const ModelState<T>& grads) {
    double sq = 0.0;
    visit_tensors(grads, [&](const std::string&, const auto&, const Matrix<T>& m, bool) {
        for (T g : m.data) sq += static_cast<double>(g) * static_cast<double>(g);
    });
    return std::sqrt(sq);
}

/// One clipped Adam update of the trainable tensors. Returns the pre-clip
/// gradient norm. Frozen tensors are never touched.
template <class T>
double adam_step(ModelState<T>& model, ModelState<T>& grads, AdamState<T>& state, const AdamConfig& cfg) {
    if (!state.initialized()) state = make_adam_state(model);
    const double norm = gradient_norm(grads);
    if (cfg.clip_norm > 0.0 && norm > cfg.clip_norm) {
        const T factor = static_cast<T>(cfg.clip_norm / norm);
        visit_tensors(grads, [&](const std::string&, const auto&, Matrix<T>& m, bool) {
            for (auto& g : m.data) g *= factor;
        });
    }
    ++state.step;
    const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
    const T c1 = static_cast<T>(1.0 - std::pow(cfg.beta1, static_cast<double>(state.step)));
    const T c2 = static_cast<T>(1.0 - std::pow(cfg.beta2, static_cast<double>(state.step)));
    const T lr = static_cast<T>(cfg.learning_rate), eps = static_cast<T>(cfg.eps);

    std::vector<Matrix<T>*> params, gs, ms, vs;
    visit_tensors(model, [&](const std::string&, const auto&, Matrix<T>& m, bool trainable) {
        params.push_back(trainable ? &m : nullptr);
    });
    visit_tensors(grads, [&](const std::string&, const auto&, Matrix<T>& m, bool) { gs.push_back(&m); });
    visit_tensors(state.m, [&](const std::string&, const auto&, Matrix<T>& m, bool) { ms.push_back(&m); });
    visit_tensors(state.v, [&](const std::string&, const auto&, Matrix<T>& m, bool) { vs.push_back(&m); });
    for (std::size_t t = 0; t < params.size(); ++t) {
        if (params[t] == nullptr) continue;
        auto& p = params[t]->data;
        const auto& g = gs[t]->data;
        auto& m = ms[t]->data;
        auto& v = vs[t]->data;
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = b1 * m[i] + (T(1) - b1) * g[i];
            v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
            const T mhat = m[i] / c1;
            const T vhat = v[i] / c2;
            p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
    return norm;
}

}  // namespace domada
