#pragma once

#include <cstdint>
#include <optional>

#include "error.hpp"
#include "random.hpp"
#include "tensor.hpp"

namespace domada {

/// Linear map h = W x + (alpha / r) B A drop(x) with W frozen.
/// A layer with rank 0 carries no adapter and is a plain frozen linear map.
template <class T>
struct LoraLayer {
    Matrix<T> weight;  // W, d1 x d2
    Matrix<T> lora_a;  // A, r x d2
    Matrix<T> lora_b;  // B, d1 x r
    std::size_t rank = 0;
    T alpha = T(0);
    T dropout = T(0);

    std::size_t out_features() const noexcept { return weight.rows; }
    std::size_t in_features() const noexcept { return weight.cols; }
    bool has_adapter() const noexcept { return rank > 0; }
    T scale() const noexcept { return has_adapter() ? alpha / static_cast<T>(rank) : T(0); }
    std::size_t trainable_count() const noexcept { return rank * (out_features() + in_features()); }

    /// Removes the adapter, leaving the base map.
    LoraLayer base() const {
        LoraLayer b;
        b.weight = weight;
        return b;
    }

    bool operator==(const LoraLayer&) const = default;
};

/// A ~ N(0, 0.02^2) from a generator seeded with `seed`; B = 0.
template <class T>
LoraLayer<T> init_lora(Matrix<T> weight, std::size_t rank, T alpha, std::uint64_t seed, T dropout = T(0)) {
    const auto d1 = weight.rows, d2 = weight.cols;
    if (rank < 1 || rank > std::min(d1, d2))
        throw InvalidArgument("init_lora: rank " + std::to_string(rank) + " outside [1, " +
                              std::to_string(std::min(d1, d2)) + "]");
    if (!(dropout >= T(0) && dropout < T(1))) throw InvalidArgument("init_lora: dropout must be in [0, 1)");
    LoraLayer<T> layer;
    layer.weight = std::move(weight);
    layer.rank = rank;
    layer.alpha = alpha;
    layer.dropout = dropout;
    layer.lora_a = Matrix<T>(rank, d2);
    layer.lora_b = Matrix<T>(d1, rank);
    Rng rng(seed);
    for (auto& v : layer.lora_a.data) v = static_cast<T>(0.02 * rng.normal());
    return layer;
}

template <class T>
LoraLayer<T> init_lora(std::size_t d1, std::size_t d2, std::size_t rank, T alpha, std::uint64_t seed) {
    return init_lora(Matrix<T>(d1, d2), rank, alpha, seed);
}

/// Dense equivalent W + (alpha / r) B A. Does not modify the layer.
template <class T>
Matrix<T> merge_weights(const LoraLayer<T>& layer) {
    Matrix<T> merged = layer.weight;
    if (!layer.has_adapter()) return merged;
    const T s = layer.scale();
    for (std::size_t i = 0; i < merged.rows; ++i)
        for (std::size_t j = 0; j < merged.cols; ++j) {
            T acc = 0;
            for (std::size_t k = 0; k < layer.rank; ++k) acc += layer.lora_b(i, k) * layer.lora_a(k, j);
            merged(i, j) += s * acc;
        }
    return merged;
}

/// Values the backward pass needs from a forward call.
template <class T>
struct LoraCache {
    Matrix<T> dropped;              // drop(x), n x d2
    Matrix<T> projected;            // drop(x) A^T, n x r
    std::vector<T> keep_scale;      // per element of x: 0 or 1/(1-p); empty when no dropout
};

/// Rows of `x` are inputs. Dropout on the adapter input only applies when
/// `training` is set and an `rng` is supplied; evaluation is deterministic.
template <class T>
Matrix<T> lora_forward(const LoraLayer<T>& layer, const Matrix<T>& x, bool training, Rng* rng = nullptr,
                       LoraCache<T>* cache = nullptr) {
    if (x.cols != layer.in_features())
        throw InvalidArgument("lora_forward: input has " + std::to_string(x.cols) + " features, layer expects " +
                              std::to_string(layer.in_features()));
    Matrix<T> h = matmul_nt(x, layer.weight);
    if (!layer.has_adapter()) return h;

    Matrix<T> dropped = x;
    std::vector<T> keep;
    if (training && layer.dropout > T(0) && rng != nullptr) {
        keep.resize(x.size());
        const T inv = T(1) / (T(1) - layer.dropout);
        for (std::size_t i = 0; i < x.size(); ++i) {
            keep[i] = rng->uniform() < static_cast<double>(layer.dropout) ? T(0) : inv;
            dropped.data[i] *= keep[i];
        }
    }
    Matrix<T> u = matmul_nt(dropped, layer.lora_a);
    Matrix<T> delta = matmul_nt(u, layer.lora_b);
    const T s = layer.scale();
    for (std::size_t i = 0; i < h.size(); ++i) h.data[i] += s * delta.data[i];
    if (cache != nullptr) {
        cache->dropped = std::move(dropped);
        cache->projected = std::move(u);
        cache->keep_scale = std::move(keep);
    }
    return h;
}

/// Given dL/dh, accumulates dL/dA and dL/dB (when non-null) and returns dL/dx.
template <class T>
Matrix<T> lora_backward(const LoraLayer<T>& layer, const LoraCache<T>& cache, const Matrix<T>& dh, Matrix<T>* grad_a,
                        Matrix<T>* grad_b) {
    Matrix<T> dx = matmul_nn(dh, layer.weight);
    if (!layer.has_adapter()) return dx;
    const T s = layer.scale();
    // du = s * dh B ; dB += s * dh^T u ; dA += du^T drop(x) ; d drop(x) = du A
    Matrix<T> du = matmul_nn(dh, layer.lora_b);
    for (auto& v : du.data) v *= s;
    if (grad_b != nullptr) {
        Matrix<T> scaled = dh;
        for (auto& v : scaled.data) v *= s;
        accumulate_tn(*grad_b, scaled, cache.projected);
    }
    if (grad_a != nullptr) accumulate_tn(*grad_a, du, cache.dropped);
    Matrix<T> ddrop = matmul_nn(du, layer.lora_a);
    if (!cache.keep_scale.empty())
        for (std::size_t i = 0; i < ddrop.size(); ++i) ddrop.data[i] *= cache.keep_scale[i];
    add_inplace(dx, ddrop);
    return dx;
}

}  // namespace domada
