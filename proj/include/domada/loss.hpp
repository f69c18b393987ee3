#pragma once

#include <cmath>
#include <cstdint>
#include <span>

#include "error.hpp"
#include "tensor.hpp"
#include "vocabulary.hpp"

namespace domada {

/// Sum of -log softmax(logits[i-1])[tokens[i]] over i in [first, last).
/// When `dlogits` is given, adds scale * (softmax - onehot) to the rows used.
template <class T>
double token_nll_sum(const Matrix<T>& logits, std::span<const std::uint32_t> tokens, std::size_t first,
                     std::size_t last, T scale = T(1), Matrix<T>* dlogits = nullptr) {
    if (logits.rows != tokens.size()) throw InvalidArgument("loss: logits rows must match sequence length");
    if (first < 1 || last > tokens.size() || first > last) throw InvalidArgument("loss: bad target range");
    double total = 0.0;
    for (std::size_t i = first; i < last; ++i) {
        const auto row = logits.row(i - 1);
        const auto target = tokens[i];
        if (target >= logits.cols) throw InvalidArgument("loss: target id out of range");
        // Normalizer accumulated in double regardless of T.
        double mx = static_cast<double>(row[0]);
        for (T v : row) mx = std::max(mx, static_cast<double>(v));
        double z = 0.0;
        for (T v : row) z += std::exp(static_cast<double>(v) - mx);
        const double log_z = mx + std::log(z);
        total += log_z - static_cast<double>(row[target]);
        if (dlogits != nullptr) {
            auto g = dlogits->row(i - 1);
            for (std::size_t j = 0; j < row.size(); ++j)
                g[j] += scale * static_cast<T>(std::exp(static_cast<double>(row[j]) - log_z));
            g[target] -= scale;
        }
    }
    return total;
}

/// Mean next-token negative log-likelihood over every non-BOS token; the
/// prediction for tokens[i] comes from logits row i-1.
template <class T>
double clm_loss(const Matrix<T>& logits, std::span<const std::uint32_t> tokens) {
    if (tokens.empty() || tokens.front() != kBosId) throw InvalidArgument("clm_loss: sequence must begin with BOS");
    const std::size_t n = tokens.size() - 1;
    if (n == 0) throw InvalidArgument("clm_loss: no tokens to predict");
    return token_nll_sum(logits, tokens, 1, tokens.size()) / static_cast<double>(n);
}

/// Mean negative log-likelihood of the response only. The sequence is
/// BOS, m prompt tokens, n response tokens; prompt tokens are context only.
template <class T>
double sft_loss(const Matrix<T>& logits, std::span<const std::uint32_t> tokens, std::size_t prompt_len,
                std::size_t response_len) {
    if (response_len == 0) throw InvalidArgument("sft_loss: response must be non-empty");
    if (tokens.empty() || tokens.front() != kBosId) throw InvalidArgument("sft_loss: sequence must begin with BOS");
    if (tokens.size() != 1 + prompt_len + response_len)
        throw InvalidArgument("sft_loss: sequence length must equal 1 + prompt_len + response_len");
    return token_nll_sum(logits, tokens, 1 + prompt_len, tokens.size()) / static_cast<double>(response_len);
}

}  // namespace domada
