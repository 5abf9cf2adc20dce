#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecomp/tensor.hpp"

namespace ecomp {

/// Numerically safe softmax of one row (max subtraction).
template <typename T>
std::vector<T> softmax_row(const T* logits, int n) {
    T mx = logits[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
    std::vector<T> p(static_cast<std::size_t>(n));
    T sum = 0;
    for (int i = 0; i < n; ++i) {
        p[static_cast<std::size_t>(i)] = std::exp(logits[i] - mx);
        sum += p[static_cast<std::size_t>(i)];
    }
    for (auto& v : p) v /= sum;
    return p;
}

template <typename T>
struct LossResult {
    double loss = 0;         // mean over the batch
    TensorT<T> grad_logits;  // d(mean loss)/d(logits), shape [B,K]
};

/// Mean softmax cross-entropy over a batch of [B,K] logits.
template <typename T>
LossResult<T> softmax_cross_entropy(const TensorT<T>& logits, const std::vector<int>& targets) {
    if (logits.shape.size() != 2)
        throw std::invalid_argument("cross_entropy: logits must be [B,K], got " + shape_str(logits.shape));
    const int B = logits.shape[0], K = logits.shape[1];
    if (static_cast<int>(targets.size()) != B)
        throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) + " targets for batch " +
                                    std::to_string(B));
    LossResult<T> res;
    res.grad_logits = TensorT<T>({B, K});
    double total = 0;
    for (int b = 0; b < B; ++b) {
        const int t = targets[static_cast<std::size_t>(b)];
        if (t < 0 || t >= K)
            throw std::invalid_argument("cross_entropy: target " + std::to_string(t) + " out of range [0," +
                                        std::to_string(K) + ")");
        const T* row = logits.data.data() + static_cast<std::size_t>(b) * K;
        T mx = row[0];
        for (int i = 1; i < K; ++i) mx = std::max(mx, row[i]);
        double sum = 0;
        for (int i = 0; i < K; ++i) sum += std::exp(static_cast<double>(row[i] - mx));
        total += std::log(sum) - static_cast<double>(row[t] - mx);
        T* g = res.grad_logits.data.data() + static_cast<std::size_t>(b) * K;
        for (int i = 0; i < K; ++i)
            g[i] = static_cast<T>(std::exp(static_cast<double>(row[i] - mx)) / sum / static_cast<double>(B));
        g[t] -= static_cast<T>(1.0 / B);
    }
    res.loss = total / B;
    return res;
}

}  // namespace ecomp
