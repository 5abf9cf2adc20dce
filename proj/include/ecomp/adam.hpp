#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecomp/tensor.hpp"

namespace ecomp {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam over a fixed set of parameter tensors. Reads each tensor's .grad,
/// which must be populated (backward assigns it). Aborts on non-finite grads
/// so a diverged run fails loudly instead of training on garbage.
template <typename T>
class AdamT {
public:
    AdamT(std::vector<TensorT<T>*> params, AdamConfig cfg = {}) : params_(std::move(params)), cfg_(cfg) {
        for (auto* p : params_) {
            m_.emplace_back(p->numel(), 0.0);
            v_.emplace_back(p->numel(), 0.0);
        }
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
        const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
        for (std::size_t pi = 0; pi < params_.size(); ++pi) {
            TensorT<T>* p = params_[pi];
            if (p->grad.size() != p->numel())
                throw std::logic_error("adam: parameter " + std::to_string(pi) + " has no gradient");
            auto& m = m_[pi];
            auto& v = v_[pi];
            for (std::size_t i = 0; i < p->numel(); ++i) {
                const double g = static_cast<double>(p->grad[i]);
                if (!std::isfinite(g)) throw std::runtime_error("adam: non-finite gradient at step " + std::to_string(t_));
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                p->data[i] = static_cast<T>(static_cast<double>(p->data[i]) - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
            }
        }
    }

    long step_count() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

private:
    std::vector<TensorT<T>*> params_;
    AdamConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    long t_ = 0;
};

using Adam = AdamT<float>;

}  // namespace ecomp
