#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ecomp/loss.hpp"
#include "ecomp/network.hpp"

namespace ecomp {

struct GradCheckLayer {
    std::size_t layer_index = 0;
    std::string kind;
    double max_rel_err = 0;
    std::size_t n_checked = 0;
    std::size_t n_unstable = 0;  // elements where FD itself is invalid (kink straddled)
};

struct GradCheckReport {
    std::vector<GradCheckLayer> layers;
    double max_rel_err = 0;
    std::size_t n_checked = 0;
    std::size_t n_unstable = 0;
};

inline double rel_err(double a, double n) { return std::abs(a - n) / std::max(std::abs(a) + std::abs(n), 1e-6); }

/// Zero-initialized biases put every dead unit's preactivation exactly on
/// the relu kink, where no finite-difference probe is valid. Shifting biases
/// to random nonzero values makes the check point differentiable without
/// touching the math being verified.
template <typename T>
void randomize_biases(NetworkT<T>& net, std::uint64_t seed) {
    Rng rng = make_rng(seed);
    for (std::size_t li = 0; li < net.n_layers(); ++li) {
        auto ps = net.layer(li).params();
        if (ps.empty()) continue;
        for (auto& v : ps[1]->data) v = static_cast<T>(uniform_real(rng, -0.1, 0.1));
    }
}

/// Central-difference check of analytic parameter gradients on a double
/// precision net. Perturbs every parameter element of every layer.
///
/// A perturbation can push a relu input or a pool near-tie across its kink,
/// in which case the difference quotient measures a slope average, not the
/// gradient. Such points are detected by re-evaluating at h/2: a quotient
/// that moves by more than `tol` between step sizes is not a valid probe and
/// the element is counted as unstable instead of failed. A wrong analytic
/// gradient cannot hide this way, since both quotients then agree with each
/// other and disagree with it.
inline GradCheckReport gradient_check(NetworkT<double>& net, const TensorT<double>& batch,
                                      const std::vector<int>& targets, double h = 1e-5, double tol = 1e-4) {
    auto loss_at = [&]() {
        TensorT<double> logits = net.forward(batch);
        return softmax_cross_entropy(logits, targets).loss;
    };
    auto quotient = [&](double* slot, double orig, double step) {
        *slot = orig + step;
        const double lp = loss_at();
        *slot = orig - step;
        const double lm = loss_at();
        *slot = orig;
        return (lp - lm) / (2.0 * step);
    };

    auto res = softmax_cross_entropy(net.forward(batch), targets);
    net.backward(res.grad_logits);

    GradCheckReport report;
    for (std::size_t li = 0; li < net.n_layers(); ++li) {
        auto ps = net.layer(li).params();
        if (ps.empty()) continue;
        GradCheckLayer row;
        row.layer_index = li;
        row.kind = layer_kind_name(net.layer(li).spec().kind);
        for (auto* p : ps) {
            std::vector<double> analytic = p->grad;
            for (std::size_t i = 0; i < p->numel(); ++i) {
                const double orig = p->data[i];
                const double n1 = quotient(&p->data[i], orig, h);
                double err = rel_err(analytic[i], n1);
                if (err > tol) {
                    const double n2 = quotient(&p->data[i], orig, h / 2);
                    if (rel_err(n1, n2) > tol) {
                        ++row.n_unstable;
                        ++row.n_checked;
                        continue;
                    }
                    err = rel_err(analytic[i], n2);
                }
                row.max_rel_err = std::max(row.max_rel_err, err);
                ++row.n_checked;
            }
        }
        report.max_rel_err = std::max(report.max_rel_err, row.max_rel_err);
        report.n_checked += row.n_checked;
        report.n_unstable += row.n_unstable;
        report.layers.push_back(row);
    }
    // restore caches/grads to the unperturbed state
    auto res2 = softmax_cross_entropy(net.forward(batch), targets);
    net.backward(res2.grad_logits);
    return report;
}

}  // namespace ecomp
