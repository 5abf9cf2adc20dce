#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecomp/layers.hpp"
#include "ecomp/rng.hpp"
#include "ecomp/tensor.hpp"

namespace ecomp {

/// Sequential net over [B,C,H,W] batches. Layer chain is shape-checked at
/// construction against the declared per-sample input shape.
template <typename T>
class NetworkT {
public:
    NetworkT() = default;

    NetworkT(std::vector<LayerSpec> specs, std::vector<int> input_shape)
        : specs_(std::move(specs)), input_shape_(std::move(input_shape)) {
        if (input_shape_.size() != 3)
            throw std::invalid_argument("network: input shape must be [C,H,W], got " + shape_str(input_shape_));
        if (specs_.empty()) throw std::invalid_argument("network: empty layer list");
        std::vector<int> cur = {1, input_shape_[0], input_shape_[1], input_shape_[2]};
        for (std::size_t i = 0; i < specs_.size(); ++i) {
            layers_.push_back(make_layer<T>(specs_[i]));
            cur = layers_.back()->output_shape(
                cur, "layer " + std::to_string(i) + " (" + layer_kind_name(specs_[i].kind) + ")");
        }
        if (cur.size() != 2)
            throw std::invalid_argument("network: final layer must emit [B,K] logits, got " + shape_str(cur));
        n_classes_ = cur[1];
    }

    NetworkT(const NetworkT& other)
        : specs_(other.specs_), input_shape_(other.input_shape_), n_classes_(other.n_classes_) {
        layers_.reserve(other.layers_.size());
        for (const auto& l : other.layers_) layers_.push_back(l->clone());
    }
    NetworkT& operator=(const NetworkT& other) {
        if (this != &other) {
            NetworkT tmp(other);
            *this = std::move(tmp);
        }
        return *this;
    }
    NetworkT(NetworkT&&) noexcept = default;
    NetworkT& operator=(NetworkT&&) noexcept = default;

    const std::vector<LayerSpec>& specs() const { return specs_; }
    const std::vector<int>& input_shape() const { return input_shape_; }
    int n_classes() const { return n_classes_; }
    std::size_t n_layers() const { return layers_.size(); }
    Layer<T>& layer(std::size_t i) { return *layers_.at(i); }

    TensorT<T> forward(const TensorT<T>& batch) { return forward_prefix(batch, layers_.size()); }

    /// Runs the first n_layers only; used to expose penultimate activations.
    TensorT<T> forward_prefix(const TensorT<T>& batch, std::size_t n_layers) {
        if (batch.shape.size() != 4 || batch.shape[1] != input_shape_[0] || batch.shape[2] != input_shape_[1] ||
            batch.shape[3] != input_shape_[2])
            throw std::invalid_argument("network: expected batch [B," + shape_str(input_shape_) + "], got " +
                                        shape_str(batch.shape));
        if (n_layers > layers_.size()) throw std::invalid_argument("network: prefix longer than net");
        TensorT<T> cur = batch;
        for (std::size_t i = 0; i < n_layers; ++i) cur = layers_[i]->forward(cur);
        forwarded_ = (n_layers == layers_.size());
        if (forwarded_ && !cur.all_finite()) throw std::runtime_error("network: non-finite logits");
        return cur;
    }

    /// Grads are assigned (not accumulated); calling twice after one forward
    /// just recomputes the same values.
    TensorT<T> backward(const TensorT<T>& grad_logits) {
        if (!forwarded_) throw std::logic_error("network: backward before forward");
        TensorT<T> g = grad_logits;
        for (std::size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(g);
        return g;
    }

    std::vector<TensorT<T>*> parameters() {
        std::vector<TensorT<T>*> out;
        for (auto& l : layers_)
            for (auto* p : l->params()) out.push_back(p);
        return out;
    }

    std::size_t parameter_count() {
        std::size_t n = 0;
        for (auto* p : parameters()) n += p->numel();
        return n;
    }

    std::vector<T> parameters_flat() {
        std::vector<T> out;
        out.reserve(parameter_count());
        for (auto* p : parameters()) out.insert(out.end(), p->data.begin(), p->data.end());
        return out;
    }

    void set_parameters_flat(const std::vector<T>& flat) {
        if (flat.size() != parameter_count())
            throw std::invalid_argument("network: flat parameter size " + std::to_string(flat.size()) +
                                        " != " + std::to_string(parameter_count()));
        std::size_t off = 0;
        for (auto* p : parameters()) {
            std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
                      flat.begin() + static_cast<std::ptrdiff_t>(off + p->numel()), p->data.begin());
            off += p->numel();
        }
    }

    /// Kaiming-uniform fan-in on weights (bound sqrt(6/fan_in)), zero biases.
    /// Draw order is fixed: layers in order, weight elements in storage order.
    void init_kaiming(std::uint64_t seed) {
        Rng rng = make_rng(seed);
        for (auto& l : layers_) {
            auto ps = l->params();
            if (ps.empty()) continue;
            TensorT<T>* w = ps[0];
            TensorT<T>* b = ps[1];
            std::size_t fan_in = 1;
            for (std::size_t i = 1; i < w->shape.size(); ++i) fan_in *= static_cast<std::size_t>(w->shape[i]);
            const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
            for (auto& v : w->data) v = static_cast<T>(uniform_real(rng, -bound, bound));
            std::fill(b->data.begin(), b->data.end(), T(0));
        }
    }

    template <typename U>
    NetworkT<U> cast() const {
        NetworkT<U> out(specs_, input_shape_);
        NetworkT<T> self(*this);  // non-const params() access
        auto src = self.parameters();
        auto dst = out.parameters();
        for (std::size_t i = 0; i < src.size(); ++i) {
            TensorT<U> c = src[i]->template cast<U>();
            dst[i]->data = std::move(c.data);
        }
        return out;
    }

private:
    std::vector<LayerSpec> specs_;
    std::vector<int> input_shape_;
    std::vector<std::unique_ptr<Layer<T>>> layers_;
    int n_classes_ = 0;
    bool forwarded_ = false;
};

using Network = NetworkT<float>;

/// conv(1->8) relu pool conv(8->16) relu pool flatten dense(->64) relu dense(->K)
inline std::vector<LayerSpec> micro_cnn_spec(int in_h, int in_w, int n_classes) {
    const int feat = 16 * (in_h / 4) * (in_w / 4);
    return {LayerSpec::conv2d(1, 8),  LayerSpec::relu(),   LayerSpec::maxpool2d(),
            LayerSpec::conv2d(8, 16), LayerSpec::relu(),   LayerSpec::maxpool2d(),
            LayerSpec::flatten(),     LayerSpec::dense(feat, 64), LayerSpec::relu(),
            LayerSpec::dense(64, n_classes)};
}

/// Same trunk behind a leading 2x2 pool, so a net trained at half resolution
/// shares every trunk weight shape with this one.
inline std::vector<LayerSpec> composite_cnn_spec(int in_h, int in_w, int n_classes) {
    std::vector<LayerSpec> specs = micro_cnn_spec(in_h / 2, in_w / 2, n_classes);
    specs.insert(specs.begin(), LayerSpec::maxpool2d());
    return specs;
}

}  // namespace ecomp
