#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecomp/tensor.hpp"

namespace ecomp {

enum class LayerKind { conv2d, relu, maxpool2d, flatten, dense };

inline const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::relu: return "relu";
        case LayerKind::maxpool2d: return "maxpool2d";
        case LayerKind::flatten: return "flatten";
        case LayerKind::dense: return "dense";
    }
    return "?";
}

inline LayerKind layer_kind_from(const std::string& s) {
    if (s == "conv2d") return LayerKind::conv2d;
    if (s == "relu") return LayerKind::relu;
    if (s == "maxpool2d") return LayerKind::maxpool2d;
    if (s == "flatten") return LayerKind::flatten;
    if (s == "dense") return LayerKind::dense;
    throw std::invalid_argument("unknown layer kind: " + s);
}

/// conv2d is fixed at kernel 3x3, stride 1, padding 1; maxpool2d at
/// window 2x2, stride 2. Only the channel / feature dims are configurable.
struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    int in_channels = 0, out_channels = 0;  // conv2d
    int in_dim = 0, out_dim = 0;            // dense

    static LayerSpec conv2d(int in_ch, int out_ch) {
        LayerSpec s;
        s.kind = LayerKind::conv2d;
        s.in_channels = in_ch;
        s.out_channels = out_ch;
        return s;
    }
    static LayerSpec relu() { return LayerSpec{LayerKind::relu}; }
    static LayerSpec maxpool2d() { return LayerSpec{LayerKind::maxpool2d}; }
    static LayerSpec flatten() { return LayerSpec{LayerKind::flatten}; }
    static LayerSpec dense(int in_dim, int out_dim) {
        LayerSpec s;
        s.kind = LayerKind::dense;
        s.in_dim = in_dim;
        s.out_dim = out_dim;
        return s;
    }

    bool operator==(const LayerSpec&) const = default;
};

template <typename T>
class Layer {
public:
    virtual ~Layer() = default;
    virtual LayerSpec spec() const = 0;
    /// Output shape for a [B,...] input shape; throws naming the layer on mismatch.
    virtual std::vector<int> output_shape(const std::vector<int>& in, const std::string& where) const = 0;
    virtual TensorT<T> forward(const TensorT<T>& in) = 0;
    /// Returns grad wrt input; parameter grads are (re)assigned, not accumulated.
    virtual TensorT<T> backward(const TensorT<T>& grad_out) = 0;
    virtual std::vector<TensorT<T>*> params() { return {}; }
    virtual std::unique_ptr<Layer<T>> clone() const = 0;

protected:
    static void expect(bool ok, const std::string& msg) {
        if (!ok) throw std::invalid_argument(msg);
    }
};

// ---------------------------------------------------------------------------

template <typename T>
class Conv2d final : public Layer<T> {
public:
    Conv2d(int in_ch, int out_ch)
        : in_ch_(in_ch), out_ch_(out_ch), weight_({out_ch, in_ch, 3, 3}), bias_({out_ch}) {}

    LayerSpec spec() const override { return LayerSpec::conv2d(in_ch_, out_ch_); }

    std::vector<int> output_shape(const std::vector<int>& in, const std::string& where) const override {
        this->expect(in.size() == 4 && in[1] == in_ch_,
                     where + ": conv2d expects [B," + std::to_string(in_ch_) + ",H,W], got " + shape_str(in));
        return {in[0], out_ch_, in[2], in[3]};
    }

    TensorT<T> forward(const TensorT<T>& in) override {
        input_ = in;
        const int B = in.shape[0], H = in.shape[2], W = in.shape[3];
        TensorT<T> out({B, out_ch_, H, W});
        const std::size_t in_plane = static_cast<std::size_t>(H) * W;
        for (int b = 0; b < B; ++b)
            for (int o = 0; o < out_ch_; ++o) {
                T* op = out.data.data() + ((static_cast<std::size_t>(b) * out_ch_ + o) * in_plane);
                const T bv = bias_.data[static_cast<std::size_t>(o)];
                for (std::size_t i = 0; i < in_plane; ++i) op[i] = bv;
                for (int c = 0; c < in_ch_; ++c) {
                    const T* ip = in.data.data() + ((static_cast<std::size_t>(b) * in_ch_ + c) * in_plane);
                    const T* wp = weight_.data.data() + ((static_cast<std::size_t>(o) * in_ch_ + c) * 9);
                    accumulate_conv(op, ip, wp, H, W);
                }
            }
        return out;
    }

    TensorT<T> backward(const TensorT<T>& grad_out) override {
        this->expect(input_.numel() > 0, "conv2d: backward before forward");
        const int B = input_.shape[0], H = input_.shape[2], W = input_.shape[3];
        this->expect(grad_out.shape == std::vector<int>({B, out_ch_, H, W}),
                     "conv2d: grad_out shape " + shape_str(grad_out.shape) + " mismatch");
        weight_.ensure_grad();
        bias_.ensure_grad();
        std::fill(weight_.grad.begin(), weight_.grad.end(), T(0));
        std::fill(bias_.grad.begin(), bias_.grad.end(), T(0));
        TensorT<T> grad_in(input_.shape);
        const std::size_t plane = static_cast<std::size_t>(H) * W;
        for (int b = 0; b < B; ++b)
            for (int o = 0; o < out_ch_; ++o) {
                const T* gp = grad_out.data.data() + ((static_cast<std::size_t>(b) * out_ch_ + o) * plane);
                T gb = 0;
                for (std::size_t i = 0; i < plane; ++i) gb += gp[i];
                bias_.grad[static_cast<std::size_t>(o)] += gb;
                for (int c = 0; c < in_ch_; ++c) {
                    const T* ip = input_.data.data() + ((static_cast<std::size_t>(b) * in_ch_ + c) * plane);
                    T* gip = grad_in.data.data() + ((static_cast<std::size_t>(b) * in_ch_ + c) * plane);
                    T* gwp = weight_.grad.data() + ((static_cast<std::size_t>(o) * in_ch_ + c) * 9);
                    const T* wp = weight_.data.data() + ((static_cast<std::size_t>(o) * in_ch_ + c) * 9);
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx) {
                            const int y_lo = std::max(0, 1 - ky), y_hi = std::min(H - 1, H - ky);
                            const int x_lo = std::max(0, 1 - kx), x_hi = std::min(W - 1, W - kx);
                            const T wv = wp[ky * 3 + kx];
                            T gw = 0;
                            for (int y = y_lo; y <= y_hi; ++y) {
                                const T* grow = gp + static_cast<std::size_t>(y) * W + x_lo;
                                const T* irow = ip + static_cast<std::size_t>(y + ky - 1) * W + (x_lo + kx - 1);
                                T* girow = gip + static_cast<std::size_t>(y + ky - 1) * W + (x_lo + kx - 1);
                                const int n = x_hi - x_lo + 1;
                                for (int x = 0; x < n; ++x) {
                                    gw += grow[x] * irow[x];
                                    girow[x] += grow[x] * wv;
                                }
                            }
                            gwp[ky * 3 + kx] += gw;
                        }
                }
            }
        return grad_in;
    }

    std::vector<TensorT<T>*> params() override { return {&weight_, &bias_}; }

    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Conv2d<T>>(*this); }

    TensorT<T>& weight() { return weight_; }
    TensorT<T>& bias() { return bias_; }

private:
    static void accumulate_conv(T* out_plane, const T* in_plane, const T* kernel, int H, int W) {
        for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
                const int y_lo = std::max(0, 1 - ky), y_hi = std::min(H - 1, H - ky);
                const int x_lo = std::max(0, 1 - kx), x_hi = std::min(W - 1, W - kx);
                const T wv = kernel[ky * 3 + kx];
                for (int y = y_lo; y <= y_hi; ++y) {
                    T* dst = out_plane + static_cast<std::size_t>(y) * W + x_lo;
                    const T* src = in_plane + static_cast<std::size_t>(y + ky - 1) * W + (x_lo + kx - 1);
                    const int n = x_hi - x_lo + 1;
                    for (int x = 0; x < n; ++x) dst[x] += wv * src[x];
                }
            }
    }

    int in_ch_, out_ch_;
    TensorT<T> weight_, bias_;
    TensorT<T> input_;
};

// ---------------------------------------------------------------------------

template <typename T>
class Relu final : public Layer<T> {
public:
    LayerSpec spec() const override { return LayerSpec::relu(); }

    std::vector<int> output_shape(const std::vector<int>& in, const std::string&) const override { return in; }

    TensorT<T> forward(const TensorT<T>& in) override {
        input_ = in;
        TensorT<T> out(in.shape);
        for (std::size_t i = 0; i < in.data.size(); ++i) out.data[i] = in.data[i] > T(0) ? in.data[i] : T(0);
        return out;
    }

    TensorT<T> backward(const TensorT<T>& grad_out) override {
        this->expect(input_.numel() == grad_out.numel(), "relu: backward before forward or shape mismatch");
        TensorT<T> grad_in(input_.shape);
        for (std::size_t i = 0; i < grad_out.data.size(); ++i)
            grad_in.data[i] = input_.data[i] > T(0) ? grad_out.data[i] : T(0);
        return grad_in;
    }

    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Relu<T>>(*this); }

private:
    TensorT<T> input_;
};

// ---------------------------------------------------------------------------

template <typename T>
class MaxPool2d final : public Layer<T> {
public:
    LayerSpec spec() const override { return LayerSpec::maxpool2d(); }

    std::vector<int> output_shape(const std::vector<int>& in, const std::string& where) const override {
        this->expect(in.size() == 4 && in[2] >= 2 && in[3] >= 2,
                     where + ": maxpool2d expects [B,C,H>=2,W>=2], got " + shape_str(in));
        return {in[0], in[1], in[2] / 2, in[3] / 2};
    }

    TensorT<T> forward(const TensorT<T>& in) override {
        in_shape_ = in.shape;
        const int B = in.shape[0], C = in.shape[1], H = in.shape[2], W = in.shape[3];
        const int Ho = H / 2, Wo = W / 2;
        TensorT<T> out({B, C, Ho, Wo});
        argmax_.assign(out.numel(), 0);
        std::size_t oi = 0;
        for (int bc = 0; bc < B * C; ++bc) {
            const T* plane = in.data.data() + static_cast<std::size_t>(bc) * H * W;
            for (int y = 0; y < Ho; ++y)
                for (int x = 0; x < Wo; ++x, ++oi) {
                    std::size_t base = static_cast<std::size_t>(bc) * H * W + static_cast<std::size_t>(2 * y) * W + 2 * x;
                    // scan order fixes tie-breaking to the earliest position
                    std::size_t best = base;
                    T bv = plane[static_cast<std::size_t>(2 * y) * W + 2 * x];
                    const std::size_t cand[3] = {base + 1, base + W, base + W + 1};
                    const T cv[3] = {plane[static_cast<std::size_t>(2 * y) * W + 2 * x + 1],
                                     plane[static_cast<std::size_t>(2 * y + 1) * W + 2 * x],
                                     plane[static_cast<std::size_t>(2 * y + 1) * W + 2 * x + 1]};
                    for (int k = 0; k < 3; ++k)
                        if (cv[k] > bv) {
                            bv = cv[k];
                            best = cand[k];
                        }
                    out.data[oi] = bv;
                    argmax_[oi] = best;
                }
        }
        return out;
    }

    TensorT<T> backward(const TensorT<T>& grad_out) override {
        this->expect(!argmax_.empty() && grad_out.numel() == argmax_.size(),
                     "maxpool2d: backward before forward or shape mismatch");
        TensorT<T> grad_in(in_shape_);
        for (std::size_t i = 0; i < grad_out.data.size(); ++i) grad_in.data[argmax_[i]] += grad_out.data[i];
        return grad_in;
    }

    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<MaxPool2d<T>>(*this); }

private:
    std::vector<int> in_shape_;
    std::vector<std::size_t> argmax_;
};

// ---------------------------------------------------------------------------

template <typename T>
class Flatten final : public Layer<T> {
public:
    LayerSpec spec() const override { return LayerSpec::flatten(); }

    std::vector<int> output_shape(const std::vector<int>& in, const std::string& where) const override {
        this->expect(in.size() >= 2, where + ": flatten expects [B,...], got " + shape_str(in));
        int n = 1;
        for (std::size_t i = 1; i < in.size(); ++i) n *= in[i];
        return {in[0], n};
    }

    TensorT<T> forward(const TensorT<T>& in) override {
        in_shape_ = in.shape;
        TensorT<T> out = in;
        out.shape = output_shape(in.shape, "flatten");
        out.grad.clear();
        return out;
    }

    TensorT<T> backward(const TensorT<T>& grad_out) override {
        this->expect(!in_shape_.empty(), "flatten: backward before forward");
        TensorT<T> grad_in = grad_out;
        grad_in.shape = in_shape_;
        grad_in.grad.clear();
        return grad_in;
    }

    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Flatten<T>>(*this); }

private:
    std::vector<int> in_shape_;
};

// ---------------------------------------------------------------------------

template <typename T>
class Dense final : public Layer<T> {
public:
    Dense(int in_dim, int out_dim)
        : in_dim_(in_dim), out_dim_(out_dim), weight_({out_dim, in_dim}), bias_({out_dim}) {}

    LayerSpec spec() const override { return LayerSpec::dense(in_dim_, out_dim_); }

    std::vector<int> output_shape(const std::vector<int>& in, const std::string& where) const override {
        this->expect(in.size() == 2 && in[1] == in_dim_,
                     where + ": dense expects [B," + std::to_string(in_dim_) + "], got " + shape_str(in));
        return {in[0], out_dim_};
    }

    TensorT<T> forward(const TensorT<T>& in) override {
        input_ = in;
        const int B = in.shape[0];
        TensorT<T> out({B, out_dim_});
        for (int b = 0; b < B; ++b) {
            const T* x = in.data.data() + static_cast<std::size_t>(b) * in_dim_;
            T* y = out.data.data() + static_cast<std::size_t>(b) * out_dim_;
            for (int o = 0; o < out_dim_; ++o) {
                const T* w = weight_.data.data() + static_cast<std::size_t>(o) * in_dim_;
                T acc = bias_.data[static_cast<std::size_t>(o)];
                for (int i = 0; i < in_dim_; ++i) acc += w[i] * x[i];
                y[o] = acc;
            }
        }
        return out;
    }

    TensorT<T> backward(const TensorT<T>& grad_out) override {
        this->expect(input_.numel() > 0, "dense: backward before forward");
        const int B = input_.shape[0];
        this->expect(grad_out.shape == std::vector<int>({B, out_dim_}),
                     "dense: grad_out shape " + shape_str(grad_out.shape) + " mismatch");
        weight_.ensure_grad();
        bias_.ensure_grad();
        std::fill(weight_.grad.begin(), weight_.grad.end(), T(0));
        std::fill(bias_.grad.begin(), bias_.grad.end(), T(0));
        TensorT<T> grad_in(input_.shape);
        for (int b = 0; b < B; ++b) {
            const T* x = input_.data.data() + static_cast<std::size_t>(b) * in_dim_;
            const T* g = grad_out.data.data() + static_cast<std::size_t>(b) * out_dim_;
            T* gx = grad_in.data.data() + static_cast<std::size_t>(b) * in_dim_;
            for (int o = 0; o < out_dim_; ++o) {
                const T go = g[o];
                bias_.grad[static_cast<std::size_t>(o)] += go;
                const T* w = weight_.data.data() + static_cast<std::size_t>(o) * in_dim_;
                T* gw = weight_.grad.data() + static_cast<std::size_t>(o) * in_dim_;
                for (int i = 0; i < in_dim_; ++i) {
                    gw[i] += go * x[i];
                    gx[i] += go * w[i];
                }
            }
        }
        return grad_in;
    }

    std::vector<TensorT<T>*> params() override { return {&weight_, &bias_}; }

    std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Dense<T>>(*this); }

    TensorT<T>& weight() { return weight_; }
    TensorT<T>& bias() { return bias_; }

private:
    int in_dim_, out_dim_;
    TensorT<T> weight_, bias_;
    TensorT<T> input_;
};

template <typename T>
std::unique_ptr<Layer<T>> make_layer(const LayerSpec& s) {
    switch (s.kind) {
        case LayerKind::conv2d: return std::make_unique<Conv2d<T>>(s.in_channels, s.out_channels);
        case LayerKind::relu: return std::make_unique<Relu<T>>();
        case LayerKind::maxpool2d: return std::make_unique<MaxPool2d<T>>();
        case LayerKind::flatten: return std::make_unique<Flatten<T>>();
        case LayerKind::dense: return std::make_unique<Dense<T>>(s.in_dim, s.out_dim);
    }
    throw std::invalid_argument("make_layer: bad kind");
}

}  // namespace ecomp
