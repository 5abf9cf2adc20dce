#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace ecomp {

inline std::size_t numel_of(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor shape must be positive, got " + std::to_string(d));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

/// Row-major n-d array. `grad` stays empty until a backward pass allocates it.
template <typename T>
struct TensorT {
    std::vector<int> shape;
    std::vector<T> data;
    std::vector<T> grad;

    TensorT() = default;
    explicit TensorT(std::vector<int> s) : shape(std::move(s)), data(numel_of(shape), T(0)) {}
    TensorT(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (numel_of(shape) != data.size())
            throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape));
    }

    std::size_t numel() const { return data.size(); }
    int dim(std::size_t i) const { return shape.at(i); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

using Tensor = TensorT<float>;

/// Argmax over a contiguous row; ties resolve to the lowest index.
template <typename T>
int argmax_row(const T* row, int n) {
    int best = 0;
    for (int i = 1; i < n; ++i)
        if (row[i] > row[best]) best = i;
    return best;
}

/// Population standard deviation of the tensor values.
template <typename T>
double pixel_std(const TensorT<T>& t) {
    if (t.data.empty()) return 0.0;
    double mean = 0.0;
    for (T v : t.data) mean += static_cast<double>(v);
    mean /= static_cast<double>(t.data.size());
    double var = 0.0;
    for (T v : t.data) {
        double d = static_cast<double>(v) - mean;
        var += d * d;
    }
    return std::sqrt(var / static_cast<double>(t.data.size()));
}

/// Stack [C,H,W] images into a [B,C,H,W] batch.
template <typename T>
TensorT<T> make_batch(const std::vector<const TensorT<T>*>& images) {
    if (images.empty()) throw std::invalid_argument("make_batch: empty image list");
    const auto& s = images[0]->shape;
    if (s.size() != 3) throw std::invalid_argument("make_batch: expected [C,H,W] images, got " + shape_str(s));
    TensorT<T> batch({static_cast<int>(images.size()), s[0], s[1], s[2]});
    const std::size_t plane = images[0]->numel();
    for (std::size_t b = 0; b < images.size(); ++b) {
        if (images[b]->shape != s)
            throw std::invalid_argument("make_batch: image " + std::to_string(b) + " shape mismatch");
        std::copy(images[b]->data.begin(), images[b]->data.end(), batch.data.begin() + static_cast<std::ptrdiff_t>(b * plane));
    }
    return batch;
}

/// 2x2 max downsampling of a [C,H,W] image (H, W even).
template <typename T>
TensorT<T> downsample_max2(const TensorT<T>& img) {
    if (img.shape.size() != 3 || img.shape[1] % 2 != 0 || img.shape[2] % 2 != 0)
        throw std::invalid_argument("downsample_max2: need [C,H,W] with even H,W, got " + shape_str(img.shape));
    const int c = img.shape[0], h = img.shape[1], w = img.shape[2];
    TensorT<T> out({c, h / 2, w / 2});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h / 2; ++y)
            for (int x = 0; x < w / 2; ++x) {
                const T* base = img.data.data() + (static_cast<std::size_t>(ch) * h + 2 * y) * w + 2 * x;
                T m = std::max(std::max(base[0], base[1]), std::max(base[w], base[w + 1]));
                out.data[(static_cast<std::size_t>(ch) * (h / 2) + y) * (w / 2) + x] = m;
            }
    return out;
}

}  // namespace ecomp
