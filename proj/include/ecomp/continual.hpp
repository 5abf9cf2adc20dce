#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecomp/adam.hpp"
#include "ecomp/datagen.hpp"
#include "ecomp/loss.hpp"
#include "ecomp/network.hpp"
#include "ecomp/rng.hpp"
#include "ecomp/train.hpp"

namespace ecomp {

/// Algorithm R over a stream of unknown length: size never exceeds capacity,
/// and after n insertions every past item survives with probability capacity/n.
template <typename T>
class ReservoirBuffer {
public:
    explicit ReservoirBuffer(std::size_t capacity) : capacity_(capacity) {
        if (capacity == 0) throw std::invalid_argument("ReservoirBuffer: capacity must be positive");
    }

    void insert(T item, Rng& rng) {
        ++seen_;
        if (items_.size() < capacity_) {
            items_.push_back(std::move(item));
            return;
        }
        const std::uint64_t j = uniform_below(rng, seen_);
        if (j < capacity_) items_[static_cast<std::size_t>(j)] = std::move(item);
    }

    const T& draw(Rng& rng) const {
        if (items_.empty()) throw std::logic_error("ReservoirBuffer: draw from empty buffer");
        return items_[static_cast<std::size_t>(uniform_below(rng, items_.size()))];
    }

    std::size_t size() const { return items_.size(); }
    std::size_t capacity() const { return capacity_; }
    std::size_t seen() const { return seen_; }
    bool empty() const { return items_.empty(); }
    const std::vector<T>& items() const { return items_; }

private:
    std::size_t capacity_;
    std::vector<T> items_;
    std::size_t seen_ = 0;
};

enum class Method { finetune, er, ewc, multitask };

inline const char* method_name(Method m) {
    switch (m) {
        case Method::finetune: return "finetune";
        case Method::er: return "er";
        case Method::ewc: return "ewc";
        case Method::multitask: return "multitask";
    }
    throw std::logic_error("method_name: unknown method");
}

inline Method method_from(const std::string& name) {
    if (name == "finetune") return Method::finetune;
    if (name == "er") return Method::er;
    if (name == "ewc") return Method::ewc;
    if (name == "multitask") return Method::multitask;
    throw std::invalid_argument("unknown method '" + name + "'");
}

struct BaselineHyper {
    int epochs = 8;  // per experience; multitask spends the same count on the union
    int batch_size = 64;
    double lr = 1e-3;
    std::size_t buffer_capacity = 500;  // er only
    double lambda = 100.0;              // ewc only
};

/// Diagonal Fisher estimate with its anchor snapshot: the quadratic penalty
/// holds parameters near where the previous experience left them.
struct FisherInfo {
    std::vector<Tensor> fisher;  // one per parameter tensor, same shapes
    std::vector<Tensor> anchor;

    bool empty() const { return fisher.empty(); }
};

/// Mean over per-sample squared gradients, one sample per backward pass.
inline FisherInfo compute_fisher(Network& net, const LabeledRefs& data) {
    if (data.size() == 0) throw std::invalid_argument("compute_fisher: empty dataset");
    auto params = net.parameters();
    FisherInfo info;
    for (Tensor* p : params) {
        info.fisher.emplace_back(p->shape);
        info.anchor.push_back(*p);
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
        std::vector<const Tensor*> one{data.images[i]};
        Tensor logits = net.forward(make_batch(one));
        auto res = softmax_cross_entropy(logits, {data.labels[i]});
        net.backward(res.grad_logits);
        for (std::size_t p = 0; p < params.size(); ++p) {
            const std::vector<float>& g = params[p]->grad;
            for (std::size_t j = 0; j < g.size(); ++j)
                info.fisher[p].data[j] += g[j] * g[j] / static_cast<float>(data.size());
        }
    }
    return info;
}

inline double ewc_penalty(Network& net, const FisherInfo& info, double lambda) {
    if (info.empty()) return 0;
    auto params = net.parameters();
    double total = 0;
    for (std::size_t p = 0; p < params.size(); ++p)
        for (std::size_t j = 0; j < params[p]->data.size(); ++j) {
            const double d = static_cast<double>(params[p]->data[j]) - static_cast<double>(info.anchor[p].data[j]);
            total += static_cast<double>(info.fisher[p].data[j]) * d * d;
        }
    return 0.5 * lambda * total;
}

inline void add_ewc_penalty_grads(Network& net, const FisherInfo& info, double lambda) {
    auto params = net.parameters();
    for (std::size_t p = 0; p < params.size(); ++p) {
        params[p]->ensure_grad();
        for (std::size_t j = 0; j < params[p]->data.size(); ++j) {
            const float d = params[p]->data[j] - info.anchor[p].data[j];
            params[p]->grad[j] += static_cast<float>(lambda) * info.fisher[p].data[j] * d;
        }
    }
}

/// Copies the shared trunk (both convolutions and the first dense block)
/// from a donor network; classifier heads stay whatever they were.
inline void copy_backbone(Network& dst, Network& src, std::size_t n_tensors = 6) {
    auto to = dst.parameters();
    auto from = src.parameters();
    if (to.size() < n_tensors || from.size() < n_tensors)
        throw std::invalid_argument("copy_backbone: too few parameter tensors");
    for (std::size_t p = 0; p < n_tensors; ++p) {
        if (to[p]->shape != from[p]->shape)
            throw std::invalid_argument("copy_backbone: tensor " + std::to_string(p) + " shape mismatch: " +
                                        shape_str(to[p]->shape) + " vs " + shape_str(from[p]->shape));
        to[p]->data = from[p]->data;
    }
}

struct BaselineResult {
    Method method = Method::finetune;
    // acc[t][e]: accuracy on experience e's test set after finishing experience t (e <= t).
    std::vector<std::vector<double>> acc;
    std::vector<double> avg_so_far;
    std::vector<double> batch_losses;  // chronological; CE plus penalty where one applies
    Network net;
    FisherInfo last_fisher;

    double final_avg() const { return avg_so_far.empty() ? 0.0 : avg_so_far.back(); }
};

namespace seed_stream {
inline constexpr std::uint64_t kBaselineInit = 0x30;
inline constexpr std::uint64_t kBaselineExperience = 0x31;
}  // namespace seed_stream

namespace detail {

struct StoredSample {
    const Tensor* image;
    int label;
};

/// One experience's training pass. All four methods funnel through here so
/// that equalities between them (same seed, degenerate configs) hold bitwise.
inline void train_experience(Network& net, const LabeledRefs& fresh, const BaselineHyper& hyper, Method method,
                             const FisherInfo& fisher, double lambda, ReservoirBuffer<StoredSample>* buffer,
                             std::vector<double>& batch_losses, std::uint64_t seed, int experience_id) {
    if (fresh.size() == 0) throw std::invalid_argument("train_experience: empty training set");
    if (hyper.batch_size < 2) throw std::invalid_argument("train_experience: batch_size must be >= 2");
    const bool use_replay = method == Method::er;
    const bool use_penalty = method == Method::ewc && lambda > 0 && !fisher.empty();
    if (use_replay && buffer->capacity() < static_cast<std::size_t>(hyper.batch_size) / 2)
        throw std::invalid_argument("train_experience: replay capacity below half the batch size");

    Adam adam(net.parameters(), AdamConfig{hyper.lr, 0.9, 0.999, 1e-8});
    Rng rng = make_rng(seed);
    std::vector<int> order(fresh.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    const std::size_t fresh_per_batch =
        use_replay ? static_cast<std::size_t>(hyper.batch_size) / 2 : static_cast<std::size_t>(hyper.batch_size);

    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        shuffle_vec(order, rng);
        for (std::size_t start = 0; start < order.size(); start += fresh_per_batch) {
            const std::size_t end = std::min(order.size(), start + fresh_per_batch);
            std::vector<const Tensor*> images;
            std::vector<int> labels;
            for (std::size_t i = start; i < end; ++i) {
                images.push_back(fresh.images[static_cast<std::size_t>(order[i])]);
                labels.push_back(fresh.labels[static_cast<std::size_t>(order[i])]);
            }
            if (use_replay && !buffer->empty()) {
                const std::size_t n_replay = end - start;
                for (std::size_t i = 0; i < n_replay; ++i) {
                    const StoredSample& s = buffer->draw(rng);
                    images.push_back(s.image);
                    labels.push_back(s.label);
                }
            }

            try {
                auto res = softmax_cross_entropy(net.forward(make_batch(images)), labels);
                double loss = res.loss;
                if (use_penalty) loss += ewc_penalty(net, fisher, lambda);
                if (!std::isfinite(loss)) throw std::runtime_error("non-finite loss");
                batch_losses.push_back(loss);
                net.backward(res.grad_logits);
                if (use_penalty) add_ewc_penalty_grads(net, fisher, lambda);
                adam.step();
            } catch (const std::runtime_error& e) {
                throw std::runtime_error("baseline diverged at experience " + std::to_string(experience_id) +
                                         " epoch " + std::to_string(epoch) + " (seed " + std::to_string(seed) +
                                         "): " + e.what());
            }

            if (use_replay && epoch == 0)
                for (std::size_t i = start; i < end; ++i)
                    buffer->insert({fresh.images[static_cast<std::size_t>(order[i])],
                                    fresh.labels[static_cast<std::size_t>(order[i])]},
                                   rng);
        }
    }
}

inline LabeledRefs experience_train_refs(const BenchmarkPack& pack, const Experience& exp) {
    LabeledRefs refs;
    for (const CompositeImage& comp : exp.train) {
        const int y = label_index(pack.combos, comp.label);
        if (y < 0) throw std::logic_error("experience label missing from the combo space");
        refs.push(&comp.image, y);
    }
    return refs;
}

inline LabeledRefs experience_test_refs(const BenchmarkPack& pack, const Experience& exp) {
    LabeledRefs refs;
    for (int idx : exp.test_indices) {
        const CompositeImage& comp = pack.comp_test[static_cast<std::size_t>(idx)];
        const int y = label_index(pack.combos, comp.label);
        if (y < 0) throw std::logic_error("test label missing from the combo space");
        refs.push(&comp.image, y);
    }
    return refs;
}

}  // namespace detail

/// Class-incremental run over the composite stream. The classifier is
/// single-head over every combo label from the start; prediction consumes
/// only the image. Evaluation after experience t covers every experience
/// seen so far. Multitask ignores the stream order and trains jointly with
/// the same per-call epoch budget, as the non-continual reference point.
inline BaselineResult run_baseline(Method method, const BenchmarkPack& pack, const BaselineHyper& hyper,
                                   std::uint64_t seed, Network* pretrained_backbone = nullptr) {
    if (pack.con.empty()) throw std::invalid_argument("run_baseline: stream has no experiences");
    const int res2 = 2 * pack.config.resolution;
    BaselineResult result;
    result.method = method;
    result.net = Network(composite_cnn_spec(res2, res2, static_cast<int>(pack.combos.size())), {1, res2, res2});
    result.net.init_kaiming(sub_seed(seed, seed_stream::kBaselineInit));
    if (pretrained_backbone != nullptr) copy_backbone(result.net, *pretrained_backbone);

    std::vector<LabeledRefs> test_refs;
    for (const Experience& exp : pack.con) test_refs.push_back(detail::experience_test_refs(pack, exp));

    auto evaluate_through = [&](std::size_t t) {
        std::vector<double> row;
        for (std::size_t e = 0; e <= t; ++e) row.push_back(evaluate_classifier(result.net, test_refs[e]));
        double sum = 0;
        for (double a : row) sum += a;
        result.avg_so_far.push_back(sum / static_cast<double>(row.size()));
        result.acc.push_back(std::move(row));
    };

    if (method == Method::multitask) {
        LabeledRefs joint;
        for (const Experience& exp : pack.con) {
            LabeledRefs one = detail::experience_train_refs(pack, exp);
            for (std::size_t i = 0; i < one.size(); ++i) joint.push(one.images[i], one.labels[i]);
        }
        FisherInfo none;
        detail::train_experience(result.net, joint, hyper, Method::multitask, none, 0, nullptr, result.batch_losses,
                                 sub_seed(seed, seed_stream::kBaselineExperience), 0);
        evaluate_through(pack.con.size() - 1);
        return result;
    }

    ReservoirBuffer<detail::StoredSample> buffer(hyper.buffer_capacity);
    FisherInfo fisher;
    for (std::size_t t = 0; t < pack.con.size(); ++t) {
        LabeledRefs fresh = detail::experience_train_refs(pack, pack.con[t]);
        detail::train_experience(result.net, fresh, hyper, method, fisher, hyper.lambda,
                                 method == Method::er ? &buffer : nullptr, result.batch_losses,
                                 sub_seed(seed, seed_stream::kBaselineExperience + t), static_cast<int>(t));
        if (method == Method::ewc && hyper.lambda > 0) fisher = compute_fisher(result.net, fresh);
        evaluate_through(t);
    }
    result.last_fisher = std::move(fisher);
    return result;
}

}  // namespace ecomp
