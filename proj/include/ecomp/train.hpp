#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecomp/adam.hpp"
#include "ecomp/loss.hpp"
#include "ecomp/network.hpp"
#include "ecomp/rng.hpp"

namespace ecomp {

struct TrainHyper {
    int epochs = 10;
    int batch_size = 64;
    double lr = 1e-3;
};

/// Non-owning labeled dataset; images stay wherever the pack put them.
struct LabeledRefs {
    std::vector<const Tensor*> images;
    std::vector<int> labels;

    std::size_t size() const { return images.size(); }
    void push(const Tensor* image, int label) {
        images.push_back(image);
        labels.push_back(label);
    }
};

struct EpochLog {
    int epoch = 0;
    double train_loss = 0;
    double val_accuracy = 0;
};

struct TrainLog {
    std::vector<EpochLog> epochs;
    int best_epoch = -1;  // -1 when the initialization won (0 epochs or val never improved)
    double best_val_accuracy = 0;
};

inline double evaluate_classifier(Network& net, const LabeledRefs& data, int batch_size = 256) {
    if (data.size() == 0) throw std::invalid_argument("evaluate_classifier: empty dataset");
    const int K = net.n_classes();
    std::size_t correct = 0;
    for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(data.size(), start + static_cast<std::size_t>(batch_size));
        std::vector<const Tensor*> chunk(data.images.begin() + static_cast<std::ptrdiff_t>(start),
                                         data.images.begin() + static_cast<std::ptrdiff_t>(end));
        Tensor logits = net.forward(make_batch(chunk));
        for (std::size_t b = 0; b < chunk.size(); ++b) {
            const int label = data.labels[start + b];
            if (label < 0 || label >= K)
                throw std::invalid_argument("evaluate_classifier: label " + std::to_string(label) +
                                            " outside arity " + std::to_string(K));
            if (argmax_row(logits.data.data() + b * static_cast<std::size_t>(K), K) == label) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

/// Shared mini-batch training loop: per-epoch reshuffle, Adam updates, and
/// a best-validation-accuracy parameter snapshot restored at the end.
/// 0 epochs leaves the initialization untouched.
inline TrainLog train_classifier(Network& net, const LabeledRefs& train, const LabeledRefs& val,
                                 const TrainHyper& hyper, std::uint64_t seed) {
    if (train.size() == 0) throw std::invalid_argument("train_classifier: empty training set");
    if (hyper.batch_size < 1) throw std::invalid_argument("train_classifier: batch_size must be >= 1");

    AdamConfig acfg;
    acfg.lr = hyper.lr;
    Adam adam(net.parameters(), acfg);
    Rng rng = make_rng(seed);

    TrainLog log;
    std::vector<float> best = net.parameters_flat();
    if (val.size() > 0) log.best_val_accuracy = evaluate_classifier(net, val);

    std::vector<int> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        shuffle_vec(order, rng);
        double loss_sum = 0;
        try {
            for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(hyper.batch_size)) {
                const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(hyper.batch_size));
                std::vector<const Tensor*> images;
                std::vector<int> labels;
                images.reserve(end - start);
                for (std::size_t i = start; i < end; ++i) {
                    images.push_back(train.images[static_cast<std::size_t>(order[i])]);
                    labels.push_back(train.labels[static_cast<std::size_t>(order[i])]);
                }
                auto res = softmax_cross_entropy(net.forward(make_batch(images)), labels);
                if (!std::isfinite(res.loss)) throw std::runtime_error("non-finite loss");
                loss_sum += res.loss * static_cast<double>(end - start);
                net.backward(res.grad_logits);
                adam.step();
            }
        } catch (const std::runtime_error& e) {
            throw std::runtime_error("training diverged at epoch " + std::to_string(epoch) + " (seed " +
                                     std::to_string(seed) + "): " + e.what());
        }

        EpochLog entry;
        entry.epoch = epoch;
        entry.train_loss = loss_sum / static_cast<double>(train.size());
        if (val.size() > 0) {
            entry.val_accuracy = evaluate_classifier(net, val);
            if (entry.val_accuracy > log.best_val_accuracy) {
                log.best_val_accuracy = entry.val_accuracy;
                log.best_epoch = epoch;
                best = net.parameters_flat();
            }
        } else {
            log.best_epoch = epoch;
            best = net.parameters_flat();
        }
        log.epochs.push_back(entry);
    }
    net.set_parameters_flat(best);
    return log;
}

}  // namespace ecomp
