#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecomp/datagen.hpp"
#include "ecomp/network.hpp"
#include "ecomp/rng.hpp"
#include "ecomp/train.hpp"

namespace ecomp {

/// One specialist: a handful of owned classes plus a rejection output.
/// Network output i < owned maps to owned_classes[i]; the last output
/// means "none of mine".
struct ExpertSpec {
    int expert_id = 0;
    std::vector<int> owned_classes;  // ascending

    int n_outputs() const { return static_cast<int>(owned_classes.size()) + 1; }
    int other_index() const { return static_cast<int>(owned_classes.size()); }

    int output_for_class(int class_id) const {
        auto it = std::lower_bound(owned_classes.begin(), owned_classes.end(), class_id);
        if (it == owned_classes.end() || *it != class_id)
            throw std::invalid_argument("expert " + std::to_string(expert_id) + " does not own class " +
                                        std::to_string(class_id));
        return static_cast<int>(it - owned_classes.begin());
    }
    int class_for_output(int output) const {
        if (output < 0 || output >= static_cast<int>(owned_classes.size()))
            throw std::invalid_argument("output " + std::to_string(output) + " is not an owned slot");
        return owned_classes[static_cast<std::size_t>(output)];
    }
    bool owns(int class_id) const {
        return std::binary_search(owned_classes.begin(), owned_classes.end(), class_id);
    }
};

struct ExpertModel {
    ExpertSpec spec;
    Network net;
    TrainLog log;
    double test_accuracy = 0;
    double wall_seconds = 0;
};

/// Seeded disjoint split of the label set into equal-sized ownership groups.
inline std::vector<ExpertSpec> partition_classes(int n_classes, int per_expert, std::uint64_t seed) {
    if (n_classes < 1 || per_expert < 1)
        throw std::invalid_argument("partition_classes: arguments must be positive");
    if (n_classes % per_expert != 0)
        throw std::invalid_argument("partition_classes: " + std::to_string(n_classes) +
                                    " classes do not split into groups of " + std::to_string(per_expert));
    std::vector<int> ids(static_cast<std::size_t>(n_classes));
    for (int c = 0; c < n_classes; ++c) ids[static_cast<std::size_t>(c)] = c;
    Rng rng = make_rng(seed);
    shuffle_vec(ids, rng);

    std::vector<ExpertSpec> specs;
    const int n_experts = n_classes / per_expert;
    for (int e = 0; e < n_experts; ++e) {
        ExpertSpec spec;
        spec.expert_id = e;
        spec.owned_classes.assign(ids.begin() + static_cast<std::ptrdiff_t>(e) * per_expert,
                                  ids.begin() + static_cast<std::ptrdiff_t>(e + 1) * per_expert);
        std::sort(spec.owned_classes.begin(), spec.owned_classes.end());
        specs.push_back(std::move(spec));
    }
    return specs;
}

/// Dataset for one expert over one split: every owned sample (relabeled to
/// its output slot) plus an equal number of rejection examples drawn evenly
/// across the non-owned classes. source_classes keeps original labels for audits.
struct ExpertDataset {
    LabeledRefs refs;
    std::vector<int> source_classes;
};

inline ExpertDataset make_expert_training_set(const ExpertSpec& spec,
                                              const std::vector<std::vector<Sample>>& split,
                                              std::uint64_t seed) {
    const int K = static_cast<int>(split.size());
    for (int c : spec.owned_classes)
        if (c < 0 || c >= K) throw std::invalid_argument("owned class " + std::to_string(c) + " outside dataset");

    ExpertDataset out;
    std::size_t n_owned = 0;
    for (int c : spec.owned_classes) {
        const auto& samples = split[static_cast<std::size_t>(c)];
        for (const Sample& s : samples) {
            out.refs.push(&s.image, spec.output_for_class(c));
            out.source_classes.push_back(c);
        }
        n_owned += samples.size();
    }

    std::vector<int> pool;
    for (int c = 0; c < K; ++c)
        if (!spec.owns(c)) pool.push_back(c);
    if (pool.empty()) throw std::invalid_argument("expert owns every class; nothing to reject");

    Rng rng = make_rng(seed);
    const std::size_t base = n_owned / pool.size();
    std::size_t remainder = n_owned % pool.size();
    std::vector<int> extra_order = pool;
    shuffle_vec(extra_order, rng);

    std::vector<std::size_t> take(static_cast<std::size_t>(K), 0);
    for (int c : pool) take[static_cast<std::size_t>(c)] = base;
    for (std::size_t i = 0; i < remainder; ++i) ++take[static_cast<std::size_t>(extra_order[i])];

    for (int c : pool) {
        const auto& samples = split[static_cast<std::size_t>(c)];
        const std::size_t want = take[static_cast<std::size_t>(c)];
        if (want > samples.size())
            throw std::invalid_argument("class " + std::to_string(c) + " has " + std::to_string(samples.size()) +
                                        " samples, need " + std::to_string(want) + " rejection draws");
        for (int idx : sample_indices(static_cast<int>(samples.size()), static_cast<int>(want), rng)) {
            out.refs.push(&samples[static_cast<std::size_t>(idx)].image, spec.other_index());
            out.source_classes.push_back(c);
        }
    }

    std::vector<int> order(out.refs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    shuffle_vec(order, rng);
    ExpertDataset shuffled;
    shuffled.refs.images.reserve(order.size());
    for (int i : order) {
        shuffled.refs.push(out.refs.images[static_cast<std::size_t>(i)], out.refs.labels[static_cast<std::size_t>(i)]);
        shuffled.source_classes.push_back(out.source_classes[static_cast<std::size_t>(i)]);
    }
    return shuffled;
}

namespace seed_stream {
inline constexpr std::uint64_t kExpertData = 0x10;
inline constexpr std::uint64_t kExpertInit = 0x11;
inline constexpr std::uint64_t kExpertTrain = 0x12;
inline constexpr std::uint64_t kMonolith = 0x13;
}  // namespace seed_stream

inline ExpertModel train_expert(const ExpertSpec& spec, const ObjectSplits& objects, const DatagenConfig& cfg,
                                const TrainHyper& hyper, std::uint64_t base_seed) {
    const std::uint64_t seed = sub_seed(base_seed, static_cast<std::uint64_t>(spec.expert_id));
    ExpertDataset train = make_expert_training_set(spec, objects.train, sub_seed(seed, seed_stream::kExpertData));
    ExpertDataset val = make_expert_training_set(spec, objects.val, sub_seed(seed, seed_stream::kExpertData + 1));
    ExpertDataset test = make_expert_training_set(spec, objects.test, sub_seed(seed, seed_stream::kExpertData + 2));

    ExpertModel model;
    model.spec = spec;
    model.net = Network(micro_cnn_spec(cfg.resolution, cfg.resolution, spec.n_outputs()),
                        {1, cfg.resolution, cfg.resolution});
    model.net.init_kaiming(sub_seed(seed, seed_stream::kExpertInit));
    model.log = train_classifier(model.net, train.refs, val.refs, hyper, sub_seed(seed, seed_stream::kExpertTrain));
    model.test_accuracy = evaluate_classifier(model.net, test.refs);
    return model;
}

struct MonolithModel {
    Network net;
    TrainLog log;
    double test_accuracy = 0;
};

inline LabeledRefs flatten_split(const std::vector<std::vector<Sample>>& split) {
    LabeledRefs refs;
    for (const auto& klass : split)
        for (const Sample& s : klass) refs.push(&s.image, s.label);
    return refs;
}

/// Single network over all classes; its trunk doubles as a pretrained backbone.
inline MonolithModel train_monolith(const ObjectSplits& objects, const DatagenConfig& cfg, const TrainHyper& hyper,
                                    std::uint64_t base_seed) {
    const std::uint64_t seed = sub_seed(base_seed, seed_stream::kMonolith);
    MonolithModel model;
    model.net = Network(micro_cnn_spec(cfg.resolution, cfg.resolution, cfg.n_classes),
                        {1, cfg.resolution, cfg.resolution});
    model.net.init_kaiming(sub_seed(seed, seed_stream::kExpertInit));
    LabeledRefs train = flatten_split(objects.train);
    LabeledRefs val = flatten_split(objects.val);
    model.log = train_classifier(model.net, train, val, hyper, sub_seed(seed, seed_stream::kExpertTrain));
    model.test_accuracy = evaluate_classifier(model.net, flatten_split(objects.test));
    return model;
}

}  // namespace ecomp
