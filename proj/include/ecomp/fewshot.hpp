#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecomp/composition.hpp"
#include "ecomp/datagen.hpp"
#include "ecomp/experts.hpp"
#include "ecomp/layers.hpp"
#include "ecomp/loss.hpp"
#include "ecomp/rng.hpp"

namespace ecomp {

struct ExpertScore {
    int expert_id = -1;
    double score = 0;
};

enum class FeatureMode {
    whole_downsampled,  // downsample the composite to expert resolution, one 64-d block per expert
    per_quadrant,       // one 64-d block per occupied quadrant per expert (ablation)
};

namespace detail {

inline std::vector<Tensor> occupied_quadrants(const CompositeImage& comp) {
    auto quads = split_quadrants(comp.image);
    std::vector<Tensor> occupied;
    for (int q = 0; q < 4; ++q)
        if (detect_occupied(quads[static_cast<std::size_t>(q)])) occupied.push_back(std::move(quads[static_cast<std::size_t>(q)]));
    return occupied;
}

inline Tensor penultimate(Network& net, const Tensor& batch) {
    return net.forward_prefix(batch, net.n_layers() - 1);
}

}  // namespace detail

/// How much of an episode looks in-distribution to each expert: every
/// occupied quadrant of every training composite contributes that expert's
/// strongest raw logit. Sorted best-first, ties to the lower expert id.
inline std::vector<ExpertScore> score_experts(std::vector<ExpertModel>& experts,
                                              const std::vector<CompositeImage>& episode_train) {
    if (experts.empty()) throw std::invalid_argument("score_experts: no experts");
    if (episode_train.empty()) throw std::invalid_argument("score_experts: empty episode training set");

    std::vector<Tensor> quads;
    for (const CompositeImage& comp : episode_train)
        for (Tensor& q : detail::occupied_quadrants(comp)) quads.push_back(std::move(q));

    std::vector<ExpertScore> scores;
    std::vector<const Tensor*> refs;
    for (const Tensor& q : quads) refs.push_back(&q);
    Tensor batch = make_batch(refs);
    for (ExpertModel& ex : experts) {
        Tensor logits = ex.net.forward(batch);
        const int n_out = ex.spec.n_outputs();
        double total = 0;
        for (std::size_t b = 0; b < quads.size(); ++b) {
            const float* row = logits.data.data() + b * static_cast<std::size_t>(n_out);
            float best = row[0];
            for (int o = 1; o < n_out; ++o) best = std::max(best, row[o]);
            total += static_cast<double>(best);
        }
        if (!std::isfinite(total)) throw std::runtime_error("score_experts: non-finite score");
        scores.push_back({ex.spec.expert_id, total});
    }
    std::sort(scores.begin(), scores.end(), [](const ExpertScore& a, const ExpertScore& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.expert_id < b.expert_id;
    });
    return scores;
}

inline std::vector<int> select_experts(const std::vector<ExpertScore>& scores, int k) {
    if (k < 1) throw std::invalid_argument("select_experts: k must be >= 1");
    if (static_cast<std::size_t>(k) > scores.size())
        throw std::invalid_argument("select_experts: k=" + std::to_string(k) + " but only " +
                                    std::to_string(scores.size()) + " experts are available");
    std::vector<int> ids;
    for (int i = 0; i < k; ++i) ids.push_back(scores[static_cast<std::size_t>(i)].expert_id);
    return ids;
}

inline int feature_dim_per_expert(FeatureMode mode) { return mode == FeatureMode::whole_downsampled ? 64 : 128; }

/// Frozen-expert features for one composite, concatenated in the given order.
inline std::vector<float> extract_features(std::vector<ExpertModel*>& selected, const CompositeImage& comp,
                                           FeatureMode mode = FeatureMode::whole_downsampled) {
    if (selected.empty()) throw std::invalid_argument("extract_features: no experts selected");
    std::vector<float> out;
    if (mode == FeatureMode::whole_downsampled) {
        Tensor small = downsample_max2(comp.image);
        std::vector<const Tensor*> one{&small};
        Tensor batch = make_batch(one);
        for (ExpertModel* ex : selected) {
            Tensor feat = detail::penultimate(ex->net, batch);
            out.insert(out.end(), feat.data.begin(), feat.data.end());
        }
    } else {
        std::vector<Tensor> quads = detail::occupied_quadrants(comp);
        if (quads.size() != 2)
            throw std::invalid_argument("extract_features: per-quadrant mode needs exactly 2 occupied quadrants, got " +
                                        std::to_string(quads.size()));
        for (ExpertModel* ex : selected) {
            for (const Tensor& q : quads) {
                std::vector<const Tensor*> one{&q};
                Tensor feat = detail::penultimate(ex->net, make_batch(one));
                out.insert(out.end(), feat.data.begin(), feat.data.end());
            }
        }
    }
    return out;
}

struct LinearHead {
    Dense<float> layer;

    explicit LinearHead(int in_dim, int n_way) : layer(in_dim, n_way) {}

    Tensor& weight() { return layer.weight(); }
    Tensor& bias() { return layer.bias(); }

    Tensor logits(const Tensor& features) { return layer.forward(features); }

    double accuracy(const Tensor& features, const std::vector<int>& labels) {
        Tensor out = logits(features);
        const int n_way = out.shape[1];
        std::size_t correct = 0;
        for (std::size_t b = 0; b < labels.size(); ++b)
            if (argmax_row(out.data.data() + b * static_cast<std::size_t>(n_way), n_way) ==
                labels[static_cast<std::size_t>(b)])
                ++correct;
        return static_cast<double>(correct) / static_cast<double>(labels.size());
    }
};

struct HeadHyper {
    int epochs = 50;
    double lr = 1e-3;
};

/// Full-batch training of the linear head on an episode's few shots.
/// Expert parameters are never touched; only the head moves.
inline LinearHead train_head(const Tensor& features, const std::vector<int>& labels, int n_way,
                             const HeadHyper& hyper, std::uint64_t seed, int episode_id = -1) {
    if (features.shape.size() != 2) throw std::invalid_argument("train_head: features must be [N,D]");
    if (static_cast<std::size_t>(features.shape[0]) != labels.size())
        throw std::invalid_argument("train_head: one label per feature row required");
    if (n_way < 2) throw std::invalid_argument("train_head: n_way must be >= 2");
    std::vector<bool> seen(static_cast<std::size_t>(n_way), false);
    for (int l : labels) {
        if (l < 0 || l >= n_way) throw std::invalid_argument("train_head: label outside [0,n_way)");
        seen[static_cast<std::size_t>(l)] = true;
    }
    for (int w = 0; w < n_way; ++w)
        if (!seen[static_cast<std::size_t>(w)])
            throw std::invalid_argument("train_head: no shot for way " + std::to_string(w));

    const int in_dim = features.shape[1];
    LinearHead head(in_dim, n_way);
    Rng rng = make_rng(seed);
    const float bound = 1.0f / std::sqrt(static_cast<float>(in_dim));
    for (float& w : head.weight().data) w = static_cast<float>(uniform_real(rng, -bound, bound));

    AdamConfig acfg;
    acfg.lr = hyper.lr;
    std::vector<Tensor*> params{&head.weight(), &head.bias()};
    Adam adam(params, acfg);
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        Tensor out = head.layer.forward(features);
        auto res = softmax_cross_entropy(out, labels);
        if (!std::isfinite(res.loss))
            throw std::runtime_error("fewshot head diverged at epoch " + std::to_string(epoch) + " (episode " +
                                     std::to_string(episode_id) + ")");
        head.layer.backward(res.grad_logits);
        adam.step();
    }
    return head;
}

/// Everything about an episode that depends on neither k nor the seed:
/// the expert ranking plus per-expert feature blocks for every composite.
struct EpisodeCache {
    int episode_id = 0;
    int n_way = 0;
    int feat_dim = 0;
    std::vector<ExpertScore> ranking;
    // indexed [expert_id][sample * feat_dim + j]
    std::vector<std::vector<float>> support_feats, query_feats;
    std::vector<int> support_labels, query_labels;
};

struct SysCache {
    FeatureMode mode = FeatureMode::whole_downsampled;
    int n_experts = 0;
    std::vector<EpisodeCache> episodes;
};

namespace detail {

inline int way_label(const SysEpisode& ep, const CompositionLabel& label) {
    auto it = std::lower_bound(ep.labels.begin(), ep.labels.end(), label);
    if (it == ep.labels.end() || !(*it == label)) throw std::logic_error("composite label missing from its episode");
    return static_cast<int>(it - ep.labels.begin());
}

inline std::vector<float> batch_features(Network& net, const std::vector<CompositeImage>& comps, FeatureMode mode,
                                         int batch_size = 128) {
    std::vector<Tensor> inputs;
    if (mode == FeatureMode::whole_downsampled) {
        for (const CompositeImage& c : comps) inputs.push_back(downsample_max2(c.image));
    } else {
        for (const CompositeImage& c : comps) {
            std::vector<Tensor> quads = occupied_quadrants(c);
            if (quads.size() != 2) throw std::invalid_argument("per-quadrant features need exactly 2 occupied quadrants");
            for (Tensor& q : quads) inputs.push_back(std::move(q));
        }
    }
    std::vector<float> out;
    for (std::size_t start = 0; start < inputs.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(inputs.size(), start + static_cast<std::size_t>(batch_size));
        std::vector<const Tensor*> chunk;
        for (std::size_t i = start; i < end; ++i) chunk.push_back(&inputs[i]);
        Tensor feat = penultimate(net, make_batch(chunk));
        out.insert(out.end(), feat.data.begin(), feat.data.end());
    }
    return out;
}

}  // namespace detail

inline SysCache build_sys_cache(std::vector<ExpertModel>& experts, const std::vector<SysEpisode>& episodes,
                                FeatureMode mode = FeatureMode::whole_downsampled) {
    if (experts.empty()) throw std::invalid_argument("build_sys_cache: no experts");
    SysCache cache;
    cache.mode = mode;
    cache.n_experts = static_cast<int>(experts.size());
    for (const SysEpisode& ep : episodes) {
        EpisodeCache ec;
        ec.episode_id = ep.episode_id;
        ec.n_way = static_cast<int>(ep.labels.size());
        ec.feat_dim = feature_dim_per_expert(mode);
        ec.ranking = score_experts(experts, ep.support);
        for (const CompositeImage& c : ep.support) ec.support_labels.push_back(detail::way_label(ep, c.label));
        for (const CompositeImage& c : ep.query) ec.query_labels.push_back(detail::way_label(ep, c.label));
        for (ExpertModel& ex : experts) {
            ec.support_feats.push_back(detail::batch_features(ex.net, ep.support, mode));
            ec.query_feats.push_back(detail::batch_features(ex.net, ep.query, mode));
        }
        cache.episodes.push_back(std::move(ec));
    }
    return cache;
}

namespace detail {

inline Tensor gather_features(const EpisodeCache& ec, const std::vector<std::vector<float>>& blocks,
                              const std::vector<int>& selected, std::size_t n_samples) {
    const int fd = ec.feat_dim;
    Tensor out({static_cast<int>(n_samples), static_cast<int>(selected.size()) * fd});
    for (std::size_t i = 0; i < n_samples; ++i)
        for (std::size_t j = 0; j < selected.size(); ++j) {
            const std::vector<float>& src = blocks[static_cast<std::size_t>(selected[j])];
            std::copy(src.begin() + static_cast<std::ptrdiff_t>(i) * fd,
                      src.begin() + static_cast<std::ptrdiff_t>(i + 1) * fd,
                      out.data.begin() + static_cast<std::ptrdiff_t>((i * selected.size() + j) * static_cast<std::size_t>(fd)));
        }
    return out;
}

}  // namespace detail

namespace seed_stream {
inline constexpr std::uint64_t kFewshotHead = 0x20;
}

struct SysRunResult {
    int k = 0;
    std::uint64_t seed = 0;
    double mean_acc = 0;
    double std_acc = 0;  // sample std over episodes
    std::vector<double> per_episode;
};

inline SysRunResult run_sys_protocol(const SysCache& cache, int k, std::uint64_t seed, const HeadHyper& hyper = {}) {
    if (cache.episodes.empty()) throw std::invalid_argument("run_sys_protocol: empty cache");
    SysRunResult result;
    result.k = k;
    result.seed = seed;
    for (const EpisodeCache& ec : cache.episodes) {
        std::vector<int> selected = select_experts(ec.ranking, k);
        Tensor support = detail::gather_features(ec, ec.support_feats, selected, ec.support_labels.size());
        Tensor query = detail::gather_features(ec, ec.query_feats, selected, ec.query_labels.size());
        LinearHead head = train_head(support, ec.support_labels, ec.n_way, hyper,
                                     sub_seed(sub_seed(seed, seed_stream::kFewshotHead),
                                              static_cast<std::uint64_t>(ec.episode_id)),
                                     ec.episode_id);
        result.per_episode.push_back(head.accuracy(query, ec.query_labels));
    }
    double sum = 0;
    for (double a : result.per_episode) sum += a;
    result.mean_acc = sum / static_cast<double>(result.per_episode.size());
    double sq = 0;
    for (double a : result.per_episode) sq += (a - result.mean_acc) * (a - result.mean_acc);
    result.std_acc = result.per_episode.size() > 1
                         ? std::sqrt(sq / static_cast<double>(result.per_episode.size() - 1))
                         : 0.0;
    return result;
}

struct FewshotRow {
    int k = 0;
    std::uint64_t seed = 0;
    double mean_acc = 0;
    double std_acc = 0;
    int n_episodes = 0;
};

/// The full sweep: cache once, then one cheap head-training pass per (k, seed).
inline std::vector<FewshotRow> run_fewshot_grid(std::vector<ExpertModel>& experts,
                                                const std::vector<SysEpisode>& episodes, const std::vector<int>& ks,
                                                const std::vector<std::uint64_t>& seeds, const HeadHyper& hyper = {},
                                                FeatureMode mode = FeatureMode::whole_downsampled) {
    SysCache cache = build_sys_cache(experts, episodes, mode);
    std::vector<FewshotRow> rows;
    for (int k : ks)
        for (std::uint64_t seed : seeds) {
            SysRunResult res = run_sys_protocol(cache, k, seed, hyper);
            rows.push_back({k, seed, res.mean_acc, res.std_acc, static_cast<int>(res.per_episode.size())});
        }
    return rows;
}

}  // namespace ecomp
