#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecomp/datagen.hpp"
#include "ecomp/experts.hpp"
#include "ecomp/loss.hpp"
#include "ecomp/network.hpp"

namespace ecomp {

/// Quadrant order: 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right.
inline std::array<Tensor, 4> split_quadrants(const Tensor& img) {
    if (img.shape.size() != 3) throw std::invalid_argument("split_quadrants: need [C,H,W], got " + shape_str(img.shape));
    const int C = img.shape[0], H = img.shape[1], W = img.shape[2];
    if (H % 2 != 0 || W % 2 != 0)
        throw std::invalid_argument("split_quadrants: dimensions must be even, got " + shape_str(img.shape));
    const int h2 = H / 2, w2 = W / 2;
    std::array<Tensor, 4> quads{Tensor({C, h2, w2}), Tensor({C, h2, w2}), Tensor({C, h2, w2}), Tensor({C, h2, w2})};
    for (int q = 0; q < 4; ++q) {
        const int y0 = (q / 2) * h2, x0 = (q % 2) * w2;
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < h2; ++y)
                for (int x = 0; x < w2; ++x)
                    quads[static_cast<std::size_t>(q)].data[static_cast<std::size_t>((c * h2 + y) * w2 + x)] =
                        img.data[static_cast<std::size_t>((c * H + y0 + y) * W + x0 + x)];
    }
    return quads;
}

inline Tensor assemble_quadrants(const std::array<Tensor, 4>& quads) {
    const int C = quads[0].shape[0], h2 = quads[0].shape[1], w2 = quads[0].shape[2];
    for (const Tensor& q : quads)
        if (q.shape != quads[0].shape) throw std::invalid_argument("assemble_quadrants: mismatched quadrant shapes");
    Tensor img({C, 2 * h2, 2 * w2});
    for (int q = 0; q < 4; ++q) {
        const int y0 = (q / 2) * h2, x0 = (q % 2) * w2;
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < h2; ++y)
                for (int x = 0; x < w2; ++x)
                    img.data[static_cast<std::size_t>((c * (2 * h2) + y0 + y) * (2 * w2) + x0 + x)] =
                        quads[static_cast<std::size_t>(q)].data[static_cast<std::size_t>((c * h2 + y) * w2 + x)];
    }
    return img;
}

inline constexpr double kOccupancyEps = 1e-6;

/// An empty quadrant renders as a constant background; any drawn glyph
/// introduces pixel variance.
inline bool detect_occupied(const Tensor& quadrant) { return pixel_std(quadrant) > kOccupancyEps; }

inline std::vector<double> softmax_probs(const float* logits, int n) {
    std::vector<double> row(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) row[static_cast<std::size_t>(i)] = static_cast<double>(logits[i]);
    return softmax_row(row.data(), n);
}

struct QuadrantPrediction {
    int class_id = -1;
    int expert_id = -1;
    int output = -1;
    double confidence = 0;
    bool fallback = false;  // every expert rejected; strongest owned output used anyway
};

/// Cross-expert arbitration over per-expert softmax rows.
/// Each expert first votes locally (argmax of its own outputs, ties to the
/// lower index); a vote for the rejection slot abstains. The most confident
/// non-abstaining vote wins. If everyone abstains, the strongest owned
/// output anywhere wins and the prediction is flagged as a fallback.
/// All ties break to the lower expert id, then the lower output index.
inline QuadrantPrediction arbitrate(const std::vector<ExpertSpec>& specs,
                                    const std::vector<std::vector<double>>& probs) {
    if (specs.empty()) throw std::invalid_argument("arbitrate: no experts");
    if (probs.size() != specs.size()) throw std::invalid_argument("arbitrate: one probability row per expert required");
    for (std::size_t e = 0; e < specs.size(); ++e)
        if (static_cast<int>(probs[e].size()) != specs[e].n_outputs())
            throw std::invalid_argument("arbitrate: expert " + std::to_string(e) + " expects " +
                                        std::to_string(specs[e].n_outputs()) + " probabilities, got " +
                                        std::to_string(probs[e].size()));

    QuadrantPrediction best;
    auto beats = [&](double conf, int expert_id, int output) {
        if (best.expert_id < 0) return true;
        if (conf != best.confidence) return conf > best.confidence;
        if (expert_id != best.expert_id) return expert_id < best.expert_id;
        return output < best.output;
    };
    auto take = [&](std::size_t e, int o) {
        best.expert_id = specs[e].expert_id;
        best.output = o;
        best.confidence = probs[e][static_cast<std::size_t>(o)];
        best.class_id = specs[e].class_for_output(o);
    };

    for (std::size_t e = 0; e < specs.size(); ++e) {
        const int local = argmax_row(probs[e].data(), specs[e].n_outputs());
        if (local == specs[e].other_index()) continue;
        if (beats(probs[e][static_cast<std::size_t>(local)], specs[e].expert_id, local)) take(e, local);
    }
    if (best.expert_id >= 0) return best;

    best.fallback = true;
    for (std::size_t e = 0; e < specs.size(); ++e)
        for (int o = 0; o < specs[e].other_index(); ++o)
            if (beats(probs[e][static_cast<std::size_t>(o)], specs[e].expert_id, o)) take(e, o);
    if (best.expert_id < 0) throw std::logic_error("arbitrate: no owned outputs exist");
    return best;
}

inline std::vector<std::vector<double>> collect_probs(std::vector<ExpertModel>& experts, const Tensor& quadrant) {
    std::vector<std::vector<double>> probs;
    std::vector<const Tensor*> one{&quadrant};
    Tensor batch = make_batch(one);
    for (ExpertModel& ex : experts) {
        Tensor logits = ex.net.forward(batch);
        probs.push_back(softmax_probs(logits.data.data(), ex.spec.n_outputs()));
    }
    return probs;
}

inline QuadrantPrediction predict_quadrant(std::vector<ExpertModel>& experts, const Tensor& quadrant) {
    std::vector<ExpertSpec> specs;
    for (const ExpertModel& ex : experts) specs.push_back(ex.spec);
    return arbitrate(specs, collect_probs(experts, quadrant));
}

struct ComposeOutcome {
    bool malformed = false;   // occupied-quadrant count was not 2; nothing predicted
    bool duplicate = false;   // both quadrants predicted the same class; no valid pair exists
    int n_predicted = 0;
    int n_fallback = 0;
    std::array<QuadrantPrediction, 2> quads{};
    CompositionLabel label{-1, -1};  // meaningful only when !malformed && !duplicate
};

struct ComposeConfig {
    bool oracle_occupancy = false;  // trust the generator's quadrant bookkeeping instead of detecting
};

inline ComposeOutcome compose(std::vector<ExpertModel>& experts, const CompositeImage& composite,
                              const ComposeConfig& cfg = {}) {
    std::array<Tensor, 4> quads = split_quadrants(composite.image);
    std::vector<int> occupied;
    if (cfg.oracle_occupancy) {
        occupied.push_back(std::min(composite.quad_lo, composite.quad_hi));
        occupied.push_back(std::max(composite.quad_lo, composite.quad_hi));
    } else {
        for (int q = 0; q < 4; ++q)
            if (detect_occupied(quads[static_cast<std::size_t>(q)])) occupied.push_back(q);
    }

    ComposeOutcome out;
    if (occupied.size() != 2) {
        out.malformed = true;
        return out;
    }
    for (int slot = 0; slot < 2; ++slot) {
        out.quads[static_cast<std::size_t>(slot)] =
            predict_quadrant(experts, quads[static_cast<std::size_t>(occupied[static_cast<std::size_t>(slot)])]);
        ++out.n_predicted;
        if (out.quads[static_cast<std::size_t>(slot)].fallback) ++out.n_fallback;
    }
    const int a = out.quads[0].class_id, b = out.quads[1].class_id;
    if (a == b) {
        out.duplicate = true;
        return out;
    }
    out.label = make_label(a, b);
    return out;
}

struct ExperienceScore {
    int experience_id = -1;  // -1 marks the overall row
    std::size_t n_samples = 0;
    std::size_t n_correct = 0;
    std::size_t duplicates = 0;
    std::size_t malformed = 0;
    std::size_t n_quadrant_predictions = 0;
    std::size_t n_fallback = 0;

    double accuracy() const { return n_samples ? static_cast<double>(n_correct) / static_cast<double>(n_samples) : 0; }
    double abstain_fallback_rate() const {
        return n_quadrant_predictions ? static_cast<double>(n_fallback) / static_cast<double>(n_quadrant_predictions)
                                      : 0;
    }
};

struct ZeroShotResult {
    std::vector<ExperienceScore> per_experience;
    ExperienceScore overall;
};

/// Scores every held-out composite once, then buckets by experience.
/// Pure evaluation: no parameters change, so experience order cannot matter.
inline ZeroShotResult evaluate_zero_shot(std::vector<ExpertModel>& experts, const BenchmarkPack& pack,
                                         const ComposeConfig& cfg = {}, int batch_size = 256) {
    if (experts.empty()) throw std::invalid_argument("evaluate_zero_shot: no experts");
    const std::size_t n = pack.comp_test.size();
    if (n == 0) throw std::invalid_argument("evaluate_zero_shot: empty composite test set");

    std::vector<ExpertSpec> specs;
    for (const ExpertModel& ex : experts) specs.push_back(ex.spec);

    // Pass 1: occupancy, collecting the quadrants that need a prediction.
    struct PendingQuad {
        std::size_t composite;
        int slot;
    };
    std::vector<Tensor> quad_images;
    std::vector<PendingQuad> pending;
    std::vector<bool> malformed(n, false);
    for (std::size_t i = 0; i < n; ++i) {
        const CompositeImage& comp = pack.comp_test[i];
        std::array<Tensor, 4> quads = split_quadrants(comp.image);
        std::vector<int> occupied;
        if (cfg.oracle_occupancy) {
            occupied.push_back(std::min(comp.quad_lo, comp.quad_hi));
            occupied.push_back(std::max(comp.quad_lo, comp.quad_hi));
        } else {
            for (int q = 0; q < 4; ++q)
                if (detect_occupied(quads[static_cast<std::size_t>(q)])) occupied.push_back(q);
        }
        if (occupied.size() != 2) {
            malformed[i] = true;
            continue;
        }
        for (int slot = 0; slot < 2; ++slot) {
            quad_images.push_back(std::move(quads[static_cast<std::size_t>(occupied[static_cast<std::size_t>(slot)])]));
            pending.push_back({i, slot});
        }
    }

    // Pass 2: batched forward per expert over every pending quadrant.
    // probs[entry][expert] holds that expert's softmax row.
    std::vector<std::vector<std::vector<double>>> probs(pending.size(),
                                                        std::vector<std::vector<double>>(experts.size()));
    for (std::size_t e = 0; e < experts.size(); ++e) {
        const int n_out = experts[e].spec.n_outputs();
        for (std::size_t start = 0; start < quad_images.size(); start += static_cast<std::size_t>(batch_size)) {
            const std::size_t end = std::min(quad_images.size(), start + static_cast<std::size_t>(batch_size));
            std::vector<const Tensor*> chunk;
            for (std::size_t i = start; i < end; ++i) chunk.push_back(&quad_images[i]);
            Tensor logits = experts[e].net.forward(make_batch(chunk));
            for (std::size_t b = 0; b < chunk.size(); ++b)
                probs[start + b][e] = softmax_probs(logits.data.data() + b * static_cast<std::size_t>(n_out), n_out);
        }
    }

    // Pass 3: arbitration and pair scoring per composite.
    struct PerComposite {
        QuadrantPrediction quads[2];
        int n_pred = 0;
    };
    std::vector<PerComposite> verdicts(n);
    for (std::size_t p = 0; p < pending.size(); ++p) {
        verdicts[pending[p].composite].quads[pending[p].slot] = arbitrate(specs, probs[p]);
        ++verdicts[pending[p].composite].n_pred;
    }

    auto score_one = [&](std::size_t i, ExperienceScore& score) {
        const CompositeImage& comp = pack.comp_test[i];
        ++score.n_samples;
        if (malformed[i]) {
            ++score.malformed;
            return;
        }
        const PerComposite& v = verdicts[i];
        score.n_quadrant_predictions += static_cast<std::size_t>(v.n_pred);
        if (v.quads[0].fallback) ++score.n_fallback;
        if (v.quads[1].fallback) ++score.n_fallback;
        const int a = v.quads[0].class_id, b = v.quads[1].class_id;
        if (a == b) {
            ++score.duplicates;
            return;
        }
        if (make_label(a, b) == comp.label) ++score.n_correct;
    };

    ZeroShotResult result;
    for (std::size_t i = 0; i < n; ++i) score_one(i, result.overall);
    for (const Experience& exp : pack.con) {
        ExperienceScore score;
        score.experience_id = exp.experience_id;
        for (int idx : exp.test_indices) score_one(static_cast<std::size_t>(idx), score);
        result.per_experience.push_back(score);
    }
    return result;
}

}  // namespace ecomp
