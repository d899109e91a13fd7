#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dasp/errors.hpp"
#include "dasp/rng.hpp"
#include "dasp/tape.hpp"
#include "dasp/tensor.hpp"

namespace dasp {

struct ModalityId {
    std::string name;
    std::size_t index = 0;
};

// Dimensions of the toy classifier. Modalities default to an audio/video
// pair; everything is configurable for tests.
struct ModelConfig {
    std::vector<std::string> modalities = {"audio", "video"};
    std::vector<std::size_t> input_dims = {32, 32};  // per modality
    std::size_t hidden = 64;
    std::size_t feature_dim = 64;  // unified latent width D
    std::size_t num_classes = 10;
    std::size_t stable_rank = 8;  // bottleneck width of the stable adapter

    std::size_t modality_count() const { return modalities.size(); }

    std::size_t modality_index(const std::string& name) const {
        for (std::size_t i = 0; i < modalities.size(); ++i) {
            if (modalities[i] == name) return i;
        }
        throw SpecError("unknown modality '" + name + "'");
    }

    void validate() const {
        if (modalities.empty()) throw SpecError("model: no modalities configured");
        if (input_dims.size() != modalities.size()) {
            throw SpecError("model: input_dims count does not match modalities");
        }
        std::set<std::string> names(modalities.begin(), modalities.end());
        if (names.size() != modalities.size()) {
            throw SpecError("model: modality names must be unique");
        }
        if (stable_rank >= feature_dim) {
            throw SpecError("model: stable adapter rank must be below the feature dim");
        }
        if (num_classes < 2) throw SpecError("model: need at least two classes");
    }
};

// Per-modality two-layer MLP encoder weights.
struct EncoderParams {
    Tensor w1, b1;  // d_in x hidden, hidden
    Tensor w2, b2;  // hidden x D, D
};

// Source model: encoders, shared fusion projection, classifier head.
struct ModelParams {
    std::vector<EncoderParams> encoders;
    Tensor fusion_w, fusion_b;  // D x D, D
    Tensor head_w, head_b;      // D x C, C
};

// Decoupled adapter pair for one modality. Fresh pairs are exact identities:
// the up-projection and the plastic matrix start at zero.
struct AdapterPair {
    Tensor stable_down;  // D x r
    Tensor stable_up;    // r x D
    Tensor plastic;      // D x D
    bool plastic_active = false;
    bool stable_trainable = true;
    Tensor stable_down_init;  // pristine copy restored by episodic reset

    bool is_identity() const {
        for (double v : stable_up.flat())
            if (v != 0.0) return false;
        for (double v : plastic.flat())
            if (v != 0.0) return false;
        return true;
    }
};

using AdapterSet = std::vector<AdapterPair>;

inline ModelParams init_model(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    ModelParams p;
    Rng r = rng.fork(0x6d6f64656cULL);
    for (std::size_t m = 0; m < cfg.modality_count(); ++m) {
        EncoderParams e;
        const double s1 = 1.0 / std::sqrt(static_cast<double>(cfg.input_dims[m]));
        const double s2 = 1.0 / std::sqrt(static_cast<double>(cfg.hidden));
        e.w1 = Tensor::gaussian({cfg.input_dims[m], cfg.hidden}, r, s1);
        e.b1 = Tensor({cfg.hidden});
        e.w2 = Tensor::gaussian({cfg.hidden, cfg.feature_dim}, r, s2);
        e.b2 = Tensor({cfg.feature_dim});
        p.encoders.push_back(std::move(e));
    }
    const double sf = 1.0 / std::sqrt(static_cast<double>(cfg.feature_dim));
    p.fusion_w = Tensor::gaussian({cfg.feature_dim, cfg.feature_dim}, r, sf);
    p.fusion_b = Tensor({cfg.feature_dim});
    p.head_w = Tensor::gaussian({cfg.feature_dim, cfg.num_classes}, r, sf);
    p.head_b = Tensor({cfg.num_classes});
    return p;
}

inline AdapterSet init_adapters(const ModelConfig& cfg, Rng& rng) {
    AdapterSet set;
    Rng r = rng.fork(0x61646170ULL);
    for (std::size_t m = 0; m < cfg.modality_count(); ++m) {
        AdapterPair a;
        // Small nonzero down-projection gives the bottleneck gradient at init;
        // zero up-projection keeps the pair an exact identity.
        a.stable_down = Tensor::uniform({cfg.feature_dim, cfg.stable_rank}, r, -0.01, 0.01);
        a.stable_up = Tensor({cfg.stable_rank, cfg.feature_dim});
        a.plastic = Tensor::zeros(cfg.feature_dim, cfg.feature_dim);
        a.stable_down_init = a.stable_down;
        set.push_back(std::move(a));
    }
    return set;
}

// Restores every pair to its freshly initialized state, bit for bit.
inline void reset_adapters(AdapterSet& set) {
    for (AdapterPair& a : set) {
        a.stable_down = a.stable_down_init;
        std::fill(a.stable_up.flat().begin(), a.stable_up.flat().end(), 0.0);
        std::fill(a.plastic.flat().begin(), a.plastic.flat().end(), 0.0);
        a.plastic_active = false;
        a.stable_trainable = true;
    }
}

// One modality's slice of an unlabeled batch: raw inputs plus an optional
// additive offset applied in encoder-output space (the latent shift kind
// corrupts features, not inputs).
struct ModalBatch {
    Tensor x;
    std::optional<Tensor> latent_offset;
};

using MultiBatch = std::vector<ModalBatch>;  // indexed by modality

namespace detail {

inline Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
    return add_rowvec(matmul(x, w), b);
}

}  // namespace detail

// z = f^m(x): two affine layers with a ReLU between them.
inline Tensor encode(const ModelConfig& cfg, const ModelParams& p, std::size_t m,
                     const Tensor& x) {
    if (x.rank() != 2 || x.cols() != cfg.input_dims[m]) {
        throw ShapeError("encode: input " + x.shape_str() + " does not match d_in " +
                         std::to_string(cfg.input_dims[m]));
    }
    const EncoderParams& e = p.encoders[m];
    return detail::affine(relu(detail::affine(x, e.w1, e.b1)), e.w2, e.b2);
}

inline Tensor encode_batch(const ModelConfig& cfg, const ModelParams& p, std::size_t m,
                           const ModalBatch& batch) {
    Tensor z = encode(cfg, p, m, batch.x);
    if (batch.latent_offset) {
        return add(z, *batch.latent_offset);
    }
    return z;
}

// h = z + ReLU(z W_down) W_up
inline Tensor stable_forward(const AdapterPair& a, const Tensor& z) {
    return add(z, matmul(relu(matmul(z, a.stable_down)), a.stable_up));
}

// h = z + z W
inline Tensor plastic_forward(const AdapterPair& a, const Tensor& z) {
    return add(z, matmul(z, a.plastic));
}

// Biased modalities get the full stable-then-plastic path; unbiased ones get
// the stable adapter only, with the plastic module bypassed outright.
inline Tensor adapted_features(const AdapterPair& a, const Tensor& z, bool biased) {
    const Tensor s = stable_forward(a, z);
    return biased ? plastic_forward(a, s) : s;
}

inline Tensor project(const ModelParams& p, const Tensor& feats) {
    return detail::affine(feats, p.fusion_w, p.fusion_b);
}

inline Tensor head_logits(const ModelParams& p, const Tensor& unified) {
    return detail::affine(unified, p.head_w, p.head_b);
}

// softmax(f^c(f^u(z or z~))) for a single modality.
inline Tensor predict_unimodal(const ModelConfig& cfg, const ModelParams& p,
                               const AdapterSet& adapters, std::size_t m, const Tensor& z,
                               bool adapted) {
    if (z.rank() != 2 || z.cols() != cfg.feature_dim) {
        throw ShapeError("predict_unimodal: features " + z.shape_str() +
                         " do not match the latent width " + std::to_string(cfg.feature_dim));
    }
    const Tensor feats = adapted ? adapted_features(adapters[m], z, adapters[m].plastic_active)
                                 : z;
    return softmax_rows(head_logits(p, project(p, feats)));
}

// Joint prediction from per-modality encoder outputs: the projected adapted
// features are averaged in a fixed modality order, then classified.
inline Tensor predict_joint_from_features(const ModelConfig& cfg, const ModelParams& p,
                                          const AdapterSet& adapters,
                                          const std::vector<Tensor>& z,
                                          const std::set<std::size_t>& biased) {
    if (z.size() != cfg.modality_count()) {
        throw ContractError("predict_joint: expected " + std::to_string(cfg.modality_count()) +
                            " modal feature blocks, got " + std::to_string(z.size()));
    }
    const std::size_t rows = z[0].rows();
    for (const Tensor& t : z) {
        if (t.rows() != rows) throw ContractError("predict_joint: batch sizes disagree");
    }
    Tensor pooled;
    for (std::size_t m = 0; m < z.size(); ++m) {
        const Tensor zt = adapted_features(adapters[m], z[m], biased.count(m) > 0);
        const Tensor u = project(p, zt);
        pooled = m == 0 ? u : add(pooled, u);
    }
    pooled = scale(pooled, 1.0 / static_cast<double>(z.size()));
    return softmax_rows(head_logits(p, pooled));
}

inline Tensor predict_joint(const ModelConfig& cfg, const ModelParams& p,
                            const AdapterSet& adapters, const MultiBatch& batch,
                            const std::set<std::size_t>& biased) {
    if (batch.size() != cfg.modality_count()) {
        throw ContractError("predict_joint: batch is missing modalities (" +
                            std::to_string(batch.size()) + " of " +
                            std::to_string(cfg.modality_count()) + ")");
    }
    std::vector<Tensor> z;
    z.reserve(batch.size());
    for (std::size_t m = 0; m < batch.size(); ++m) {
        z.push_back(encode_batch(cfg, p, m, batch[m]));
    }
    return predict_joint_from_features(cfg, p, adapters, z, biased);
}

inline std::vector<int> argmax_rows(const Tensor& probs) {
    std::vector<int> out(probs.rows());
    for (std::size_t i = 0; i < probs.rows(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < probs.cols(); ++j) {
            if (probs.at(i, j) > probs.at(i, best)) best = j;
        }
        out[i] = static_cast<int>(best);
    }
    return out;
}

inline double accuracy(const std::vector<int>& pred, const std::vector<int>& labels) {
    if (pred.size() != labels.size() || pred.empty()) {
        throw ContractError("accuracy: prediction/label sizes disagree");
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == labels[i];
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

// ---------------------------------------------------------------------------
// Tape builders. These mirror the plain forwards above node for node so that
// graph values and evaluation values are bit-identical.
// ---------------------------------------------------------------------------

inline Tape::ValueId affine_node(Tape& t, Tape::ValueId x, Tape::ValueId w, Tape::ValueId b) {
    return t.add_rowvec(t.matmul(x, w), b);
}

inline Tape::ValueId stable_node(Tape& t, Tape::ValueId z, Tape::ValueId down,
                                 Tape::ValueId up) {
    return t.add(z, t.matmul(t.relu(t.matmul(z, down)), up));
}

inline Tape::ValueId plastic_node(Tape& t, Tape::ValueId z, Tape::ValueId w) {
    return t.add(z, t.matmul(z, w));
}

// Canonical parameter names shared by checkpoints, gradients and the optimizer.
inline std::string encoder_param_name(const ModelConfig& cfg, std::size_t m, const char* leaf) {
    return "enc." + cfg.modalities[m] + "." + leaf;
}

inline std::string adapter_param_name(const ModelConfig& cfg, std::size_t m, const char* leaf) {
    return "adapter." + cfg.modalities[m] + "." + leaf;
}

}  // namespace dasp
