#pragma once

#include <algorithm>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dasp/losses.hpp"
#include "dasp/model.hpp"
#include "dasp/optimizer.hpp"
#include "dasp/redundancy.hpp"

namespace dasp {

struct AdaptConfig {
    double learning_rate = 1e-4;
    std::size_t batch_size = 64;
    double delta = 0.05;      // redundancy threshold
    double lambda_ent = 0.5;  // entropy coefficient
    double lambda_kl = 1.0;   // KL coefficient
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_epsilon = 1e-8;
    bool episodic_reset = false;

    double variance_eps = kVarianceEps;
    std::size_t vote_window = 1;       // >1 enables majority voting over recent batches
    bool use_feature_queue = false;    // widen small batches with cached rows
    std::size_t queue_capacity = 256;
    std::size_t queue_min_batch = 32;  // queue engages when the batch is smaller
    bool diagnose_on_adapted = false;  // score post-adapter features instead of source ones

    AdamConfig adam() const { return {learning_rate, beta1, beta2, adam_epsilon}; }

    void validate() const {
        if (learning_rate <= 0.0) throw SpecError("adapt: learning_rate must be positive");
        if (delta <= 0.0) throw SpecError("adapt: delta must be positive");
        if (lambda_ent < 0.0 || lambda_kl < 0.0) {
            throw SpecError("adapt: loss coefficients must be nonnegative");
        }
        if (batch_size == 0) throw SpecError("adapt: batch_size must be positive");
    }
};

// Table 7 configurations plus the frozen-source reference.
enum class AblationMode { Full, NoStable, NoPlastic, SymmetricAll, AsymmetricOpposite, SourceOnly };

inline const char* to_string(AblationMode m) {
    switch (m) {
        case AblationMode::Full: return "full";
        case AblationMode::NoStable: return "no_stable";
        case AblationMode::NoPlastic: return "no_plastic";
        case AblationMode::SymmetricAll: return "symmetric_all";
        case AblationMode::AsymmetricOpposite: return "asymmetric_opposite";
        case AblationMode::SourceOnly: return "source_only";
    }
    return "?";
}

inline AblationMode ablation_from_string(const std::string& s) {
    if (s == "full") return AblationMode::Full;
    if (s == "no_stable") return AblationMode::NoStable;
    if (s == "no_plastic") return AblationMode::NoPlastic;
    if (s == "symmetric_all") return AblationMode::SymmetricAll;
    if (s == "asymmetric_opposite") return AblationMode::AsymmetricOpposite;
    if (s == "source_only") return AblationMode::SourceOnly;
    throw ConfigError("unknown ablation mode '" + s + "'");
}

// Which adapter weights train this step, and which plastic paths are active
// in the forward composition.
struct Selection {
    std::set<std::size_t> plastic_train;
    std::set<std::size_t> stable_train;
    std::set<std::size_t> plastic_path;  // modalities routed through the plastic module
    std::set<std::size_t> kl_modality;   // modalities receiving the KL penalty
    std::vector<std::string> param_names;
};

// The asymmetric rule: biased modalities train their plastic adapter with the
// stable one frozen; unbiased modalities train the stable adapter with the
// plastic one bypassed. Ablations rewire the rule.
inline Selection select_trainable(const ModelConfig& cfg, AdapterSet& adapters,
                                  const std::set<std::size_t>& biased,
                                  AblationMode mode = AblationMode::Full) {
    Selection sel;
    const std::size_t count = cfg.modality_count();
    for (std::size_t m = 0; m < count; ++m) {
        const bool in_g = biased.count(m) > 0;
        switch (mode) {
            case AblationMode::Full:
                if (in_g) {
                    sel.plastic_train.insert(m);
                    sel.plastic_path.insert(m);
                } else {
                    sel.stable_train.insert(m);
                    sel.kl_modality.insert(m);
                }
                break;
            case AblationMode::NoStable:
                if (in_g) {
                    sel.plastic_train.insert(m);
                    sel.plastic_path.insert(m);
                } else {
                    sel.kl_modality.insert(m);
                }
                break;
            case AblationMode::NoPlastic:
                sel.stable_train.insert(m);
                if (!in_g) sel.kl_modality.insert(m);
                break;
            case AblationMode::SymmetricAll:
                sel.plastic_train.insert(m);
                sel.stable_train.insert(m);
                sel.plastic_path.insert(m);
                break;
            case AblationMode::AsymmetricOpposite:
                if (in_g) {
                    sel.stable_train.insert(m);
                    sel.kl_modality.insert(m);
                } else {
                    sel.plastic_train.insert(m);
                    sel.plastic_path.insert(m);
                }
                break;
            case AblationMode::SourceOnly:
                break;
        }
    }
    for (std::size_t m = 0; m < count; ++m) {
        adapters[m].plastic_active = sel.plastic_path.count(m) > 0;
        adapters[m].stable_trainable = sel.stable_train.count(m) > 0;
        if (sel.stable_train.count(m)) {
            sel.param_names.push_back(adapter_param_name(cfg, m, "stable.down"));
            sel.param_names.push_back(adapter_param_name(cfg, m, "stable.up"));
        }
        if (sel.plastic_train.count(m)) {
            sel.param_names.push_back(adapter_param_name(cfg, m, "plastic.w"));
        }
    }
    return sel;
}

struct StepOutcome {
    double total = 0.0;
    double entropy = 0.0;
    double diversity = 0.0;
    double kl = 0.0;
    std::set<std::size_t> biased_set;
    std::vector<std::string> updated_params;
    std::vector<int> predictions;        // argmax of the joint prediction, for scoring
    std::optional<double> accuracy;      // filled by the caller when labels exist
    bool diagnosis_unavailable = false;
    RedundancyReport report;
};

// Mutable diagnosis state owned by one adaptation loop: optional majority
// voting over recent batches and optional per-modality feature queues.
struct DiagnosisState {
    std::deque<std::set<std::size_t>> history;
    std::vector<FeatureQueue> queues;

    void reset() {
        history.clear();
        for (auto& q : queues) q.clear();
    }
};

namespace detail {

inline std::set<std::size_t> majority_vote(std::deque<std::set<std::size_t>>& history,
                                           const std::set<std::size_t>& current,
                                           std::size_t window, std::size_t modality_count) {
    history.push_back(current);
    while (history.size() > window) history.pop_front();
    std::set<std::size_t> voted;
    for (std::size_t m = 0; m < modality_count; ++m) {
        std::size_t hits = 0;
        for (const auto& g : history) hits += g.count(m);
        if (2 * hits > history.size()) voted.insert(m);
    }
    return voted;
}

}  // namespace detail

// The per-step loss graph over the adapted forward paths. Exposed separately
// from adapt_step so gradient checks can re-evaluate the objective as a pure
// function of the adapter weights.
struct AdaptGraph {
    Tape tape;
    Tape::ValueId joint_probs = 0;
    Tape::ValueId entropy = 0;
    Tape::ValueId diversity = 0;
    Tape::ValueId kl = 0;
    Tape::ValueId total = 0;
};

inline AdaptGraph build_adapt_graph(const ModelConfig& cfg, const ModelParams& params,
                                    const AdapterSet& adapters, const Selection& sel,
                                    const std::vector<Tensor>& z, const AdaptConfig& acfg,
                                    AblationMode mode) {
    AdaptGraph g;
    Tape& tape = g.tape;
    std::vector<Tape::ValueId> adapted_nodes;
    for (std::size_t m = 0; m < z.size(); ++m) {
        Tape::ValueId cur = tape.constant(z[m]);
        if (mode != AblationMode::NoStable) {
            const auto down =
                sel.stable_train.count(m)
                    ? tape.param(adapter_param_name(cfg, m, "stable.down"), adapters[m].stable_down)
                    : tape.constant(adapters[m].stable_down);
            const auto up =
                sel.stable_train.count(m)
                    ? tape.param(adapter_param_name(cfg, m, "stable.up"), adapters[m].stable_up)
                    : tape.constant(adapters[m].stable_up);
            cur = stable_node(tape, cur, down, up);
        }
        if (sel.plastic_path.count(m)) {
            const auto w = sel.plastic_train.count(m)
                               ? tape.param(adapter_param_name(cfg, m, "plastic.w"),
                                            adapters[m].plastic)
                               : tape.constant(adapters[m].plastic);
            cur = plastic_node(tape, cur, w);
        }
        adapted_nodes.push_back(cur);
    }
    const auto fusion_w = tape.constant(params.fusion_w);
    const auto fusion_b = tape.constant(params.fusion_b);
    const auto head_w = tape.constant(params.head_w);
    const auto head_b = tape.constant(params.head_b);

    Tape::ValueId pooled = 0;
    for (std::size_t m = 0; m < adapted_nodes.size(); ++m) {
        const auto u = affine_node(tape, adapted_nodes[m], fusion_w, fusion_b);
        pooled = m == 0 ? u : tape.add(pooled, u);
    }
    pooled = tape.scale(pooled, 1.0 / static_cast<double>(adapted_nodes.size()));
    g.joint_probs = tape.softmax_rows(affine_node(tape, pooled, head_w, head_b));

    // DASP objective: diversity plus weighted entropy on the joint prediction,
    // plus the KL anchor on the modalities whose stable path carries the update.
    g.entropy = entropy_loss_node(tape, g.joint_probs);
    g.diversity = diversity_loss_node(tape, g.joint_probs);

    g.kl = tape.constant(Tensor::scalar(0.0));
    if (!sel.kl_modality.empty()) {
        std::optional<Tape::ValueId> acc;
        for (std::size_t m : sel.kl_modality) {
            const auto p_tgt = tape.softmax_rows(
                affine_node(tape, affine_node(tape, adapted_nodes[m], fusion_w, fusion_b),
                            head_w, head_b));
            const Tensor p_src = softmax_rows(head_logits(params, project(params, z[m])));
            const auto kl_m = kl_loss_node(tape, p_tgt, tape.constant(p_src));
            acc = acc ? tape.add(*acc, kl_m) : kl_m;
        }
        g.kl = tape.scale(*acc, 1.0 / static_cast<double>(sel.kl_modality.size()));
    }

    g.total = tape.add(g.diversity, tape.add(tape.scale(g.entropy, acfg.lambda_ent),
                                             tape.scale(g.kl, acfg.lambda_kl)));
    return g;
}

// One online adaptation step: diagnose, select, optimize. The batch carries
// no labels; scoring happens in the harness against the returned predictions.
inline StepOutcome adapt_step(const ModelConfig& cfg, const ModelParams& params,
                              AdapterSet& adapters, OptimizerState& opt,
                              const MultiBatch& batch, const AdaptConfig& acfg,
                              AblationMode mode = AblationMode::Full,
                              DiagnosisState* diag = nullptr) {
    acfg.validate();
    if (batch.size() != cfg.modality_count()) {
        throw ContractError("adapt_step: batch covers " + std::to_string(batch.size()) +
                            " modalities, model has " + std::to_string(cfg.modality_count()));
    }
    const std::size_t rows = batch[0].x.rows();
    for (const ModalBatch& mb : batch) {
        if (mb.x.rows() != rows) throw ContractError("adapt_step: batch sizes disagree");
    }

    // (1) Encode every modality along the frozen source path.
    std::vector<Tensor> z;
    z.reserve(batch.size());
    for (std::size_t m = 0; m < batch.size(); ++m) z.push_back(encode_batch(cfg, params, m, batch[m]));

    // (2) Redundancy diagnosis on unified-space features.
    std::vector<Tensor> projected;
    projected.reserve(z.size());
    for (std::size_t m = 0; m < z.size(); ++m) {
        const Tensor feats = acfg.diagnose_on_adapted
                                 ? adapted_features(adapters[m], z[m], adapters[m].plastic_active)
                                 : z[m];
        Tensor proj = project(params, feats);
        if (acfg.use_feature_queue && diag) {
            if (diag->queues.size() != cfg.modality_count()) {
                diag->queues.assign(cfg.modality_count(), FeatureQueue(acfg.queue_capacity));
            }
            diag->queues[m].push_rows(proj);
            if (rows < acfg.queue_min_batch) proj = diag->queues[m].snapshot();
        }
        projected.push_back(std::move(proj));
    }
    StepOutcome out;
    out.report = build_redundancy_report(projected, acfg.delta, acfg.variance_eps);
    out.diagnosis_unavailable = !out.report.diagnosis_available;
    std::set<std::size_t> biased = out.report.biased;  // empty on fallback
    if (diag && acfg.vote_window > 1) {
        biased = detail::majority_vote(diag->history, biased, acfg.vote_window,
                                       cfg.modality_count());
    }
    out.biased_set = biased;

    // (3) Trainable parameter selection under the requested mode.
    const Selection sel = select_trainable(cfg, adapters, biased, mode);

    if (mode == AblationMode::SourceOnly) {
        const Tensor probs = predict_joint_from_features(cfg, params, adapters, z, {});
        out.predictions = argmax_rows(probs);
        out.diversity = diversity_loss(probs);
        out.entropy = entropy_loss(probs);
        out.kl = 0.0;
        out.total = out.diversity + acfg.lambda_ent * out.entropy + acfg.lambda_kl * out.kl;
        return out;
    }

    // (4)-(5) Forward graph and objective.
    AdaptGraph g = build_adapt_graph(cfg, params, adapters, sel, z, acfg, mode);

    out.predictions = argmax_rows(g.tape.value(g.joint_probs));
    out.entropy = g.tape.scalar_value(g.entropy);
    out.diversity = g.tape.scalar_value(g.diversity);
    out.kl = g.tape.scalar_value(g.kl);
    out.total = g.tape.scalar_value(g.total);

    // (6) One optimizer step over the selected parameters only.
    if (!sel.param_names.empty()) {
        const GradientMap grads = g.tape.backward(g.total);
        const AdamConfig adam = acfg.adam();
        for (std::size_t m = 0; m < cfg.modality_count(); ++m) {
            if (sel.stable_train.count(m)) {
                adam_update(opt, adapter_param_name(cfg, m, "stable.down"),
                            adapters[m].stable_down,
                            grads.at(adapter_param_name(cfg, m, "stable.down")), adam);
                adam_update(opt, adapter_param_name(cfg, m, "stable.up"), adapters[m].stable_up,
                            grads.at(adapter_param_name(cfg, m, "stable.up")), adam);
            }
            if (sel.plastic_train.count(m)) {
                adam_update(opt, adapter_param_name(cfg, m, "plastic.w"), adapters[m].plastic,
                            grads.at(adapter_param_name(cfg, m, "plastic.w")), adam);
            }
        }
        out.updated_params = sel.param_names;
    }
    return out;
}

// Returns the adapters to their identity init and clears optimizer moments;
// source weights are untouched.
inline void episodic_reset(AdapterSet& adapters, OptimizerState& opt) {
    reset_adapters(adapters);
    opt.reset();
}

}  // namespace dasp
