#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dasp/losses.hpp"
#include "dasp/model.hpp"
#include "dasp/optimizer.hpp"
#include "dasp/rng.hpp"

namespace dasp {

// Synthetic source task: class-conditional Gaussians per modality, paired
// across modalities through a shared per-sample latent semantic vector.
struct TaskSpec {
    std::size_t num_classes = 10;
    std::vector<std::size_t> input_dims = {32, 32};
    std::size_t latent_dim = 8;
    // Scales are small on purpose: encoder outputs then sit near the latent
    // shift magnitudes of the severity schedule, the regime where redundancy
    // diagnosis is informative.
    double mean_scale = 0.09;    // entry scale of the class means
    double latent_scale = 0.06;  // shared semantic component
    double noise_scale = 0.06;   // modality-private noise
    std::size_t train_count = 2000;
    std::size_t test_count = 1000;
    std::uint64_t seed = 0;

    void validate() const {
        if (num_classes < 2) throw SpecError("task: need at least two classes");
        if (input_dims.empty()) throw SpecError("task: need at least one modality");
        if (train_count == 0 || test_count == 0) throw SpecError("task: empty split");
    }
};

struct Dataset {
    std::vector<Tensor> train_x, test_x;   // per modality, [N x d_in]
    std::vector<int> train_y, test_y;
    std::vector<Tensor> class_means;       // per modality, [C x d_in]
};

inline Dataset gen_dataset(const TaskSpec& spec) {
    spec.validate();
    const std::size_t modalities = spec.input_dims.size();
    Rng root(spec.seed);

    Dataset ds;
    Rng mean_rng = root.fork(0x6d65616eULL);
    for (std::size_t m = 0; m < modalities; ++m) {
        ds.class_means.push_back(Tensor::gaussian({spec.num_classes, spec.input_dims[m]},
                                                  mean_rng, spec.mean_scale));
    }
    // Pairwise-distinct means; Gaussian draws collide with probability zero,
    // so a collision signals a broken generator.
    for (std::size_t m = 0; m < modalities; ++m) {
        for (std::size_t a = 0; a < spec.num_classes; ++a) {
            for (std::size_t b = a + 1; b < spec.num_classes; ++b) {
                double dist = 0.0;
                for (std::size_t j = 0; j < spec.input_dims[m]; ++j) {
                    const double d = ds.class_means[m].at(a, j) - ds.class_means[m].at(b, j);
                    dist += d * d;
                }
                if (dist == 0.0) throw SpecError("task: duplicate class means generated");
            }
        }
    }

    // Per-modality projection of the shared latent vector; unit output scale
    // before latent_scale is applied.
    std::vector<Tensor> latent_proj;
    Rng proj_rng = root.fork(0x70726f6aULL);
    const double proj_sd = 1.0 / std::sqrt(static_cast<double>(spec.latent_dim));
    for (std::size_t m = 0; m < modalities; ++m) {
        latent_proj.push_back(
            Tensor::gaussian({spec.latent_dim, spec.input_dims[m]}, proj_rng, proj_sd));
    }

    auto draw_split = [&](std::size_t count, std::uint64_t stream, std::vector<Tensor>& xs,
                          std::vector<int>& ys) {
        Rng rng = root.fork(stream);
        for (std::size_t m = 0; m < modalities; ++m) {
            xs.push_back(Tensor({count, spec.input_dims[m]}));
        }
        ys.resize(count);
        Tensor latent({std::size_t{1}, spec.latent_dim});
        for (std::size_t i = 0; i < count; ++i) {
            const int y = static_cast<int>(rng.below(spec.num_classes));
            ys[i] = y;
            for (std::size_t k = 0; k < spec.latent_dim; ++k) latent.at(0, k) = rng.gaussian();
            for (std::size_t m = 0; m < modalities; ++m) {
                const Tensor sem = matmul(latent, latent_proj[m]);
                for (std::size_t j = 0; j < spec.input_dims[m]; ++j) {
                    xs[m].at(i, j) = ds.class_means[m].at(y, j) +
                                     spec.latent_scale * sem.at(0, j) +
                                     spec.noise_scale * rng.gaussian();
                }
            }
        }
    };
    draw_split(spec.train_count, 0x747261696eULL, ds.train_x, ds.train_y);
    draw_split(spec.test_count, 0x74657374ULL, ds.test_x, ds.test_y);
    return ds;
}

// ---------------------------------------------------------------------------
// Corruption machinery.
// ---------------------------------------------------------------------------

enum class ShiftKind { None, InputGaussian, Rank1Latent };

inline const char* to_string(ShiftKind k) {
    switch (k) {
        case ShiftKind::None: return "none";
        case ShiftKind::InputGaussian: return "input-gaussian";
        case ShiftKind::Rank1Latent: return "rank1-latent";
    }
    return "?";
}

inline ShiftKind shift_kind_from_string(const std::string& s) {
    if (s == "none") return ShiftKind::None;
    if (s == "input-gaussian" || s == "input_gaussian") return ShiftKind::InputGaussian;
    if (s == "rank1-latent" || s == "rank1_latent") return ShiftKind::Rank1Latent;
    throw ConfigError("unknown shift kind '" + s + "'");
}

// Severity level 1..5 mapped onto the shift scale sigma_alpha.
inline double severity_sigma(int level) {
    static constexpr double table[5] = {0.25, 0.5, 1.0, 1.5, 2.0};
    if (level < 1 || level > 5) throw SpecError("severity level must be in 1..5");
    return table[level - 1];
}

struct ShiftSpec {
    ShiftKind kind = ShiftKind::None;
    std::size_t target = 0;  // modality index
    int severity = 0;        // 1..5; ignored for kind == None
    Tensor direction;        // rank-1 latent only: unit-norm dense [D]
    // Reference scale for the input-gaussian kind: the noise std is
    // sigma_alpha * input_ref, so the severity schedule grades sensibly
    // against the task's input magnitudes. A repo constant, not from the
    // benchmark corruption packs.
    double input_ref = 0.15;

    double sigma_alpha() const { return kind == ShiftKind::None ? 0.0 : severity_sigma(severity); }

    void validate() const {
        if (kind == ShiftKind::None) return;
        severity_sigma(severity);
        if (kind == ShiftKind::Rank1Latent) {
            if (direction.rank() != 1 || direction.size() < 2) {
                throw SpecError("rank-1 shift needs a direction vector of length >= 2");
            }
            std::size_t nonzero = 0;
            double norm = 0.0;
            for (double v : direction.flat()) {
                nonzero += v != 0.0;
                norm += v * v;
            }
            if (nonzero < 2) throw SpecError("rank-1 shift direction must have >= 2 nonzeros");
            if (std::abs(std::sqrt(norm) - 1.0) > 1e-9) {
                throw SpecError("rank-1 shift direction must be unit-norm");
            }
        }
    }
};

// Dense unit-norm direction; Gaussian entries are nonzero with probability one.
inline Tensor make_shift_direction(std::size_t dim, Rng& rng) {
    Tensor v = Tensor::gaussian({dim}, rng);
    double norm = 0.0;
    for (double x : v.flat()) norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : v.flat()) x /= norm;
    return v;
}

// Corrupts the target modality in place: per-entry Gaussian noise in input
// space, or a per-sample rank-1 offset recorded in encoder-output space.
// Other modalities are left byte-identical.
inline void apply_shift(MultiBatch& batch, const ShiftSpec& shift, Rng& rng) {
    shift.validate();
    if (shift.kind == ShiftKind::None) return;
    if (shift.target >= batch.size()) {
        throw SpecError("shift targets modality " + std::to_string(shift.target) +
                        " but the batch has " + std::to_string(batch.size()));
    }
    ModalBatch& mb = batch[shift.target];
    const double sigma = shift.sigma_alpha();
    if (shift.kind == ShiftKind::InputGaussian) {
        const double noise_sd = sigma * shift.input_ref;
        for (double& v : mb.x.flat()) v += rng.gaussian(0.0, noise_sd);
    } else {
        const std::size_t rows = mb.x.rows();
        const std::size_t d = shift.direction.size();
        Tensor offset({rows, d});
        for (std::size_t i = 0; i < rows; ++i) {
            const double alpha = rng.gaussian(0.0, sigma);
            for (std::size_t j = 0; j < d; ++j) offset.at(i, j) = alpha * shift.direction[j];
        }
        mb.latent_offset = std::move(offset);
    }
}

// ---------------------------------------------------------------------------
// Streams.
// ---------------------------------------------------------------------------

enum class Protocol { Episodic, Continual, Interleaved };

inline const char* to_string(Protocol p) {
    switch (p) {
        case Protocol::Episodic: return "episodic";
        case Protocol::Continual: return "continual";
        case Protocol::Interleaved: return "interleaved";
    }
    return "?";
}

inline Protocol protocol_from_string(const std::string& s) {
    if (s == "episodic") return Protocol::Episodic;
    if (s == "continual") return Protocol::Continual;
    if (s == "interleaved") return Protocol::Interleaved;
    throw ConfigError("unknown protocol '" + s + "'");
}

struct Segment {
    ShiftSpec shift;
    std::size_t batches = 0;
};

// Content-derived stream key: segments draw their samples and shift noise
// from (what they corrupt, how hard, for how long), not from their position,
// so reordering an episodic schedule leaves each segment's batches intact.
inline std::uint64_t segment_content_key(const Segment& seg, std::size_t occurrence) {
    std::uint64_t h = 1469598103934665603ULL;
    const auto mix = [&h](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xff;
            h *= 1099511628211ULL;
        }
    };
    mix(static_cast<std::uint64_t>(seg.shift.kind));
    mix(seg.shift.target);
    mix(static_cast<std::uint64_t>(seg.shift.severity));
    mix(seg.batches);
    mix(occurrence);
    return h;
}

inline std::size_t segment_occurrence(const std::vector<Segment>& segments, std::size_t index) {
    std::size_t count = 0;
    for (std::size_t i = 0; i < index; ++i) {
        const Segment& a = segments[i];
        const Segment& b = segments[index];
        if (a.shift.kind == b.shift.kind && a.shift.target == b.shift.target &&
            a.shift.severity == b.shift.severity && a.batches == b.batches) {
            ++count;
        }
    }
    return count;
}

struct StreamSpec {
    Protocol protocol = Protocol::Continual;
    std::vector<Segment> segments;
    std::uint64_t seed = 0;

    void validate() const {
        if (segments.empty()) throw SpecError("stream: empty schedule");
        for (const Segment& s : segments) {
            s.shift.validate();
            if (s.batches == 0) throw SpecError("stream: segment with zero batches");
        }
        if (protocol == Protocol::Interleaved) {
            const Segment* prev = nullptr;
            for (const Segment& s : segments) {
                if (s.shift.kind == ShiftKind::None) continue;
                if (prev && prev->shift.target == s.shift.target) {
                    throw SpecError("interleaved stream must alternate the target modality");
                }
                prev = &s;
            }
        }
    }
};

struct StreamBatch {
    MultiBatch data;                     // unlabeled adaptation input
    std::vector<int> labels;             // held out for scoring only
    std::optional<std::size_t> truth;    // ground-truth biased modality
    std::size_t segment = 0;
    bool reset_marker = false;           // episodic: start of a corruption type
    ShiftKind kind = ShiftKind::None;
    int severity = 0;
};

struct Stream {
    StreamSpec spec;
    std::size_t batch_size = 0;
    std::vector<StreamBatch> batches;
};

// Materializes the full stream: per segment, test samples are drawn in
// shuffled order (reshuffling on exhaustion) and corrupted per the segment's
// shift. Everything is a pure function of (spec, dataset, batch_size).
inline Stream build_stream(const StreamSpec& spec, const Dataset& dataset,
                           std::size_t batch_size) {
    spec.validate();
    if (batch_size == 0) throw SpecError("stream: batch size must be positive");
    const std::size_t modalities = dataset.test_x.size();
    const std::size_t pool = dataset.test_y.size();

    Stream stream;
    stream.spec = spec;
    stream.batch_size = batch_size;
    Rng root(spec.seed);

    for (std::size_t si = 0; si < spec.segments.size(); ++si) {
        const Segment& seg = spec.segments[si];
        Rng seg_rng = root.fork(segment_content_key(seg, segment_occurrence(spec.segments, si)));
        Rng shift_rng = seg_rng.fork(0x7368696674ULL);
        std::vector<std::size_t> order(pool);
        for (std::size_t i = 0; i < pool; ++i) order[i] = i;
        seg_rng.shuffle(order);
        std::size_t cursor = 0;

        for (std::size_t b = 0; b < seg.batches; ++b) {
            StreamBatch sb;
            sb.segment = si;
            sb.kind = seg.shift.kind;
            sb.severity = seg.shift.kind == ShiftKind::None ? 0 : seg.shift.severity;
            sb.truth = seg.shift.kind == ShiftKind::None
                           ? std::nullopt
                           : std::optional<std::size_t>(seg.shift.target);
            sb.reset_marker = spec.protocol == Protocol::Episodic && b == 0;
            sb.labels.reserve(batch_size);
            sb.data.resize(modalities);
            for (std::size_t m = 0; m < modalities; ++m) {
                sb.data[m].x = Tensor({batch_size, dataset.test_x[m].cols()});
            }
            for (std::size_t i = 0; i < batch_size; ++i) {
                if (cursor == pool) {
                    seg_rng.shuffle(order);
                    cursor = 0;
                }
                const std::size_t idx = order[cursor++];
                sb.labels.push_back(dataset.test_y[idx]);
                for (std::size_t m = 0; m < modalities; ++m) {
                    const std::size_t cols = dataset.test_x[m].cols();
                    for (std::size_t j = 0; j < cols; ++j) {
                        sb.data[m].x.at(i, j) = dataset.test_x[m].at(idx, j);
                    }
                }
            }
            apply_shift(sb.data, seg.shift, shift_rng);
            stream.batches.push_back(std::move(sb));
        }
    }
    return stream;
}

// ---------------------------------------------------------------------------
// Source pretraining.
// ---------------------------------------------------------------------------

struct PretrainResult {
    std::vector<double> epoch_losses;  // mean cross-entropy per epoch
};

// Second pretraining phase with frozen encoders: a short joint warmup of
// fusion and head, then head-only sharpening. Bounding the fusion epochs
// keeps the unified-space geometry the redundancy diagnosis reads close to
// its encoder-driven state while the classifier becomes confident.
inline PretrainResult pretrain_head(const ModelConfig& cfg, ModelParams& params,
                                    const Dataset& dataset, std::size_t epochs, double lr,
                                    std::size_t batch_size, std::uint64_t seed,
                                    std::size_t fusion_epochs = 1) {
    cfg.validate();
    const std::size_t n = dataset.train_y.size();
    const std::size_t b_max = std::min(batch_size, n);
    OptimizerState opt;
    const AdamConfig adam{lr, 0.9, 0.999, 1e-8};
    Rng rng(seed ^ 0x68656164ULL);

    std::vector<Tensor> z_all;
    for (std::size_t m = 0; m < cfg.modality_count(); ++m) {
        z_all.push_back(encode(cfg, params, m, dataset.train_x[m]));
    }

    PretrainResult result;
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        const bool train_fusion = epoch < fusion_epochs;
        rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += b_max) {
            const std::size_t rows = std::min(b_max, n - start);
            std::vector<Tensor> zs;
            Tensor onehot({rows, cfg.num_classes});
            for (std::size_t m = 0; m < cfg.modality_count(); ++m) {
                Tensor z({rows, cfg.feature_dim});
                for (std::size_t i = 0; i < rows; ++i) {
                    const std::size_t idx = order[start + i];
                    for (std::size_t j = 0; j < cfg.feature_dim; ++j) {
                        z.at(i, j) = z_all[m].at(idx, j);
                    }
                }
                zs.push_back(std::move(z));
            }
            for (std::size_t i = 0; i < rows; ++i) {
                onehot.at(i, static_cast<std::size_t>(dataset.train_y[order[start + i]])) = 1.0;
            }

            Tape tape;
            const auto fw = train_fusion ? tape.param("fusion.w", params.fusion_w)
                                         : tape.constant(params.fusion_w);
            const auto fb = train_fusion ? tape.param("fusion.b", params.fusion_b)
                                         : tape.constant(params.fusion_b);
            const auto hw = tape.param("head.w", params.head_w);
            const auto hb = tape.param("head.b", params.head_b);
            Tape::ValueId pooled = 0;
            for (std::size_t m = 0; m < cfg.modality_count(); ++m) {
                const auto u = affine_node(tape, tape.constant(zs[m]), fw, fb);
                pooled = m == 0 ? u : tape.add(pooled, u);
            }
            pooled = tape.scale(pooled, 1.0 / static_cast<double>(cfg.modality_count()));
            const auto probs = tape.softmax_rows(affine_node(tape, pooled, hw, hb));
            const auto picked = tape.mul(tape.log_clamped(probs, kProbClamp),
                                         tape.constant(onehot));
            const auto loss = tape.scale(tape.sum_all(picked),
                                         -1.0 / static_cast<double>(rows));

            const double loss_value = tape.scalar_value(loss);
            if (!std::isfinite(loss_value)) {
                throw TrainingError("head pretrain diverged (non-finite loss) with seed " +
                                    std::to_string(seed));
            }
            loss_sum += loss_value;
            ++batches;

            const GradientMap grads = tape.backward(loss);
            if (train_fusion) {
                adam_update(opt, "fusion.w", params.fusion_w, grads.at("fusion.w"), adam);
                adam_update(opt, "fusion.b", params.fusion_b, grads.at("fusion.b"), adam);
            }
            adam_update(opt, "head.w", params.head_w, grads.at("head.w"), adam);
            adam_update(opt, "head.b", params.head_b, grads.at("head.b"), adam);
        }
        result.epoch_losses.push_back(loss_sum / static_cast<double>(batches));
    }
    return result;
}

// Supervised cross-entropy training of encoders, fusion and head. Adapters
// are not involved; they stay at their identity init.
inline PretrainResult pretrain_source(const ModelConfig& cfg, ModelParams& params,
                                      const Dataset& dataset, std::size_t epochs, double lr,
                                      std::size_t batch_size, std::uint64_t seed) {
    cfg.validate();
    if (dataset.train_x.size() != cfg.modality_count()) {
        throw SpecError("pretrain: dataset modality count does not match the model");
    }
    const std::size_t n = dataset.train_y.size();
    const std::size_t b_max = std::min(batch_size, n);
    OptimizerState opt;
    const AdamConfig adam{lr, 0.9, 0.999, 1e-8};
    Rng rng(seed);

    PretrainResult result;
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += b_max) {
            const std::size_t rows = std::min(b_max, n - start);
            // Slice the minibatch.
            std::vector<Tensor> xs;
            Tensor onehot({rows, cfg.num_classes});
            for (std::size_t m = 0; m < cfg.modality_count(); ++m) {
                Tensor x({rows, cfg.input_dims[m]});
                for (std::size_t i = 0; i < rows; ++i) {
                    const std::size_t idx = order[start + i];
                    for (std::size_t j = 0; j < cfg.input_dims[m]; ++j) {
                        x.at(i, j) = dataset.train_x[m].at(idx, j);
                    }
                }
                xs.push_back(std::move(x));
            }
            for (std::size_t i = 0; i < rows; ++i) {
                onehot.at(i, static_cast<std::size_t>(dataset.train_y[order[start + i]])) = 1.0;
            }

            Tape tape;
            std::vector<std::string> names;
            std::vector<Tensor*> targets;
            auto reg = [&](const std::string& name, Tensor& t) {
                names.push_back(name);
                targets.push_back(&t);
                return tape.param(name, t);
            };
            Tape::ValueId pooled = 0;
            const auto fw = reg("fusion.w", params.fusion_w);
            const auto fb = reg("fusion.b", params.fusion_b);
            const auto hw = reg("head.w", params.head_w);
            const auto hb = reg("head.b", params.head_b);
            for (std::size_t m = 0; m < cfg.modality_count(); ++m) {
                EncoderParams& e = params.encoders[m];
                const auto w1 = reg(encoder_param_name(cfg, m, "w1"), e.w1);
                const auto b1 = reg(encoder_param_name(cfg, m, "b1"), e.b1);
                const auto w2 = reg(encoder_param_name(cfg, m, "w2"), e.w2);
                const auto b2 = reg(encoder_param_name(cfg, m, "b2"), e.b2);
                const auto x = tape.constant(xs[m]);
                const auto z = affine_node(tape, tape.relu(affine_node(tape, x, w1, b1)), w2, b2);
                const auto u = affine_node(tape, z, fw, fb);
                pooled = m == 0 ? u : tape.add(pooled, u);
            }
            pooled = tape.scale(pooled, 1.0 / static_cast<double>(cfg.modality_count()));
            const auto probs = tape.softmax_rows(affine_node(tape, pooled, hw, hb));
            const auto picked = tape.mul(tape.log_clamped(probs, kProbClamp),
                                         tape.constant(onehot));
            const auto loss = tape.scale(tape.sum_all(picked),
                                         -1.0 / static_cast<double>(rows));

            const double loss_value = tape.scalar_value(loss);
            if (!std::isfinite(loss_value)) {
                throw TrainingError("pretrain diverged (non-finite loss) with seed " +
                                    std::to_string(seed));
            }
            loss_sum += loss_value;
            ++batches;

            const GradientMap grads = tape.backward(loss);
            for (std::size_t k = 0; k < names.size(); ++k) {
                adam_update(opt, names[k], *targets[k], grads.at(names[k]), adam);
            }
        }
        result.epoch_losses.push_back(loss_sum / static_cast<double>(batches));
    }
    return result;
}

}  // namespace dasp
