#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dasp/adaptation.hpp"
#include "dasp/datagen.hpp"
#include "dasp/model.hpp"

namespace dasp {

// Everything one experiment needs: task, model, adaptation, stream schedule
// and run bookkeeping. Round-trips losslessly through the INI-style file
// format below.
struct ExperimentConfig {
    TaskSpec task;
    ModelConfig model;
    AdaptConfig adapt;
    StreamSpec stream;
    double input_ref = 0.15;  // input-gaussian reference scale for all segments
    AblationMode ablation = AblationMode::Full;
    std::string out_dir = "out";
    std::uint64_t seed = 0;  // model init + pretraining
    std::size_t pretrain_epochs = 8;
    double pretrain_lr = 1e-4;
    std::size_t pretrain_batch = 64;
    // Head sharpening phase over frozen encoders: fusion joins for the
    // first head_fusion_epochs, then the head trains alone.
    std::size_t head_epochs = 20;
    double head_lr = 1e-3;
    std::size_t head_fusion_epochs = 1;
    std::string checkpoint;  // when set, load instead of pretraining

    void validate() const {
        task.validate();
        model.validate();
        adapt.validate();
        if (task.input_dims != model.input_dims) {
            throw ConfigError("task input_dims and model input_dims disagree");
        }
        for (const Segment& s : stream.segments) {
            if (s.shift.kind != ShiftKind::None && s.shift.target >= model.modality_count()) {
                throw ConfigError("segment targets modality index " +
                                  std::to_string(s.shift.target) + " out of range");
            }
        }
    }
};

namespace detail {

inline std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline double parse_double(const std::string& s, const std::string& where) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(where + ": expected a number, got '" + s + "'");
    }
}

inline std::uint64_t parse_u64(const std::string& s, const std::string& where) {
    try {
        std::size_t pos = 0;
        const std::uint64_t v = std::stoull(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError(where + ": expected a nonnegative integer, got '" + s + "'");
    }
}

inline bool parse_bool(const std::string& s, const std::string& where) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError(where + ": expected true/false, got '" + s + "'");
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    std::size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

}  // namespace detail

// Segment list syntax: comma-separated items, each either
//   none:<batches>                               (clean segment)
//   <kind>:<modality>:<severity>:<batches>       (corrupted segment)
// with <kind> one of rank1-latent, input-gaussian.
inline std::string serialize_segments(const StreamSpec& stream, const ModelConfig& model) {
    std::string out;
    for (std::size_t i = 0; i < stream.segments.size(); ++i) {
        const Segment& s = stream.segments[i];
        if (i) out += ", ";
        if (s.shift.kind == ShiftKind::None) {
            out += "none:" + std::to_string(s.batches);
        } else {
            out += std::string(to_string(s.shift.kind)) + ":" +
                   model.modalities[s.shift.target] + ":" + std::to_string(s.shift.severity) +
                   ":" + std::to_string(s.batches);
        }
    }
    return out;
}

inline std::vector<Segment> parse_segments(const std::string& text, const ModelConfig& model,
                                           const std::string& where) {
    std::vector<Segment> segments;
    for (const std::string& raw : detail::split(text, ',')) {
        const std::string item = detail::trim(raw);
        if (item.empty()) continue;
        const auto parts = detail::split(item, ':');
        Segment seg;
        if (parts[0] == "none") {
            if (parts.size() != 2) {
                throw ConfigError(where + ": clean segment must be none:<batches>, got '" +
                                  item + "'");
            }
            seg.shift.kind = ShiftKind::None;
            seg.batches = detail::parse_u64(parts[1], where);
        } else {
            if (parts.size() != 4) {
                throw ConfigError(where +
                                  ": segment must be kind:modality:severity:batches, got '" +
                                  item + "'");
            }
            seg.shift.kind = shift_kind_from_string(parts[0]);
            seg.shift.target = model.modality_index(parts[1]);
            seg.shift.severity = static_cast<int>(detail::parse_u64(parts[2], where));
            seg.batches = detail::parse_u64(parts[3], where);
        }
        segments.push_back(seg);
    }
    if (segments.empty()) throw ConfigError(where + ": empty segment list");
    return segments;
}

// Canonical serialization; also the config echo embedded in reports.
inline std::string serialize_config(const ExperimentConfig& cfg) {
    using detail::fmt_double;
    std::ostringstream os;
    os << "[task]\n";
    os << "classes = " << cfg.task.num_classes << "\n";
    os << "input_dims = ";
    for (std::size_t i = 0; i < cfg.task.input_dims.size(); ++i) {
        if (i) os << ",";
        os << cfg.task.input_dims[i];
    }
    os << "\n";
    os << "latent_dim = " << cfg.task.latent_dim << "\n";
    os << "mean_scale = " << fmt_double(cfg.task.mean_scale) << "\n";
    os << "latent_scale = " << fmt_double(cfg.task.latent_scale) << "\n";
    os << "noise_scale = " << fmt_double(cfg.task.noise_scale) << "\n";
    os << "train_count = " << cfg.task.train_count << "\n";
    os << "test_count = " << cfg.task.test_count << "\n";
    os << "seed = " << cfg.task.seed << "\n";
    os << "\n[model]\n";
    os << "modalities = ";
    for (std::size_t i = 0; i < cfg.model.modalities.size(); ++i) {
        if (i) os << ",";
        os << cfg.model.modalities[i];
    }
    os << "\n";
    os << "hidden = " << cfg.model.hidden << "\n";
    os << "feature_dim = " << cfg.model.feature_dim << "\n";
    os << "stable_rank = " << cfg.model.stable_rank << "\n";
    os << "\n[adapt]\n";
    os << "learning_rate = " << fmt_double(cfg.adapt.learning_rate) << "\n";
    os << "batch_size = " << cfg.adapt.batch_size << "\n";
    os << "delta = " << fmt_double(cfg.adapt.delta) << "\n";
    os << "lambda_ent = " << fmt_double(cfg.adapt.lambda_ent) << "\n";
    os << "lambda_kl = " << fmt_double(cfg.adapt.lambda_kl) << "\n";
    os << "adam_beta1 = " << fmt_double(cfg.adapt.beta1) << "\n";
    os << "adam_beta2 = " << fmt_double(cfg.adapt.beta2) << "\n";
    os << "adam_epsilon = " << fmt_double(cfg.adapt.adam_epsilon) << "\n";
    os << "variance_eps = " << fmt_double(cfg.adapt.variance_eps) << "\n";
    os << "vote_window = " << cfg.adapt.vote_window << "\n";
    os << "use_feature_queue = " << (cfg.adapt.use_feature_queue ? "true" : "false") << "\n";
    os << "queue_capacity = " << cfg.adapt.queue_capacity << "\n";
    os << "queue_min_batch = " << cfg.adapt.queue_min_batch << "\n";
    os << "diagnose_on_adapted = " << (cfg.adapt.diagnose_on_adapted ? "true" : "false") << "\n";
    os << "\n[stream]\n";
    os << "protocol = " << to_string(cfg.stream.protocol) << "\n";
    os << "segments = " << serialize_segments(cfg.stream, cfg.model) << "\n";
    os << "input_ref = " << fmt_double(cfg.input_ref) << "\n";
    os << "seed = " << cfg.stream.seed << "\n";
    os << "\n[run]\n";
    os << "seed = " << cfg.seed << "\n";
    os << "ablation = " << to_string(cfg.ablation) << "\n";
    os << "out = " << cfg.out_dir << "\n";
    os << "pretrain_epochs = " << cfg.pretrain_epochs << "\n";
    os << "pretrain_lr = " << fmt_double(cfg.pretrain_lr) << "\n";
    os << "pretrain_batch = " << cfg.pretrain_batch << "\n";
    os << "head_epochs = " << cfg.head_epochs << "\n";
    os << "head_lr = " << fmt_double(cfg.head_lr) << "\n";
    os << "head_fusion_epochs = " << cfg.head_fusion_epochs << "\n";
    os << "checkpoint = " << cfg.checkpoint << "\n";
    return os.str();
}

inline ExperimentConfig parse_config_text(const std::string& text,
                                          const std::string& filename = "<config>") {
    ExperimentConfig cfg;
    std::istringstream in(text);

    // Two passes: sections can appear in any order but [model] must resolve
    // modality names before [stream] segments are interpreted.
    std::vector<std::tuple<int, std::string, std::string, std::string>> entries;
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']') {
                throw ConfigError(filename + ":" + std::to_string(lineno) +
                                  ": malformed section header '" + t + "'");
            }
            section = t.substr(1, t.size() - 2);
            if (section != "task" && section != "model" && section != "adapt" &&
                section != "stream" && section != "run") {
                throw ConfigError(filename + ":" + std::to_string(lineno) +
                                  ": unknown section [" + section + "]");
            }
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(filename + ":" + std::to_string(lineno) +
                              ": expected key = value, got '" + t + "'");
        }
        if (section.empty()) {
            throw ConfigError(filename + ":" + std::to_string(lineno) +
                              ": key outside any section");
        }
        entries.emplace_back(lineno, section, detail::trim(t.substr(0, eq)),
                             detail::trim(t.substr(eq + 1)));
    }

    std::string segments_text;
    int segments_line = 0;
    for (const auto& [ln, sec, key, value] : entries) {
        const std::string where = filename + ":" + std::to_string(ln) + ": [" + sec + "] " + key;
        if (sec == "task") {
            if (key == "classes") cfg.task.num_classes = detail::parse_u64(value, where);
            else if (key == "input_dims") {
                cfg.task.input_dims.clear();
                for (const auto& d : detail::split(value, ','))
                    cfg.task.input_dims.push_back(detail::parse_u64(detail::trim(d), where));
            } else if (key == "latent_dim") cfg.task.latent_dim = detail::parse_u64(value, where);
            else if (key == "mean_scale") cfg.task.mean_scale = detail::parse_double(value, where);
            else if (key == "latent_scale") cfg.task.latent_scale = detail::parse_double(value, where);
            else if (key == "noise_scale") cfg.task.noise_scale = detail::parse_double(value, where);
            else if (key == "train_count") cfg.task.train_count = detail::parse_u64(value, where);
            else if (key == "test_count") cfg.task.test_count = detail::parse_u64(value, where);
            else if (key == "seed") cfg.task.seed = detail::parse_u64(value, where);
            else throw ConfigError(where + ": unknown key");
        } else if (sec == "model") {
            if (key == "modalities") {
                cfg.model.modalities.clear();
                for (const auto& n : detail::split(value, ','))
                    cfg.model.modalities.push_back(detail::trim(n));
            } else if (key == "hidden") cfg.model.hidden = detail::parse_u64(value, where);
            else if (key == "feature_dim") cfg.model.feature_dim = detail::parse_u64(value, where);
            else if (key == "stable_rank") cfg.model.stable_rank = detail::parse_u64(value, where);
            else throw ConfigError(where + ": unknown key");
        } else if (sec == "adapt") {
            if (key == "learning_rate") cfg.adapt.learning_rate = detail::parse_double(value, where);
            else if (key == "batch_size") cfg.adapt.batch_size = detail::parse_u64(value, where);
            else if (key == "delta") cfg.adapt.delta = detail::parse_double(value, where);
            else if (key == "lambda_ent") cfg.adapt.lambda_ent = detail::parse_double(value, where);
            else if (key == "lambda_kl") cfg.adapt.lambda_kl = detail::parse_double(value, where);
            else if (key == "adam_beta1") cfg.adapt.beta1 = detail::parse_double(value, where);
            else if (key == "adam_beta2") cfg.adapt.beta2 = detail::parse_double(value, where);
            else if (key == "adam_epsilon") cfg.adapt.adam_epsilon = detail::parse_double(value, where);
            else if (key == "variance_eps") cfg.adapt.variance_eps = detail::parse_double(value, where);
            else if (key == "vote_window") cfg.adapt.vote_window = detail::parse_u64(value, where);
            else if (key == "use_feature_queue") cfg.adapt.use_feature_queue = detail::parse_bool(value, where);
            else if (key == "queue_capacity") cfg.adapt.queue_capacity = detail::parse_u64(value, where);
            else if (key == "queue_min_batch") cfg.adapt.queue_min_batch = detail::parse_u64(value, where);
            else if (key == "diagnose_on_adapted") cfg.adapt.diagnose_on_adapted = detail::parse_bool(value, where);
            else throw ConfigError(where + ": unknown key");
        } else if (sec == "stream") {
            if (key == "protocol") cfg.stream.protocol = protocol_from_string(value);
            else if (key == "segments") { segments_text = value; segments_line = ln; }
            else if (key == "input_ref") cfg.input_ref = detail::parse_double(value, where);
            else if (key == "seed") cfg.stream.seed = detail::parse_u64(value, where);
            else throw ConfigError(where + ": unknown key");
        } else {  // run
            if (key == "seed") cfg.seed = detail::parse_u64(value, where);
            else if (key == "ablation") cfg.ablation = ablation_from_string(value);
            else if (key == "out") cfg.out_dir = value;
            else if (key == "pretrain_epochs") cfg.pretrain_epochs = detail::parse_u64(value, where);
            else if (key == "pretrain_lr") cfg.pretrain_lr = detail::parse_double(value, where);
            else if (key == "pretrain_batch") cfg.pretrain_batch = detail::parse_u64(value, where);
            else if (key == "head_epochs") cfg.head_epochs = detail::parse_u64(value, where);
            else if (key == "head_lr") cfg.head_lr = detail::parse_double(value, where);
            else if (key == "head_fusion_epochs") cfg.head_fusion_epochs = detail::parse_u64(value, where);
            else if (key == "checkpoint") cfg.checkpoint = value;
            else throw ConfigError(where + ": unknown key");
        }
    }

    // Model input dims mirror the task's.
    cfg.model.input_dims = cfg.task.input_dims;
    if (!segments_text.empty()) {
        cfg.stream.segments = parse_segments(
            segments_text, cfg.model, filename + ":" + std::to_string(segments_line));
        for (Segment& s : cfg.stream.segments) s.shift.input_ref = cfg.input_ref;
    }
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str(), path);
}

// FNV-1a over the canonical serialization; stamped into every report.
inline std::string config_hash(const ExperimentConfig& cfg) {
    const std::string text = serialize_config(cfg);
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// Deterministic per-segment directions for rank-1 segments that lack one,
// keyed by segment content so schedule reordering keeps each corruption's
// direction.
inline void materialize_directions(ExperimentConfig& cfg) {
    Rng root(cfg.stream.seed);
    for (std::size_t i = 0; i < cfg.stream.segments.size(); ++i) {
        Segment& seg = cfg.stream.segments[i];
        if (seg.shift.kind == ShiftKind::Rank1Latent && seg.shift.direction.size() == 0) {
            Rng r = root.fork(0x646972ULL ^
                              segment_content_key(seg, segment_occurrence(cfg.stream.segments, i)));
            seg.shift.direction = make_shift_direction(cfg.model.feature_dim, r);
        }
        seg.shift.input_ref = cfg.input_ref;
    }
}

}  // namespace dasp
