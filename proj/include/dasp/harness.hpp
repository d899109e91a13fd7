#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dasp/adaptation.hpp"
#include "dasp/checkpoint.hpp"
#include "dasp/config.hpp"
#include "dasp/datagen.hpp"

namespace dasp {

using ordered_json = nlohmann::ordered_json;

struct SegmentReport {
    std::size_t index = 0;
    ShiftKind kind = ShiftKind::None;
    int severity = 0;
    std::string target;  // modality name, empty for clean segments
    double accuracy = 0.0;
    double diagnosis_hit_rate = 0.0;  // batches where G matched the truth exactly
};

struct RunReport {
    std::string protocol;
    std::string ablation;
    std::uint64_t seed = 0;
    std::string config_hash;
    std::string config_echo;
    std::vector<SegmentReport> segments;
    double mean_accuracy = 0.0;           // arithmetic mean of segment accuracies
    double diagnosis_precision = 1.0;
    double diagnosis_recall = 1.0;
    double source_clean_accuracy = 0.0;   // joint accuracy before any adaptation
    double adapted_clean_accuracy = 0.0;  // deployable path after the run
    std::optional<double> forgetting_joint;              // accuracy points, continual only
    std::map<std::string, double> forgetting_unimodal;   // accuracy points, continual only
    std::size_t steps = 0;
    double mean_step_ms = 0.0;  // timing lives in summary.txt, never in report.json
};

// Source model shared across ablation modes of one seed.
struct PreparedSource {
    Dataset dataset;
    ModelParams params;
    AdapterSet adapters;  // fresh (identity) state
    double clean_accuracy = 0.0;
    std::vector<double> pretrain_losses;
};

inline double clean_joint_accuracy(const ModelConfig& cfg, const ModelParams& params,
                                   const AdapterSet& adapters, const Dataset& ds,
                                   const std::set<std::size_t>& biased = {}) {
    MultiBatch batch(cfg.modality_count());
    for (std::size_t m = 0; m < cfg.modality_count(); ++m) batch[m].x = ds.test_x[m];
    return accuracy(argmax_rows(predict_joint(cfg, params, adapters, batch, biased)), ds.test_y);
}

inline double clean_unimodal_accuracy(const ModelConfig& cfg, const ModelParams& params,
                                      const AdapterSet& adapters, const Dataset& ds,
                                      std::size_t m, bool adapted) {
    const Tensor z = encode(cfg, params, m, ds.test_x[m]);
    return accuracy(argmax_rows(predict_unimodal(cfg, params, adapters, m, z, adapted)),
                    ds.test_y);
}

inline PreparedSource prepare_source(const ExperimentConfig& cfg) {
    cfg.validate();
    PreparedSource src;
    src.dataset = gen_dataset(cfg.task);
    Rng rng(cfg.seed);
    if (!cfg.checkpoint.empty()) {
        CheckpointData data = load_checkpoint(cfg.checkpoint, cfg.model);
        src.params = std::move(data.params);
        src.adapters = std::move(data.adapters);
    } else {
        src.params = init_model(cfg.model, rng);
        src.adapters = init_adapters(cfg.model, rng);
        src.pretrain_losses = pretrain_source(cfg.model, src.params, src.dataset,
                                              cfg.pretrain_epochs, cfg.pretrain_lr,
                                              cfg.pretrain_batch, cfg.seed)
                                  .epoch_losses;
        if (cfg.head_epochs > 0) {
            pretrain_head(cfg.model, src.params, src.dataset, cfg.head_epochs, cfg.head_lr,
                          cfg.pretrain_batch, cfg.seed, cfg.head_fusion_epochs);
        }
    }
    src.clean_accuracy = clean_joint_accuracy(cfg.model, src.params, src.adapters, src.dataset);
    return src;
}

// Runs the configured stream through the adaptation loop against a prepared
// source model. Labels never reach adapt_step; they score its predictions.
inline RunReport run_stream(const ExperimentConfig& cfg, const PreparedSource& src,
                            const Stream& stream) {
    const ModelConfig& model = cfg.model;
    AdapterSet adapters = src.adapters;
    reset_adapters(adapters);
    OptimizerState opt;
    DiagnosisState diag;

    RunReport report;
    report.protocol = to_string(cfg.stream.protocol);
    report.ablation = to_string(cfg.ablation);
    report.seed = cfg.seed;
    report.config_hash = config_hash(cfg);
    report.config_echo = serialize_config(cfg);
    report.source_clean_accuracy = src.clean_accuracy;

    const std::size_t seg_count = cfg.stream.segments.size();
    std::vector<std::size_t> seg_hits(seg_count, 0), seg_total(seg_count, 0);
    std::vector<double> seg_correct(seg_count, 0.0), seg_samples(seg_count, 0.0);
    std::size_t tp = 0, fp = 0, fn = 0;

    const auto t0 = std::chrono::steady_clock::now();
    for (const StreamBatch& sb : stream.batches) {
        if (cfg.stream.protocol == Protocol::Episodic && sb.reset_marker) {
            episodic_reset(adapters, opt);
            diag.reset();
        }
        StepOutcome out = adapt_step(model, src.params, adapters, opt, sb.data, cfg.adapt,
                                     cfg.ablation, &diag);
        const double acc = accuracy(out.predictions, sb.labels);
        out.accuracy = acc;

        seg_correct[sb.segment] += acc * static_cast<double>(sb.labels.size());
        seg_samples[sb.segment] += static_cast<double>(sb.labels.size());
        seg_total[sb.segment] += 1;

        std::set<std::size_t> truth;
        if (sb.truth) truth.insert(*sb.truth);
        if (out.biased_set == truth) seg_hits[sb.segment] += 1;
        for (std::size_t m : out.biased_set) {
            if (truth.count(m)) ++tp;
            else ++fp;
        }
        for (std::size_t m : truth) {
            if (!out.biased_set.count(m)) ++fn;
        }
        ++report.steps;
    }
    const auto t1 = std::chrono::steady_clock::now();
    report.mean_step_ms = report.steps == 0
                              ? 0.0
                              : std::chrono::duration<double, std::milli>(t1 - t0).count() /
                                    static_cast<double>(report.steps);

    for (std::size_t s = 0; s < seg_count; ++s) {
        const Segment& seg = cfg.stream.segments[s];
        SegmentReport sr;
        sr.index = s;
        sr.kind = seg.shift.kind;
        sr.severity = seg.shift.kind == ShiftKind::None ? 0 : seg.shift.severity;
        sr.target = seg.shift.kind == ShiftKind::None ? ""
                                                      : model.modalities[seg.shift.target];
        sr.accuracy = seg_samples[s] > 0 ? seg_correct[s] / seg_samples[s] : 0.0;
        sr.diagnosis_hit_rate =
            seg_total[s] > 0 ? static_cast<double>(seg_hits[s]) / seg_total[s] : 0.0;
        report.segments.push_back(sr);
        report.mean_accuracy += sr.accuracy;
    }
    report.mean_accuracy /= static_cast<double>(seg_count);
    report.diagnosis_precision = (tp + fp) == 0 ? 1.0 : static_cast<double>(tp) / (tp + fp);
    report.diagnosis_recall = (tp + fn) == 0 ? 1.0 : static_cast<double>(tp) / (tp + fn);

    // Forgetting on the clean source split, deployable path: plastic modules
    // deactivated, current stable adapters in place.
    if (cfg.stream.protocol != Protocol::Episodic) {
        for (AdapterPair& a : adapters) a.plastic_active = false;
        report.adapted_clean_accuracy =
            clean_joint_accuracy(model, src.params, adapters, src.dataset);
        report.forgetting_joint =
            100.0 * (report.source_clean_accuracy - report.adapted_clean_accuracy);
        for (std::size_t m = 0; m < model.modality_count(); ++m) {
            const double before =
                clean_unimodal_accuracy(model, src.params, src.adapters, src.dataset, m, false);
            const double after =
                clean_unimodal_accuracy(model, src.params, adapters, src.dataset, m, true);
            report.forgetting_unimodal[model.modalities[m]] = 100.0 * (before - after);
        }
    } else {
        report.adapted_clean_accuracy = report.source_clean_accuracy;
    }
    return report;
}

inline RunReport run_experiment(ExperimentConfig cfg) {
    materialize_directions(cfg);
    cfg.validate();
    const PreparedSource src = prepare_source(cfg);
    const Stream stream = build_stream(cfg.stream, src.dataset, cfg.adapt.batch_size);
    return run_stream(cfg, src, stream);
}

// All ablation modes on identical streams, sources and seeds.
inline std::vector<RunReport> ablation_matrix(const ExperimentConfig& base,
                                              const std::vector<AblationMode>& modes) {
    ExperimentConfig cfg = base;
    materialize_directions(cfg);
    cfg.validate();
    const PreparedSource src = prepare_source(cfg);
    const Stream stream = build_stream(cfg.stream, src.dataset, cfg.adapt.batch_size);
    std::vector<RunReport> reports;
    for (AblationMode mode : modes) {
        cfg.ablation = mode;
        reports.push_back(run_stream(cfg, src, stream));
    }
    return reports;
}

// ---------------------------------------------------------------------------
// Diagnosis-only evaluation (no adaptation).
// ---------------------------------------------------------------------------

struct DiagnosisReport {
    double precision = 1.0;
    double recall = 1.0;
    std::map<int, double> recall_by_severity;  // corrupted batches only
    std::size_t batches = 0;
    std::size_t false_positives = 0;
};

inline DiagnosisReport diagnosis_eval(const ModelConfig& model, const ModelParams& params,
                                      const Stream& stream, const AdaptConfig& acfg) {
    DiagnosisReport rep;
    std::size_t tp = 0, fp = 0, fn = 0;
    std::map<int, std::size_t> sev_hits, sev_total;
    for (const StreamBatch& sb : stream.batches) {
        std::vector<Tensor> projected;
        for (std::size_t m = 0; m < model.modality_count(); ++m) {
            const Tensor z = encode_batch(model, params, m, sb.data[m]);
            projected.push_back(project(params, z));
        }
        const RedundancyReport rr =
            build_redundancy_report(projected, acfg.delta, acfg.variance_eps);
        std::set<std::size_t> truth;
        if (sb.truth) truth.insert(*sb.truth);
        for (std::size_t m : rr.biased) {
            if (truth.count(m)) ++tp;
            else ++fp;
        }
        for (std::size_t m : truth) {
            if (!rr.biased.count(m)) ++fn;
        }
        if (sb.truth) {
            sev_total[sb.severity] += 1;
            sev_hits[sb.severity] += rr.biased.count(*sb.truth);
        }
        ++rep.batches;
    }
    rep.precision = (tp + fp) == 0 ? 1.0 : static_cast<double>(tp) / (tp + fp);
    rep.recall = (tp + fn) == 0 ? 1.0 : static_cast<double>(tp) / (tp + fn);
    rep.false_positives = fp;
    for (const auto& [sev, total] : sev_total) {
        rep.recall_by_severity[sev] = static_cast<double>(sev_hits[sev]) / total;
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Report files.
// ---------------------------------------------------------------------------

inline ordered_json report_to_json(const RunReport& r) {
    ordered_json j;
    j["protocol"] = r.protocol;
    j["ablation"] = r.ablation;
    j["seed"] = r.seed;
    j["config_hash"] = r.config_hash;
    j["mean_accuracy"] = r.mean_accuracy;
    j["diagnosis_precision"] = r.diagnosis_precision;
    j["diagnosis_recall"] = r.diagnosis_recall;
    j["source_clean_accuracy"] = r.source_clean_accuracy;
    j["adapted_clean_accuracy"] = r.adapted_clean_accuracy;
    if (r.forgetting_joint) {
        j["forgetting_joint"] = *r.forgetting_joint;
        j["forgetting_unimodal"] = r.forgetting_unimodal;
    }
    j["steps"] = r.steps;
    j["segments"] = ordered_json::array();
    for (const SegmentReport& s : r.segments) {
        ordered_json js;
        js["index"] = s.index;
        js["kind"] = to_string(s.kind);
        js["severity"] = s.severity;
        js["target"] = s.target;
        js["accuracy"] = s.accuracy;
        js["diagnosis_hit_rate"] = s.diagnosis_hit_rate;
        j["segments"].push_back(js);
    }
    j["config_echo"] = r.config_echo;
    return j;
}

inline RunReport report_from_json(const ordered_json& j) {
    RunReport r;
    r.protocol = j.at("protocol").get<std::string>();
    r.ablation = j.at("ablation").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.mean_accuracy = j.at("mean_accuracy").get<double>();
    r.diagnosis_precision = j.at("diagnosis_precision").get<double>();
    r.diagnosis_recall = j.at("diagnosis_recall").get<double>();
    r.source_clean_accuracy = j.at("source_clean_accuracy").get<double>();
    r.adapted_clean_accuracy = j.at("adapted_clean_accuracy").get<double>();
    if (j.contains("forgetting_joint")) {
        r.forgetting_joint = j.at("forgetting_joint").get<double>();
        r.forgetting_unimodal =
            j.at("forgetting_unimodal").get<std::map<std::string, double>>();
    }
    r.steps = j.at("steps").get<std::size_t>();
    for (const auto& js : j.at("segments")) {
        SegmentReport s;
        s.index = js.at("index").get<std::size_t>();
        s.kind = shift_kind_from_string(js.at("kind").get<std::string>());
        s.severity = js.at("severity").get<int>();
        s.target = js.at("target").get<std::string>();
        s.accuracy = js.at("accuracy").get<double>();
        s.diagnosis_hit_rate = js.at("diagnosis_hit_rate").get<double>();
        r.segments.push_back(s);
    }
    r.config_echo = j.at("config_echo").get<std::string>();
    return r;
}

inline std::string render_summary(const RunReport& r) {
    std::ostringstream os;
    os << "protocol: " << r.protocol << "   ablation: " << r.ablation << "   seed: " << r.seed
       << "   config: " << r.config_hash << "\n";
    os << std::fixed << std::setprecision(2);
    os << "source clean accuracy: " << 100.0 * r.source_clean_accuracy << "%\n";
    os << "mean stream accuracy:  " << 100.0 * r.mean_accuracy << "%\n";
    os << "diagnosis precision/recall: " << 100.0 * r.diagnosis_precision << "% / "
       << 100.0 * r.diagnosis_recall << "%\n";
    if (r.forgetting_joint) {
        os << "clean-source forgetting (joint): " << *r.forgetting_joint << " points\n";
        for (const auto& [name, pts] : r.forgetting_unimodal) {
            os << "  forgetting " << name << ": " << pts << " points\n";
        }
    }
    os << "steps: " << r.steps << "   mean step time: " << std::setprecision(3)
       << r.mean_step_ms << " ms\n\n";
    os << std::left << std::setw(4) << "#" << std::setw(16) << "kind" << std::setw(10)
       << "severity" << std::setw(10) << "target" << std::setw(12) << "accuracy"
       << std::setw(12) << "diag-hit" << "\n";
    os << std::string(64, '-') << "\n";
    os << std::setprecision(2);
    for (const SegmentReport& s : r.segments) {
        os << std::left << std::setw(4) << s.index << std::setw(16) << to_string(s.kind)
           << std::setw(10) << s.severity << std::setw(10)
           << (s.target.empty() ? "-" : s.target) << std::setw(12)
           << 100.0 * s.accuracy << std::setw(12) << 100.0 * s.diagnosis_hit_rate << "\n";
    }
    return os.str();
}

inline std::string render_csv(const RunReport& r) {
    std::ostringstream os;
    os << "index,protocol,kind,severity,target,accuracy,diagnosis_hit_rate\n";
    for (const SegmentReport& s : r.segments) {
        os << s.index << ',' << r.protocol << ',' << to_string(s.kind) << ',' << s.severity
           << ',' << s.target << ',' << detail::fmt_double(s.accuracy) << ','
           << detail::fmt_double(s.diagnosis_hit_rate) << "\n";
    }
    return os.str();
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
    f.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!f) throw std::runtime_error("failed writing: " + path.string());
}

// Emits report.json (deterministic), segments.csv, summary.txt (with timing).
inline void write_report(const RunReport& r, const std::string& dir) {
    std::filesystem::create_directories(dir);
    const std::filesystem::path base(dir);
    write_text_file(base / "report.json", report_to_json(r).dump(2) + "\n");
    write_text_file(base / "segments.csv", render_csv(r));
    write_text_file(base / "summary.txt", render_summary(r));
}

// ---------------------------------------------------------------------------
// Stream manifests: enough to rebuild a stream bit for bit.
// ---------------------------------------------------------------------------

inline ordered_json manifest_to_json(const ExperimentConfig& cfg) {
    ordered_json j;
    j["format"] = "dasp-stream-manifest";
    j["version"] = 1;
    j["config"] = serialize_config(cfg);
    j["directions"] = ordered_json::array();
    for (const Segment& s : cfg.stream.segments) {
        if (s.shift.kind == ShiftKind::Rank1Latent) {
            j["directions"].push_back(std::vector<double>(s.shift.direction.flat()));
        } else {
            j["directions"].push_back(nullptr);
        }
    }
    return j;
}

inline void write_stream_manifest(const ExperimentConfig& cfg, const std::string& path) {
    write_text_file(path, manifest_to_json(cfg).dump(2) + "\n");
}

inline ExperimentConfig load_stream_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open manifest: " + path);
    ordered_json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        throw ConfigError("manifest parse error in " + path + ": " + e.what());
    }
    if (!j.contains("format") || j["format"] != "dasp-stream-manifest") {
        throw ConfigError("not a stream manifest: " + path);
    }
    ExperimentConfig cfg = parse_config_text(j.at("config").get<std::string>(), path);
    const auto& dirs = j.at("directions");
    if (dirs.size() != cfg.stream.segments.size()) {
        throw ConfigError("manifest direction count does not match segments in " + path);
    }
    for (std::size_t i = 0; i < cfg.stream.segments.size(); ++i) {
        if (!dirs[i].is_null()) {
            std::vector<double> v = dirs[i].get<std::vector<double>>();
            const std::size_t dim = v.size();
            cfg.stream.segments[i].shift.direction = Tensor({dim}, std::move(v));
        }
    }
    return cfg;
}

}  // namespace dasp
