// Command-line front end: pretrain, adapt, diagnose, ablate, replay.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "dasp/harness.hpp"

using namespace dasp;

namespace {

struct CliOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> protocol;
    std::optional<std::string> ablation;
    std::optional<std::string> out_dir;
    std::optional<int> severity;
    std::optional<std::string> shift;
    std::string checkpoint;
    std::string manifest;
};

// Default schedules, used when the config does not spell out segments.
std::vector<Segment> default_segments(const ExperimentConfig& cfg, ShiftKind kind,
                                      int severity) {
    std::vector<Segment> segments;
    auto corrupt = [&](std::size_t target, std::size_t batches) {
        Segment s;
        s.shift.kind = kind;
        s.shift.target = target;
        s.shift.severity = severity;
        s.batches = batches;
        return s;
    };
    auto clean = [&](std::size_t batches) {
        Segment s;
        s.shift.kind = ShiftKind::None;
        s.batches = batches;
        return s;
    };
    const std::size_t modalities = cfg.model.modality_count();
    switch (cfg.stream.protocol) {
        case Protocol::Episodic:
            for (std::size_t m = 0; m < modalities; ++m) segments.push_back(corrupt(m, 50));
            break;
        case Protocol::Continual:
            for (std::size_t m = 0; m < modalities; ++m) segments.push_back(corrupt(m, 100));
            break;
        case Protocol::Interleaved:
            for (int cycle = 0; cycle < 4; ++cycle) {
                segments.push_back(corrupt(cycle % modalities, 100));
                segments.push_back(clean(50));
            }
            break;
    }
    return segments;
}

ExperimentConfig resolve_config(const CliOptions& opt) {
    ExperimentConfig cfg =
        opt.config_path.empty() ? ExperimentConfig{} : load_config(opt.config_path);
    if (opt.seed) {
        cfg.seed = *opt.seed;
        cfg.task.seed = *opt.seed ^ 0x7461736bULL;
        cfg.stream.seed = *opt.seed ^ 0x73747265ULL;
    }
    if (opt.protocol) cfg.stream.protocol = protocol_from_string(*opt.protocol);
    if (opt.ablation) cfg.ablation = ablation_from_string(*opt.ablation);
    if (opt.out_dir) cfg.out_dir = *opt.out_dir;
    if (!opt.checkpoint.empty()) cfg.checkpoint = opt.checkpoint;
    if (cfg.stream.segments.empty()) {
        const ShiftKind kind =
            opt.shift ? shift_kind_from_string(*opt.shift) : ShiftKind::Rank1Latent;
        cfg.stream.segments = default_segments(cfg, kind, opt.severity.value_or(5));
        for (Segment& s : cfg.stream.segments) s.shift.input_ref = cfg.input_ref;
    }
    materialize_directions(cfg);
    cfg.validate();
    return cfg;
}

int cmd_pretrain(const CliOptions& opt) {
    ExperimentConfig cfg = resolve_config(opt);
    cfg.checkpoint.clear();  // always train from scratch here
    const PreparedSource src = prepare_source(cfg);
    std::filesystem::create_directories(cfg.out_dir);
    const std::string path = (std::filesystem::path(cfg.out_dir) / "model.ckpt").string();
    save_checkpoint(path, cfg.model, src.params, src.adapters, cfg.seed);
    std::printf("pretrained source model: clean accuracy %.2f%% (seed %llu, config %s)\n",
                100.0 * src.clean_accuracy, static_cast<unsigned long long>(cfg.seed),
                config_hash(cfg).c_str());
    std::printf("checkpoint written to %s\n", path.c_str());
    return 0;
}

int run_and_write(const ExperimentConfig& cfg) {
    const RunReport report = run_experiment(cfg);
    write_report(report, cfg.out_dir);
    write_stream_manifest(cfg,
                          (std::filesystem::path(cfg.out_dir) / "stream_manifest.json").string());
    std::cout << render_summary(report);
    std::printf("reports written to %s\n", cfg.out_dir.c_str());
    return 0;
}

int cmd_adapt(const CliOptions& opt) { return run_and_write(resolve_config(opt)); }

int cmd_replay(const CliOptions& opt) {
    ExperimentConfig cfg = load_stream_manifest(opt.manifest);
    if (opt.ablation) cfg.ablation = ablation_from_string(*opt.ablation);
    if (opt.out_dir) cfg.out_dir = *opt.out_dir;
    cfg.validate();
    return run_and_write(cfg);
}

int cmd_diagnose(const CliOptions& opt) {
    const ExperimentConfig cfg = resolve_config(opt);
    const PreparedSource src = prepare_source(cfg);
    const Stream stream = build_stream(cfg.stream, src.dataset, cfg.adapt.batch_size);
    const DiagnosisReport rep =
        diagnosis_eval(cfg.model, src.params, stream, cfg.adapt);

    ordered_json j;
    j["config_hash"] = config_hash(cfg);
    j["seed"] = cfg.seed;
    j["batches"] = rep.batches;
    j["precision"] = rep.precision;
    j["recall"] = rep.recall;
    j["false_positives"] = rep.false_positives;
    j["recall_by_severity"] = ordered_json::object();
    for (const auto& [sev, r] : rep.recall_by_severity) {
        j["recall_by_severity"][std::to_string(sev)] = r;
    }
    std::filesystem::create_directories(cfg.out_dir);
    write_text_file(std::filesystem::path(cfg.out_dir) / "diagnosis.json", j.dump(2) + "\n");

    std::printf("diagnosis over %zu batches: precision %.3f recall %.3f\n", rep.batches,
                rep.precision, rep.recall);
    for (const auto& [sev, r] : rep.recall_by_severity) {
        std::printf("  severity %d recall %.3f\n", sev, r);
    }
    std::printf("written to %s/diagnosis.json\n", cfg.out_dir.c_str());
    return 0;
}

int cmd_ablate(const CliOptions& opt) {
    const ExperimentConfig cfg = resolve_config(opt);
    const std::vector<AblationMode> modes = {
        AblationMode::Full,          AblationMode::NoStable,
        AblationMode::NoPlastic,     AblationMode::SymmetricAll,
        AblationMode::AsymmetricOpposite, AblationMode::SourceOnly};
    const auto reports = ablation_matrix(cfg, modes);

    std::filesystem::create_directories(cfg.out_dir);
    std::ostringstream csv;
    csv << "ablation,mean_accuracy,forgetting_joint,diagnosis_precision,diagnosis_recall\n";
    std::printf("%-22s %10s %12s %10s %8s\n", "ablation", "accuracy", "forgetting",
                "precision", "recall");
    for (const RunReport& r : reports) {
        csv << r.ablation << ',' << detail::fmt_double(r.mean_accuracy) << ','
            << (r.forgetting_joint ? detail::fmt_double(*r.forgetting_joint) : "") << ','
            << detail::fmt_double(r.diagnosis_precision) << ','
            << detail::fmt_double(r.diagnosis_recall) << "\n";
        char fgt[32] = "-";
        if (r.forgetting_joint) std::snprintf(fgt, sizeof(fgt), "%+.2fpt", *r.forgetting_joint);
        std::printf("%-22s %9.2f%% %12s %10.2f %8.2f\n", r.ablation.c_str(),
                    100.0 * r.mean_accuracy, fgt, r.diagnosis_precision, r.diagnosis_recall);
        write_report(r, (std::filesystem::path(cfg.out_dir) / r.ablation).string());
    }
    write_text_file(std::filesystem::path(cfg.out_dir) / "ablation.csv", csv.str());
    std::printf("per-mode reports and ablation.csv written to %s\n", cfg.out_dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DASP: diagnose-then-mitigate multi-modal test-time adaptation, desk scale"};
    app.require_subcommand(1);

    CliOptions opt;
    app.add_option("--config", opt.config_path, "experiment config file (INI format)");
    app.add_option("--seed", opt.seed, "master seed (derives task and stream seeds)");
    app.add_option("--protocol", opt.protocol, "episodic | continual | interleaved");
    app.add_option("--ablation", opt.ablation,
                   "full | no_stable | no_plastic | symmetric_all | asymmetric_opposite | "
                   "source_only");
    app.add_option("--out", opt.out_dir, "output directory");
    app.add_option("--severity", opt.severity, "severity level 1..5 for default streams")
        ->check(CLI::Range(1, 5));
    app.add_option("--shift", opt.shift, "input-gaussian | rank1-latent (default streams)");
    app.add_option("--checkpoint", opt.checkpoint, "load this source checkpoint");

    auto* pre = app.add_subcommand("pretrain", "train and save the source model");
    auto* adapt = app.add_subcommand("adapt", "run the adaptation experiment, write reports");
    auto* diag = app.add_subcommand("diagnose", "diagnosis-only evaluation over the stream");
    auto* abl = app.add_subcommand("ablate", "run every ablation mode on the same stream");
    auto* replay = app.add_subcommand("replay", "re-run an experiment from a stream manifest");
    replay->add_option("--manifest", opt.manifest, "stream manifest JSON")->required();
    for (CLI::App* sub : {pre, adapt, diag, abl, replay}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // bad flags are config errors
    }

    try {
        if (pre->parsed()) return cmd_pretrain(opt);
        if (adapt->parsed()) return cmd_adapt(opt);
        if (diag->parsed()) return cmd_diagnose(opt);
        if (abl->parsed()) return cmd_ablate(opt);
        if (replay->parsed()) return cmd_replay(opt);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const SpecError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
