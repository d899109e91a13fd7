// Acceptance suite: one line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dasp/harness.hpp"

using namespace dasp;

namespace {

int failures = 0;

class Criterion {
public:
    explicit Criterion(int id, std::string title) : id_(id), title_(std::move(title)) {
        start_ = std::chrono::steady_clock::now();
    }

    void require(bool ok, const std::string& what) {
        if (!ok) issues_.push_back(what);
    }

    double elapsed_s() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

    void finish(const std::string& detail = "") {
        const bool ok = issues_.empty();
        if (!ok) ++failures;
        std::printf("[%s] criterion %2d: %s%s%s (%.1fs)\n", ok ? "PASS" : "FAIL", id_,
                    title_.c_str(), detail.empty() ? "" : " - ", detail.c_str(), elapsed_s());
        for (const std::string& issue : issues_) {
            std::printf("       ! %s\n", issue.c_str());
        }
    }

private:
    int id_;
    std::string title_;
    std::vector<std::string> issues_;
    std::chrono::steady_clock::time_point start_;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), f, a, b, c);
    return buf;
}

Segment make_segment(ShiftKind k, std::size_t target, int sev, std::size_t batches) {
    Segment s;
    s.shift.kind = k;
    s.shift.target = target;
    s.shift.severity = sev;
    s.batches = batches;
    return s;
}

ExperimentConfig experiment(Protocol proto, std::vector<Segment> segs, std::uint64_t seed) {
    ExperimentConfig cfg;
    cfg.stream.protocol = proto;
    cfg.stream.segments = std::move(segs);
    cfg.seed = seed;
    cfg.task.seed = seed ^ 0x7461;
    cfg.stream.seed = seed ^ 0x5752;
    materialize_directions(cfg);
    return cfg;
}

// The interleaved benchmark used for the stability and ablation criteria:
// severity-5 input-noise corruption alternating between modalities, with a
// clean tail after each corrupted block.
ExperimentConfig interleaved_benchmark(std::uint64_t seed) {
    std::vector<Segment> segs;
    for (int cycle = 0; cycle < 4; ++cycle) {
        segs.push_back(make_segment(ShiftKind::InputGaussian, cycle % 2, 5, 300));
        segs.push_back(make_segment(ShiftKind::None, 0, 0, 150));
    }
    return experiment(Protocol::Interleaved, std::move(segs), seed);
}

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

// Reference margin of the plasticity-gain run, pinned from the seeded build
// and asserted thereafter.
constexpr double kPinnedPlasticityMargin = 9.56;  // accuracy points
constexpr double kPinnedMarginSlack = 2.0;

void criterion_1() {
    Criterion c(1, "redundancy rises under a rank-1 latent shift");
    const std::size_t b = 10000, d = 16;
    Rng rng(2024);
    const Tensor z = Tensor::gaussian({b, d}, rng);
    const double r_clean = redundancy_score(z);
    c.require(r_clean < 0.01, fmt("clean redundancy %.5f not < 0.01", r_clean));

    // Dense unit direction: every entry one, sigma_alpha = 1.
    Tensor v({d});
    for (std::size_t j = 0; j < d; ++j) v[j] = 1.0;
    Rng alpha(99);
    Tensor shifted = z;
    for (std::size_t i = 0; i < b; ++i) {
        const double a = alpha.gaussian();
        for (std::size_t j = 0; j < d; ++j) shifted.at(i, j) += a * v[j];
    }
    const double r_shifted = redundancy_score(shifted);
    c.require(r_shifted > 0.05, fmt("shifted redundancy %.5f not > 0.05", r_shifted));
    c.require(r_shifted > r_clean, "shifted redundancy did not increase");

    const Tensor analytic = analytic_shift_correlation(v, 1.0);
    const Tensor empirical = correlation_matrix(shifted);
    double worst = 0.0;
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
            if (i != j) worst = std::max(worst, std::abs(empirical.at(i, j) - analytic.at(i, j)));
    c.require(worst < 0.05, fmt("off-diagonal deviation %.4f not < 0.05", worst));
    c.require(c.elapsed_s() < 5.0, fmt("runtime %.1fs exceeds 5s", c.elapsed_s()));
    c.finish(fmt("R(Z)=%.5f R(shifted)=%.4f max dev %.4f", r_clean, r_shifted, worst));
}

void criterion_2() {
    Criterion c(2, "analytic spot value for the shifted redundancy");
    Tensor v({3}, {1.0, 1.0, 1.0});
    const double r = redundancy_of_shifted(v, 1.0);
    c.require(std::abs(r - 0.25) <= 1e-12, fmt("got %.17g, want 0.25 to 1e-12", r));
    c.finish(fmt("redundancy_of_shifted = %.17g", r));
}

void criterion_3() {
    Criterion c(3, "objective gradients match finite differences");
    ModelConfig model;
    model.modalities = {"audio", "video"};
    model.input_dims = {6, 6};
    model.hidden = 8;
    model.feature_dim = 8;
    model.num_classes = 4;
    model.stable_rank = 2;
    AdaptConfig acfg;

    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        const ModelParams params = init_model(model, rng);
        AdapterSet adapters = init_adapters(model, rng);
        adapters[0].plastic = Tensor::gaussian({8, 8}, rng, 0.1);
        adapters[1].stable_up = Tensor::gaussian({2, 8}, rng, 0.1);

        std::vector<Tensor> z;
        for (std::size_t m = 0; m < 2; ++m) {
            Tensor x = Tensor::gaussian({8, 6}, rng);
            z.push_back(encode(model, params, m, x));
        }
        // Rank-1 shift on the first modality so the selection is generic.
        const Tensor dir = make_shift_direction(8, rng);
        for (std::size_t i = 0; i < 8; ++i) {
            const double a = rng.gaussian(0.0, 2.0);
            for (std::size_t j = 0; j < 8; ++j) z[0].at(i, j) += a * dir[j];
        }

        const Selection sel = select_trainable(model, adapters, {0});
        AdaptGraph g = build_adapt_graph(model, params, adapters, sel, z, acfg,
                                         AblationMode::Full);
        const GradientMap grads = g.tape.backward(g.total);

        const auto loss_value = [&] {
            AdaptGraph h =
                build_adapt_graph(model, params, adapters, sel, z, acfg, AblationMode::Full);
            return h.tape.scalar_value(h.total);
        };
        const auto check = [&](const std::string& name, Tensor& param) {
            const Tensor& an = grads.at(name);
            for (std::size_t i = 0; i < param.size(); ++i) {
                const double saved = param[i];
                param[i] = saved + 1e-5;
                const double hi = loss_value();
                param[i] = saved - 1e-5;
                const double lo = loss_value();
                param[i] = saved;
                worst = std::max(worst, rel_err(an[i], (hi - lo) / 2e-5));
            }
        };
        check("adapter.audio.plastic.w", adapters[0].plastic);
        check("adapter.video.stable.down", adapters[1].stable_down);
        check("adapter.video.stable.up", adapters[1].stable_up);
    }
    c.require(worst <= 1e-4, fmt("max relative error %.3e exceeds 1e-4", worst));
    c.require(c.elapsed_s() < 30.0, fmt("runtime %.1fs exceeds 30s", c.elapsed_s()));
    c.finish(fmt("max relative error %.3e over 20 seeds", worst));
}

void criterion_4() {
    Criterion c(4, "loss anchors");
    const Tensor uniform = Tensor::full({16, 10}, 0.1);
    const double ent = entropy_loss(uniform);
    c.require(std::abs(ent - std::log(10.0)) <= 1e-9,
              fmt("entropy(uniform) = %.12f, want ln 10", ent));

    // Uniform marginal from cycling one-hot rows.
    Tensor onehots({10, 10});
    for (std::size_t i = 0; i < 10; ++i) onehots.at(i, i) = 1.0;
    const double div = diversity_loss(onehots);
    c.require(std::abs(div + std::log(10.0)) <= 1e-9,
              fmt("diversity(uniform marginal) = %.12f, want -ln 10", div));

    Rng rng(4);
    const Tensor p = softmax_rows(Tensor::gaussian({8, 10}, rng, 2.0));
    const double kl = kl_loss(p, p);
    c.require(std::abs(kl) <= 1e-12, fmt("KL(p||p) = %.3e, want 0", kl));
    c.finish(fmt("ent %.9f div %.9f kl %.1e", ent, div, kl));
}

void criterion_5() {
    Criterion c(5, "asymmetry freeze invariant over an oscillating run");
    std::vector<Segment> segs;
    for (int i = 0; i < 10; ++i) segs.push_back(make_segment(ShiftKind::Rank1Latent, i % 2, 5, 20));
    ExperimentConfig cfg = experiment(Protocol::Interleaved, std::move(segs), 55);
    const PreparedSource src = prepare_source(cfg);
    const Stream stream = build_stream(cfg.stream, src.dataset, cfg.adapt.batch_size);

    AdapterSet adapters = src.adapters;
    OptimizerState opt;
    DiagnosisState diag;
    std::size_t violations = 0;
    std::set<std::set<std::size_t>> seen_sets;
    std::size_t steps = 0;
    for (const StreamBatch& sb : stream.batches) {
        std::vector<std::pair<Tensor, Tensor>> stable_before;  // down, up
        std::vector<Tensor> plastic_before;
        for (const AdapterPair& a : adapters) {
            stable_before.emplace_back(a.stable_down, a.stable_up);
            plastic_before.push_back(a.plastic);
        }
        const StepOutcome out = adapt_step(cfg.model, src.params, adapters, opt, sb.data,
                                           cfg.adapt, AblationMode::Full, &diag);
        seen_sets.insert(out.biased_set);
        for (std::size_t m = 0; m < adapters.size(); ++m) {
            const bool biased = out.biased_set.count(m) > 0;
            if (biased) {
                if (!adapters[m].stable_down.bit_equal(stable_before[m].first) ||
                    !adapters[m].stable_up.bit_equal(stable_before[m].second)) {
                    ++violations;
                }
            } else {
                if (!adapters[m].plastic.bit_equal(plastic_before[m])) ++violations;
            }
        }
        if (++steps == 200) break;
    }
    c.require(steps == 200, fmt("ran %.0f steps, expected 200", double(steps)));
    c.require(violations == 0, fmt("%.0f frozen-parameter violations", double(violations)));
    c.require(seen_sets.count({0}) && seen_sets.count({1}),
              "biased set did not oscillate between modalities");
    c.require(c.elapsed_s() < 60.0, fmt("runtime %.1fs exceeds 60s", c.elapsed_s()));
    c.finish(fmt("%.0f steps, %.0f violations, %.0f distinct biased sets", double(steps),
                 double(violations), double(seen_sets.size())));
}

void criterion_6() {
    Criterion c(6, "diagnosis quality on rank-1 streams");
    // Severity-5 streams, one per target modality; B = 64.
    double worst_recall = 1.0, worst_precision = 1.0;
    for (std::size_t target = 0; target < 2; ++target) {
        ExperimentConfig cfg = experiment(
            Protocol::Continual, {make_segment(ShiftKind::Rank1Latent, target, 5, 30)}, 11);
        const PreparedSource src = prepare_source(cfg);
        const Stream stream = build_stream(cfg.stream, src.dataset, 64);
        const DiagnosisReport rep =
            diagnosis_eval(cfg.model, src.params, stream, cfg.adapt);
        worst_recall = std::min(worst_recall, rep.recall);
        worst_precision = std::min(worst_precision, rep.precision);
    }
    c.require(worst_recall >= 0.95, fmt("severity-5 recall %.3f below 0.95", worst_recall));
    c.require(worst_precision >= 0.90, fmt("severity-5 precision %.3f below 0.90", worst_precision));

    // Recall sweep across severities on one fixed source model.
    ExperimentConfig base = experiment(
        Protocol::Continual, {make_segment(ShiftKind::Rank1Latent, 0, 5, 30)}, 11);
    const PreparedSource src = prepare_source(base);
    std::vector<double> recalls;
    for (int sev = 1; sev <= 5; ++sev) {
        ExperimentConfig cfg = base;
        cfg.stream.segments = {make_segment(ShiftKind::Rank1Latent, 0, sev, 30)};
        materialize_directions(cfg);
        const Stream stream = build_stream(cfg.stream, src.dataset, 64);
        recalls.push_back(
            diagnosis_eval(cfg.model, src.params, stream, cfg.adapt).recall);
    }
    int inversions = 0;
    for (std::size_t i = 1; i < recalls.size(); ++i) inversions += recalls[i] < recalls[i - 1];
    c.require(inversions <= 1, fmt("%.0f recall inversions across severities", double(inversions)));
    c.finish(fmt("recall>=%.3f precision>=%.3f, sweep %.2f..", worst_recall, worst_precision,
                 recalls.back()));
}

void criterion_7() {
    Criterion c(7, "plasticity gain on a severity-5 stream");
    ExperimentConfig cfg = experiment(
        Protocol::Continual, {make_segment(ShiftKind::Rank1Latent, 0, 5, 400)}, 21);
    const PreparedSource src = prepare_source(cfg);
    const Stream stream = build_stream(cfg.stream, src.dataset, cfg.adapt.batch_size);
    cfg.ablation = AblationMode::Full;
    const RunReport full = run_stream(cfg, src, stream);
    cfg.ablation = AblationMode::SourceOnly;
    const RunReport source = run_stream(cfg, src, stream);
    const double margin = 100.0 * (full.mean_accuracy - source.mean_accuracy);
    c.require(margin >= 5.0, fmt("margin %.2f points below 5.0", margin));
    c.require(std::abs(margin - kPinnedPlasticityMargin) <= kPinnedMarginSlack,
              fmt("margin %.2f drifted from pinned %.2f", margin, kPinnedPlasticityMargin));
    c.require(c.elapsed_s() < 180.0, fmt("runtime %.1fs exceeds 180s", c.elapsed_s()));
    c.finish(fmt("full %.4f vs source %.4f: +%.2f points", full.mean_accuracy,
                 source.mean_accuracy, margin));
}

void criteria_8_and_9() {
    // One ablation matrix over three seeds serves both the stability bound
    // and the ordering check; criterion 8 reads the seed-1 reports.
    const std::vector<AblationMode> modes = {
        AblationMode::Full, AblationMode::NoStable, AblationMode::NoPlastic,
        AblationMode::SymmetricAll, AblationMode::AsymmetricOpposite};
    std::map<std::string, double> mean_acc;
    double full_fgt_seed1 = 0.0, sym_fgt_seed1 = 0.0;
    bool have_fgt = false;

    Criterion c9(9, "ablation ordering over three seeds");
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        const ExperimentConfig cfg = interleaved_benchmark(seed);
        const auto reports = ablation_matrix(cfg, modes);
        for (const RunReport& r : reports) {
            mean_acc[r.ablation] += 100.0 * r.mean_accuracy / 3.0;
            if (seed == 1 && r.ablation == "full" && r.forgetting_joint) {
                full_fgt_seed1 = *r.forgetting_joint;
                have_fgt = true;
            }
            if (seed == 1 && r.ablation == "symmetric_all" && r.forgetting_joint) {
                sym_fgt_seed1 = *r.forgetting_joint;
            }
        }
    }

    Criterion c8(8, "stability bound on the interleaved run");
    c8.require(have_fgt, "forgetting not reported");
    c8.require(full_fgt_seed1 <= 1.0,
               fmt("full forgetting %.2f points exceeds 1.0", full_fgt_seed1));
    c8.require(sym_fgt_seed1 > full_fgt_seed1,
               fmt("symmetric_all %.2f not strictly above full %.2f", sym_fgt_seed1,
                   full_fgt_seed1));
    c8.finish(fmt("forgetting: full %+.2f, symmetric_all %+.2f points", full_fgt_seed1,
                  sym_fgt_seed1));

    const char* order[5] = {"full", "no_stable", "no_plastic", "symmetric_all",
                            "asymmetric_opposite"};
    for (int i = 0; i + 1 < 5; ++i) {
        const double left = mean_acc[order[i]], right = mean_acc[order[i + 1]];
        c9.require(left >= right - 0.5,
                   fmt((std::string(order[i]) + " %.2f below " + order[i + 1] + " %.2f - 0.5")
                           .c_str(),
                       left, right));
    }
    c9.finish(fmt("full %.2f ns %.2f np %.2f", mean_acc["full"], mean_acc["no_stable"],
                  mean_acc["no_plastic"]) +
              fmt(" sym %.2f opp %.2f", mean_acc["symmetric_all"],
                  mean_acc["asymmetric_opposite"]));
}

void criterion_10() {
    Criterion c(10, "byte-identical reports under identical config and seed");
    ExperimentConfig cfg;
    cfg.task.num_classes = 4;
    cfg.task.input_dims = {8, 8};
    cfg.task.latent_dim = 3;
    cfg.task.train_count = 500;
    cfg.task.test_count = 300;
    cfg.task.seed = 9 ^ 0x7461;
    cfg.model.modalities = {"audio", "video"};
    cfg.model.input_dims = {8, 8};
    cfg.model.hidden = 16;
    cfg.model.feature_dim = 16;
    cfg.model.num_classes = 4;
    cfg.model.stable_rank = 2;
    cfg.adapt.batch_size = 32;
    cfg.stream.protocol = Protocol::Continual;
    cfg.stream.segments = {make_segment(ShiftKind::Rank1Latent, 0, 5, 6),
                           make_segment(ShiftKind::InputGaussian, 1, 4, 6)};
    cfg.stream.seed = 9 ^ 0x5752;
    cfg.seed = 9;
    cfg.pretrain_epochs = 4;
    cfg.head_epochs = 6;

    const auto dir_a = std::filesystem::temp_directory_path() / "dasp_acc_a";
    const auto dir_b = std::filesystem::temp_directory_path() / "dasp_acc_b";
    write_report(run_experiment(cfg), dir_a.string());
    write_report(run_experiment(cfg), dir_b.string());

    const auto slurp = [](const std::filesystem::path& p) {
        std::ifstream f(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(f)),
                           std::istreambuf_iterator<char>());
    };
    const std::string a = slurp(dir_a / "report.json");
    const std::string b = slurp(dir_b / "report.json");
    c.require(!a.empty(), "report.json missing or empty");
    c.require(a == b, "report.json differs between identical runs");
    std::filesystem::remove_all(dir_a);
    std::filesystem::remove_all(dir_b);
    c.finish(fmt("%.0f bytes, identical", double(a.size())));
}

}  // namespace

int main() {
    const auto t0 = std::chrono::steady_clock::now();
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();
    criterion_6();
    criterion_7();
    criteria_8_and_9();
    criterion_10();
    const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("----\n%s: %d criterion failures, %.1fs total\n",
                failures == 0 ? "ACCEPTANCE PASSED" : "ACCEPTANCE FAILED", failures, total);
    if (total >= 600.0) {
        std::printf("FAIL: suite exceeded the 10 minute budget\n");
        return failures + 1;
    }
    return failures;
}
