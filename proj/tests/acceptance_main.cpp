// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// criterion fails. Criteria 4-6 share trained checkpoints per seed, so the
// expensive runs happen once.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gdpo/driver.hpp"
#include "gdpo/errors.hpp"
#include "gdpo/rng.hpp"

using namespace gdpo;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Criterion {
    int id;
    std::string label;
    bool pass;
    std::string detail;
};

std::vector<Criterion> g_results;

void record(int id, const std::string& label, bool pass, const std::string& detail) {
    g_results.push_back({id, label, pass, detail});
    std::printf("[%s] criterion %d: %s (%s)\n", pass ? "PASS" : "FAIL", id, label.c_str(),
                detail.c_str());
    std::fflush(stdout);
}

std::string fmt(double v, const char* format = "%.3g") {
    char buf[64];
    std::snprintf(buf, sizeof(buf), format, v);
    return buf;
}

// ---------------------------------------------------------------------------
// Shared experiment setup for criteria 4-6.

const std::vector<std::uint64_t> kSeeds{1, 2, 3, 4, 5};
const std::vector<double> kTemperatures{0.6, 0.8, 1.0};
const std::vector<Method> kAlignMethods{Method::dpo,  Method::ipo,  Method::cpo,
                                        Method::slic, Method::orpo, Method::gdpo};

constexpr int kNumPairs = 2000;
constexpr int kNumHeldout = 200;
constexpr int kNumPrompts = 32;
constexpr int kSftEpochs = 16;
constexpr int kAlignEpochs = 3;
constexpr double kSftLr = 3e-4;
constexpr double kAlignLr = 2e-4;

TaskSpec acceptance_task() {
    TaskSpec task;
    task.kind = TaskKind::modes;
    task.alphabet = "abcd";
    task.mode_strings = {"abc", "bca", "cab", "dab"};
    task.prompt_len = 4;
    task.max_response_len = 12;
    task.seed = 1;
    return task;
}

struct SeedRun {
    std::uint64_t seed;
    fs::path dir;
    // margins per method, win/eval per (method, temperature)
    std::map<std::string, std::pair<double, double>> heldout_margins;
    std::map<std::string, std::map<double, EvalReport>> reports;
};

fs::path artifact_root() {
    return fs::temp_directory_path() / "gdpo_acceptance";
}

RunConfig base_config(const fs::path& dir, const fs::path& task_path,
                      std::uint64_t seed) {
    RunConfig cfg;
    cfg.task_path = task_path;
    cfg.data_path = dir / "pairs.jsonl";
    cfg.heldout_path = dir / "heldout.jsonl";
    cfg.seed = seed;
    cfg.batch_size = 64;
    cfg.warmup_ratio = 0.1;
    return cfg;
}

// Trains SFT + all alignment methods for one seed and samples every method at
// every temperature against the shared prompt set.
SeedRun run_seed(const TaskSpec& task, const fs::path& task_path, std::uint64_t seed) {
    SeedRun run;
    run.seed = seed;
    run.dir = artifact_root() / ("seed" + std::to_string(seed));
    fs::create_directories(run.dir);

    save_pairs(run.dir / "pairs.jsonl", gen_pairs(task, kNumPairs, seed));
    save_pairs(run.dir / "heldout.jsonl",
               gen_pairs(task, kNumHeldout, stream_seed(seed, "heldout", 0)));
    const auto prompts = gen_prompts(task, kNumPrompts, stream_seed(seed, "eval-prompts", 0));
    save_prompts(run.dir / "prompts.txt", prompts);

    RunConfig sft_cfg = base_config(run.dir, task_path, seed);
    sft_cfg.method = Method::sft;
    sft_cfg.lr = kSftLr;
    sft_cfg.epochs = kSftEpochs;
    sft_cfg.out_path = run.dir / "sft.ckpt.json";
    sft_cfg.log_path = run.dir / "sft.log.csv";
    const TrainResult sft = run_train(sft_cfg);
    run.heldout_margins["sft"] = {sft.heldout_margin_start, sft.heldout_margin_end};

    for (Method method : kAlignMethods) {
        RunConfig cfg = base_config(run.dir, task_path, seed);
        cfg.method = method;
        cfg.lr = kAlignLr;
        cfg.epochs = kAlignEpochs;
        cfg.init_from = sft_cfg.out_path;
        const std::string name(to_string(method));
        cfg.out_path = run.dir / (name + ".ckpt.json");
        cfg.log_path = run.dir / (name + ".log.csv");
        const TrainResult result = run_train(cfg);
        run.heldout_margins[name] = {result.heldout_margin_start, result.heldout_margin_end};
    }

    // Sample + evaluate every trained method (SFT included) per temperature;
    // the reference set is the SFT policy at the same temperature.
    std::vector<std::string> methods{"sft"};
    for (Method m : kAlignMethods) methods.emplace_back(to_string(m));

    for (double temp : kTemperatures) {
        SamplingDefaults s{temp, 0.95, 3};
        const Checkpoint sft_ck = Checkpoint::load(run.dir / "sft.ckpt.json");
        const SampleSet ref = run_sample(sft_ck, prompts, s,
                                         stream_seed(seed, "accept-ref", static_cast<std::uint64_t>(temp * 100)));
        for (const auto& name : methods) {
            const Checkpoint ck = Checkpoint::load(run.dir / (name + ".ckpt.json"));
            const SampleSet samples = run_sample(
                ck, prompts, s, stream_seed(seed, "accept-" + name, static_cast<std::uint64_t>(temp * 100)));
            save_samples(run.dir / (name + "_t" + fmt(temp, "%.1f") + ".samples.jsonl"), samples);
            run.reports[name][temp] = evaluate_samples(samples, ref, task);
        }
    }
    return run;
}

// ---------------------------------------------------------------------------
// Criteria

void criterion_1_oracle() {
    const auto start = Clock::now();
    double max_residual = 0.0, max_tv = 0.0;
    bool ok = true;
    std::string note;
    try {
        EnumMdp toy;
        toy.letters = "ab";
        toy.max_len = 2;
        toy.reward = {{"a", 1.0}, {"b", 3.0}, {"aa", 2.0}, {"ab", 2.0},
                      {"ba", 4.0}, {"bb", 2.0}};
        std::vector<EnumMdp> instances{toy};
        for (int i = 0; i < 5; ++i)
            instances.push_back(random_mdp(3, 4, 1000 + static_cast<std::uint64_t>(i)));

        for (std::size_t i = 0; i < instances.size(); ++i) {
            const OracleReport report =
                oracle_check(instances[i], 42 + static_cast<std::uint64_t>(i));
            max_residual = std::max(max_residual, report.final_loss);
            max_tv = std::max(max_tv, report.tv);
            if (i == 0 && std::abs(report.z - 14.0) > 1e-9) {
                ok = false;
                note = "toy Z != 14";
            }
        }
        ok = ok && max_residual < 1e-10 && max_tv < 1e-4;
    } catch (const std::exception& e) {
        ok = false;
        note = e.what();
    }
    const double elapsed = seconds_since(start);
    ok = ok && elapsed < 60.0;
    record(1, "oracle proportional sampling on Z=14 + 5 random MDPs", ok,
           "max residual " + fmt(max_residual) + ", max TV " + fmt(max_tv) + ", " +
               fmt(elapsed, "%.1f") + "s < 60s" + (note.empty() ? "" : "; " + note));
}

void criterion_2_gradients() {
    const auto start = Clock::now();
    bool ok = true;
    double worst = 0.0;
    std::string worst_name;
    try {
        const auto rows = run_gradcheck({1, 2, 3});
        for (const auto& [name, err] : rows) {
            if (err > worst) {
                worst = err;
                worst_name = name;
            }
            ok = ok && err < 1e-4;
        }
    } catch (const std::exception& e) {
        ok = false;
        worst_name = e.what();
    }
    const double elapsed = seconds_since(start);
    ok = ok && elapsed < 60.0;
    record(2, "gradient correctness: all 7 objectives vs finite differences", ok,
           "worst " + worst_name + " " + fmt(worst) + " < 1e-4, " + fmt(elapsed, "%.1f") +
               "s < 60s");
}

void criterion_3_fixed_points() {
    bool ok = true;
    std::string detail;
    try {
        TaskSpec task;
        task.kind = TaskKind::modes;
        task.alphabet = "ab";
        task.mode_strings = {"a", "b", "ab", "ba"};
        task.prompt_len = 2;
        task.max_response_len = 4;
        const Vocab vocab = task.vocab();
        const PolicySpec spec{vocab.size(), vocab.eos(), task.max_response_len,
                              MaskMode::standard};
        const NeuralArch arch{vocab.size(), 6, 4, 12};
        const ParamVector ref = NeuralPolicy::random_init(spec, arch, 5).params();
        std::vector<EncodedPair> batch;
        for (const auto& p : gen_pairs(task, 8, 3)) batch.push_back(encode_pair(vocab, p));

        const NeuralPolicy pol(spec, arch, ref);
        LossConfig cfg;
        cfg.method = Method::dpo;
        const double dpo = pairwise_baseline_loss(Method::dpo, pol, pol, vocab, batch, cfg);
        cfg.method = Method::ipo;
        cfg.beta = 0.1;
        const double ipo = pairwise_baseline_loss(Method::ipo, pol, pol, vocab, batch, cfg);
        const bool dpo_ok = std::abs(dpo - std::log(2.0)) < 1e-9;
        const bool ipo_ok = std::abs(ipo - 25.0) < 1e-9;

        // Zero-residual DB track from the exact-flow policy.
        EnumMdp mdp;
        mdp.letters = "ab";
        mdp.max_len = 2;
        mdp.reward = {{"a", 1.0}, {"b", 3.0}, {"aa", 2.0}, {"ab", 2.0},
                      {"ba", 4.0}, {"bb", 2.0}};
        const FlowTable flows = exact_flows(mdp);
        TabularPolicy pistar = optimal_policy(mdp, flows);
        pistar.set_logits(std::vector<Token>{1, 0, 2}, std::vector<double>(3, 0.0));
        std::vector<Token> full{1, 0, 2};
        TokenRewardTrack track;
        std::vector<Token> ctx;
        for (int t = 0; t <= 3; ++t) {
            auto dist = pistar.next_logprobs(ctx, t);
            if (t < 3) track.logp.push_back(dist[static_cast<std::size_t>(full[static_cast<std::size_t>(t)])]);
            if (t >= 1) track.eos_logp.push_back(dist[2]);
            if (t < 3) ctx.push_back(full[static_cast<std::size_t>(t)]);
        }
        track.log_reward = {std::log(3.0), std::log(4.0), std::log(4.0) + track.eos_logp[2]};
        track.mask = {1, 1, 1};
        const double db = gdpo_db_loss(track);
        const bool db_ok = db < 1e-12;

        // Terminal cancellation by finite differences on a tabular policy.
        const Token eos2 = 2;
        PolicySpec spec3{3, eos2, 4, MaskMode::standard};
        auto ref_pol = NeuralPolicy::random_init(spec3, {3, 4, 3, 8}, 9);
        std::vector<Token> resp{0, 1};
        auto final_residual = [&](double delta) {
            TabularPolicy hat = TabularPolicy::distill(ref_pol, {}, 4);
            std::vector<Token> c{0, 1};
            auto logits = hat.next_logprobs(c, 2);
            logits[eos2] += delta;
            hat.set_logits(c, logits);
            RewardConfig rc;
            auto tr = build_track(hat, ref_pol, {}, resp, true, rc);
            const std::size_t n = tr.size();
            return (tr.log_reward[n - 2] - tr.eos_logp[n - 2]) -
                   (tr.log_reward[n - 1] - tr.eos_logp[n - 1]) + tr.logp[n - 1];
        };
        const double h = 1e-4;
        const double deriv = (final_residual(h) - final_residual(-h)) / (2.0 * h);
        const bool cancel_ok = std::abs(deriv) < 1e-8;

        ok = dpo_ok && ipo_ok && db_ok && cancel_ok;
        detail = "dpo@ref " + fmt(dpo, "%.10f") + ", ipo@ref " + fmt(ipo, "%.10f") +
                 ", db residual " + fmt(db) + ", terminal-cancel deriv " + fmt(std::abs(deriv));
    } catch (const std::exception& e) {
        ok = false;
        detail = e.what();
    }
    record(3, "analytic fixed points", ok, detail);
}

void criteria_4_5_6(const std::vector<SeedRun>& runs, double elapsed_seconds) {
    // Criterion 4: GDPO vs DPO diversity and coverage at temperature 1.0.
    int div_wins = 0, cov_wins = 0;
    for (const auto& run : runs) {
        const auto& gdpo = run.reports.at("gdpo").at(1.0);
        const auto& dpo = run.reports.at("dpo").at(1.0);
        if (gdpo.diversity > dpo.diversity) ++div_wins;
        if (gdpo.mode_coverage >= dpo.mode_coverage) ++cov_wins;
    }
    const bool c4 = div_wins >= 4 && cov_wins >= 4 && elapsed_seconds < 600.0;
    record(4, "directional diversity: GDPO vs DPO", c4,
           "diversity wins " + std::to_string(div_wins) + "/5, coverage wins " +
               std::to_string(cov_wins) + "/5, " + fmt(elapsed_seconds, "%.0f") + "s < 600s");

    // Criterion 5: per method, diversity non-decreasing in temperature within
    // a 2-point tolerance, for a majority of seeds.
    bool c5 = true;
    std::string c5_detail;
    std::vector<std::string> methods{"sft"};
    for (Method m : kAlignMethods) methods.emplace_back(to_string(m));
    for (const auto& name : methods) {
        int good_seeds = 0;
        for (const auto& run : runs) {
            const auto& by_temp = run.reports.at(name);
            bool monotone = true;
            for (std::size_t ti = 0; ti + 1 < kTemperatures.size(); ++ti) {
                const double lo = by_temp.at(kTemperatures[ti]).diversity;
                const double hi = by_temp.at(kTemperatures[ti + 1]).diversity;
                monotone = monotone && hi >= lo - 2.0;
            }
            if (monotone) ++good_seeds;
        }
        c5 = c5 && good_seeds >= 3;
        c5_detail += name + ":" + std::to_string(good_seeds) + "/5 ";
    }
    record(5, "temperature trend of diversity", c5, c5_detail);

    // Criterion 6: margins improve for every method in every seed, and every
    // method's win-rate proxy clears 50 - 2*se.
    bool margins_ok = true;
    bool winrate_ok = true;
    std::string worst_margin, worst_win;
    for (const auto& run : runs) {
        for (Method m : kAlignMethods) {
            const std::string name(to_string(m));
            const auto [start_margin, end_margin] = run.heldout_margins.at(name);
            if (!(end_margin > start_margin)) {
                margins_ok = false;
                worst_margin = name + "@seed" + std::to_string(run.seed);
            }
            const auto& report = run.reports.at(name).at(1.0);
            if (!(report.win_rate.mean > 50.0 - 2.0 * report.win_rate.se)) {
                winrate_ok = false;
                worst_win = name + "@seed" + std::to_string(run.seed) + " " +
                            fmt(report.win_rate.mean, "%.1f") + "±" +
                            fmt(report.win_rate.se, "%.1f");
            }
        }
    }
    record(6, "alignment signal: margins and win-rate proxy", margins_ok && winrate_ok,
           std::string("margins ") + (margins_ok ? "up in all runs" : "flat: " + worst_margin) +
               "; win rates " + (winrate_ok ? "all clear 50-2se" : "low: " + worst_win));
}

void criterion_7_reproducibility(const TaskSpec& task, const fs::path& task_path) {
    bool ok = true;
    std::string detail = "byte-identical datasets, checkpoints, samples, CSVs";
    try {
        auto run_pipeline = [&](const fs::path& root) {
            fs::create_directories(root);
            save_pairs(root / "pairs.jsonl", gen_pairs(task, 300, 77));
            save_pairs(root / "heldout.jsonl", gen_pairs(task, 50, stream_seed(77, "heldout", 0)));
            const auto prompts = gen_prompts(task, 8, stream_seed(77, "eval-prompts", 0));
            save_prompts(root / "prompts.txt", prompts);

            RunConfig sft_cfg = base_config(root, task_path, 77);
            sft_cfg.method = Method::sft;
            sft_cfg.lr = kSftLr;
            sft_cfg.epochs = 2;
            sft_cfg.out_path = root / "sft.ckpt.json";
            sft_cfg.log_path = root / "sft.log.csv";
            run_train(sft_cfg);

            RunConfig gdpo_cfg = base_config(root, task_path, 77);
            gdpo_cfg.method = Method::gdpo;
            gdpo_cfg.lr = kAlignLr;
            gdpo_cfg.epochs = 1;
            gdpo_cfg.init_from = sft_cfg.out_path;
            gdpo_cfg.out_path = root / "gdpo.ckpt.json";
            gdpo_cfg.log_path = root / "gdpo.log.csv";
            run_train(gdpo_cfg);

            const Checkpoint gdpo_ck = Checkpoint::load(gdpo_cfg.out_path);
            const Checkpoint sft_ck = Checkpoint::load(sft_cfg.out_path);
            SamplingDefaults s;
            const SampleSet samples = run_sample(gdpo_ck, prompts, s, 7);
            const SampleSet ref = run_sample(sft_ck, prompts, s, 8);
            save_samples(root / "samples.jsonl", samples);
            save_samples(root / "ref.jsonl", ref);
            const EvalReport report = evaluate_samples(samples, ref, task);
            std::ofstream(root / "eval.csv", std::ios::binary)
                << kEvalCsvHeader << "\n"
                << eval_csv_row("gdpo", 1.0, report) << "\n";
        };

        const fs::path root = artifact_root() / "repro";
        const std::vector<std::string> artifacts{
            "pairs.jsonl", "heldout.jsonl", "prompts.txt", "sft.ckpt.json",
            "gdpo.ckpt.json", "sft.log.csv", "gdpo.log.csv", "samples.jsonl",
            "ref.jsonl", "eval.csv"};
        run_pipeline(root);
        std::map<std::string, std::string> first;
        for (const auto& name : artifacts) {
            std::ostringstream ss;
            ss << std::ifstream(root / name, std::ios::binary).rdbuf();
            first[name] = ss.str();
        }
        run_pipeline(root);
        for (const auto& name : artifacts) {
            std::ostringstream ss;
            ss << std::ifstream(root / name, std::ios::binary).rdbuf();
            if (ss.str() != first[name] || ss.str().empty()) {
                ok = false;
                detail = "artifact differs across re-runs or is empty: " + name;
                break;
            }
        }
    } catch (const std::exception& e) {
        ok = false;
        detail = e.what();
    }
    record(7, "full-pipeline reproducibility", ok, detail);
}

}  // namespace

int main() {
    std::printf("== GDPO acceptance suite ==\n");
    const auto t0 = Clock::now();

    criterion_1_oracle();
    criterion_2_gradients();
    criterion_3_fixed_points();

    const TaskSpec task = acceptance_task();
    fs::create_directories(artifact_root());
    const fs::path task_path = artifact_root() / "task.json";
    task.save(task_path);

    const auto t_train = Clock::now();
    std::vector<SeedRun> runs;
    try {
        for (std::uint64_t seed : kSeeds) runs.push_back(run_seed(task, task_path, seed));
        criteria_4_5_6(runs, seconds_since(t_train));
    } catch (const std::exception& e) {
        record(4, "directional diversity: GDPO vs DPO", false, e.what());
        record(5, "temperature trend of diversity", false, "skipped: training failed");
        record(6, "alignment signal: margins and win-rate proxy", false,
               "skipped: training failed");
    }

    criterion_7_reproducibility(task, task_path);

    int failures = 0;
    for (const auto& c : g_results) failures += c.pass ? 0 : 1;
    std::printf("== %d/%zu criteria passed in %.0fs ==\n", static_cast<int>(g_results.size()) - failures,
                g_results.size(), seconds_since(t0));
    return failures == 0 ? 0 : 1;
}
