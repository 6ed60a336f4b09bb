#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gdpo/checkpoint.hpp"
#include "gdpo/evalmetrics.hpp"
#include "gdpo/objectives.hpp"
#include "gdpo/oracle.hpp"
#include "gdpo/task.hpp"

namespace gdpo {

struct SamplingDefaults {
    double temperature = 1.0;
    double top_p = 0.95;
    int n = 3;
};

// One training run: dataset, method, optimizer schedule, seeds. Loadable from
// a JSON config file; CLI flags override individual keys.
struct RunConfig {
    std::filesystem::path task_path;
    std::filesystem::path data_path;
    std::filesystem::path heldout_path;  // optional
    std::filesystem::path init_from;     // SFT checkpoint; required unless method == sft
    std::filesystem::path out_path;
    std::filesystem::path log_path;  // per-step CSV; optional

    Method method = Method::sft;
    double lr = 1e-3;
    int epochs = 0;  // 0 = method default (3 for orpo, otherwise 1)
    int batch_size = 64;
    double warmup_ratio = 0.1;
    std::uint64_t seed = 1;

    double beta = 0.1;
    double lambda_cpo = 1.0;
    double delta_slic = 1.0;
    double lambda_orpo = 0.05;
    std::optional<double> alpha;  // default 5.0 (modes) / 2.0 (unique-answer)
    double gamma = 0.5;
    double eps_pref = std::exp(-10.0);

    SamplingDefaults sampling;

    NeuralArch arch;  // vocab_size filled in from the task

    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::filesystem::path& path);
    nlohmann::json to_json() const;

    int effective_epochs() const;
    LossConfig loss_config(TaskKind kind) const;
};

struct TrainResult {
    Checkpoint checkpoint;
    double first_loss = 0.0;
    double final_loss = 0.0;
    double heldout_margin_start = 0.0;  // valid when a heldout set was given
    double heldout_margin_end = 0.0;
    bool has_heldout = false;
    long total_steps = 0;
};

// Algorithm-1-style loop: pi_hat starts from the SFT reference (or from a
// seeded random init for SFT itself), deterministic shuffling, Adam with the
// warmup+cosine schedule, per-step CSV rows (step, lr, loss, margin).
TrainResult run_train(const RunConfig& cfg);

// N nucleus samples per prompt, per-prompt seeds derived from (seed, index).
// Writes/returns the samples file content.
SampleSet run_sample(const Checkpoint& ck, const std::vector<std::string>& prompts,
                     const SamplingDefaults& sampling, std::uint64_t seed);

// Fixed 8-column CSV schema shared by eval and sweep.
inline constexpr const char* kEvalCsvHeader =
    "method,temperature,diversity,win_rate,win_se,coverage,mean_tokens,tokens_se";

std::string eval_csv_row(const std::string& method, double temperature,
                         const EvalReport& report);

nlohmann::json eval_report_json(const std::string& method, double temperature,
                                double top_p, int n, const EvalReport& report);

struct SweepOptions {
    std::filesystem::path ckpt_dir;
    std::vector<std::string> methods;
    std::vector<double> temperatures;
    std::string ref_method = "sft";
    double top_p = 0.95;
    int n = 3;
    std::uint64_t seed = 1;
};

// One CSV row per (method, temperature), rows sorted by that key. Missing
// checkpoints are reported on the warning stream and skipped.
std::string run_sweep(const TaskSpec& task, const std::vector<std::string>& prompts,
                      const SweepOptions& opts, std::vector<std::string>* warnings);

// Per-objective fd_check on seeded synthetic batches. Returns (name, max
// relative error) rows; `seeds` values get combined with each objective.
std::vector<std::pair<std::string, double>> run_gradcheck(
    const std::vector<std::uint64_t>& seeds);

}  // namespace gdpo
