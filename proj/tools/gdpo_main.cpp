// gdpo command-line driver: dataset generation, training, sampling,
// evaluation, oracle certification, temperature sweeps, and gradient checks.
//
// Exit codes: 0 success, 2 validation/config error, 3 numeric failure,
// 4 acceptance failure (oracle-check TV above threshold).

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "gdpo/driver.hpp"
#include "gdpo/errors.hpp"
#include "gdpo/rng.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitAcceptance = 4;

struct TrainCli {
    std::string config_path;
    std::string task, data, heldout, init_from, out, log;
    std::string method;
    double lr = -1;
    int epochs = -1;
    int batch_size = -1;
    double warmup_ratio = -1;
    long seed = -1;
    double beta = -1, alpha = -1, gamma = -1;
};

gdpo::RunConfig resolve_train_config(const TrainCli& cli) {
    gdpo::RunConfig cfg;
    if (!cli.config_path.empty()) cfg = gdpo::RunConfig::load(cli.config_path);
    if (!cli.task.empty()) cfg.task_path = cli.task;
    if (!cli.data.empty()) cfg.data_path = cli.data;
    if (!cli.heldout.empty()) cfg.heldout_path = cli.heldout;
    if (!cli.init_from.empty()) cfg.init_from = cli.init_from;
    if (!cli.out.empty()) cfg.out_path = cli.out;
    if (!cli.log.empty()) cfg.log_path = cli.log;
    if (!cli.method.empty()) cfg.method = gdpo::method_from_string(cli.method);
    if (cli.lr > 0) cfg.lr = cli.lr;
    if (cli.epochs >= 0) cfg.epochs = cli.epochs;
    if (cli.batch_size > 0) cfg.batch_size = cli.batch_size;
    if (cli.warmup_ratio >= 0) cfg.warmup_ratio = cli.warmup_ratio;
    if (cli.seed >= 0) cfg.seed = static_cast<std::uint64_t>(cli.seed);
    if (cli.beta > 0) cfg.beta = cli.beta;
    if (cli.alpha > 0) cfg.alpha = cli.alpha;
    if (cli.gamma > 0) cfg.gamma = cli.gamma;
    if (cfg.task_path.empty()) throw gdpo::ConfigError("train: missing task file");
    if (cfg.data_path.empty()) throw gdpo::ConfigError("train: missing dataset");
    if (cfg.out_path.empty()) throw gdpo::ConfigError("train: missing output checkpoint path");
    return cfg;
}

int run(int argc, char** argv) {
    CLI::App app{"GDPO: offline preference alignment with a GFlowNet detailed-balance objective"};
    app.require_subcommand(1);

    // gen-data ---------------------------------------------------------------
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic preference dataset");
    std::string gen_task, gen_out, gen_prompts_out, gen_heldout_out;
    int gen_n = 2000, gen_n_prompts = 32, gen_n_heldout = 0;
    long gen_seed = -1;
    gen->add_option("--task", gen_task, "task spec file")->required();
    gen->add_option("--out", gen_out, "output dataset (jsonl)")->required();
    gen->add_option("--n", gen_n, "number of pairs");
    gen->add_option("--seed", gen_seed, "generation seed (default: task seed)");
    gen->add_option("--prompts-out", gen_prompts_out, "also write evaluation prompts here");
    gen->add_option("--n-prompts", gen_n_prompts, "number of evaluation prompts");
    gen->add_option("--heldout-out", gen_heldout_out, "also write a held-out pair set here");
    gen->add_option("--n-heldout", gen_n_heldout, "number of held-out pairs");

    // train ------------------------------------------------------------------
    auto* train = app.add_subcommand("train", "train SFT or an alignment method");
    TrainCli tcli;
    train->add_option("--config", tcli.config_path, "JSON run config (flags override keys)");
    train->add_option("--task", tcli.task, "task spec file");
    train->add_option("--data", tcli.data, "training pairs (jsonl)");
    train->add_option("--heldout", tcli.heldout, "held-out pairs for margin tracking");
    train->add_option("--method", tcli.method, "sft|dpo|ipo|cpo|slic|orpo|gdpo");
    train->add_option("--init-from", tcli.init_from, "SFT checkpoint (required unless sft)");
    train->add_option("--out", tcli.out, "output checkpoint path");
    train->add_option("--log", tcli.log, "per-step CSV log path");
    train->add_option("--lr", tcli.lr, "peak learning rate");
    train->add_option("--epochs", tcli.epochs, "epochs (0 = method default)");
    train->add_option("--batch-size", tcli.batch_size, "batch size");
    train->add_option("--warmup-ratio", tcli.warmup_ratio, "schedule warmup ratio");
    train->add_option("--seed", tcli.seed, "training seed");
    train->add_option("--beta", tcli.beta, "pairwise loss coefficient");
    train->add_option("--alpha", tcli.alpha, "gdpo preference tempering");
    train->add_option("--gamma", tcli.gamma, "gdpo EOS tempering");

    // sample -----------------------------------------------------------------
    auto* sample = app.add_subcommand("sample", "sample N responses per prompt");
    std::string smp_ckpt, smp_prompts, smp_out;
    double smp_temperature = 1.0, smp_top_p = 0.95;
    int smp_n = 3;
    long smp_seed = 1;
    sample->add_option("--ckpt", smp_ckpt, "checkpoint file")->required();
    sample->add_option("--prompts", smp_prompts, "prompt file, one per line")->required();
    sample->add_option("--out", smp_out, "output samples (jsonl)")->required();
    sample->add_option("--temperature", smp_temperature, "sampling temperature");
    sample->add_option("--top-p", smp_top_p, "nucleus threshold");
    sample->add_option("--n", smp_n, "samples per prompt");
    sample->add_option("--seed", smp_seed, "sampling seed");

    // eval -------------------------------------------------------------------
    auto* eval = app.add_subcommand("eval", "evaluate samples against a reference set");
    std::string ev_samples, ev_ref, ev_task, ev_report, ev_csv, ev_method = "policy";
    double ev_temperature = 1.0;
    eval->add_option("--samples", ev_samples, "policy samples (jsonl)")->required();
    eval->add_option("--ref-samples", ev_ref, "reference samples (jsonl)")->required();
    eval->add_option("--task", ev_task, "task spec file")->required();
    eval->add_option("--report", ev_report, "output report (json)");
    eval->add_option("--csv", ev_csv, "output CSV row file");
    eval->add_option("--method", ev_method, "method tag echoed into the CSV");
    eval->add_option("--temperature", ev_temperature, "temperature echoed into the report");

    // oracle-check -----------------------------------------------------------
    auto* oracle = app.add_subcommand("oracle-check",
                                      "train exact DB on an enumerable MDP and verify R/Z sampling");
    std::string orc_mdp, orc_report;
    long orc_seed = 1, orc_steps = 40000;
    double orc_tv_limit = 1e-3;
    oracle->add_option("--mdp", orc_mdp, "MDP spec file")->required();
    oracle->add_option("--report", orc_report, "output report (json)");
    oracle->add_option("--seed", orc_seed, "training seed");
    oracle->add_option("--steps", orc_steps, "step budget");
    oracle->add_option("--tv-limit", orc_tv_limit, "acceptance threshold on TV distance");

    // sweep ------------------------------------------------------------------
    auto* sweep = app.add_subcommand("sweep", "evaluate methods across temperatures");
    std::string sw_task, sw_dir, sw_prompts, sw_out, sw_ref = "sft";
    std::vector<std::string> sw_methods;
    std::vector<double> sw_temps{0.6, 0.8, 1.0};
    double sw_top_p = 0.95;
    int sw_n = 3;
    long sw_seed = 1;
    sweep->add_option("--task", sw_task, "task spec file")->required();
    sweep->add_option("--ckpt-dir", sw_dir, "directory holding <method>.ckpt.json files")->required();
    sweep->add_option("--prompts", sw_prompts, "prompt file")->required();
    sweep->add_option("--methods", sw_methods, "methods to sweep")->required()->delimiter(',');
    sweep->add_option("--temperatures", sw_temps, "temperatures")->delimiter(',');
    sweep->add_option("--ref-method", sw_ref, "reference method for the win-rate proxy");
    sweep->add_option("--top-p", sw_top_p, "nucleus threshold");
    sweep->add_option("--n", sw_n, "samples per prompt");
    sweep->add_option("--seed", sw_seed, "sampling seed");
    sweep->add_option("--out", sw_out, "output CSV path")->required();

    // gradcheck ----------------------------------------------------------------
    auto* gradcheck = app.add_subcommand("gradcheck",
                                         "finite-difference check of all objective gradients");
    std::vector<long> gc_seeds{1, 2, 3};
    double gc_limit = 1e-4;
    gradcheck->add_option("--seeds", gc_seeds, "seeds for random batches")->delimiter(',');
    gradcheck->add_option("--limit", gc_limit, "max allowed relative error");

    CLI11_PARSE(app, argc, argv);

    if (gen->parsed()) {
        gdpo::TaskSpec task = gdpo::TaskSpec::load(gen_task);
        const std::uint64_t seed =
            gen_seed >= 0 ? static_cast<std::uint64_t>(gen_seed) : task.seed;
        auto pairs = gdpo::gen_pairs(task, gen_n, seed);
        gdpo::save_pairs(gen_out, pairs);
        std::printf("wrote %d pairs to %s\n", gen_n, gen_out.c_str());
        if (!gen_heldout_out.empty() && gen_n_heldout > 0) {
            auto held = gdpo::gen_pairs(task, gen_n_heldout,
                                        gdpo::stream_seed(seed, "heldout", 0));
            gdpo::save_pairs(gen_heldout_out, held);
            std::printf("wrote %d held-out pairs to %s\n", gen_n_heldout,
                        gen_heldout_out.c_str());
        }
        if (!gen_prompts_out.empty() && gen_n_prompts > 0) {
            auto prompts = gdpo::gen_prompts(task, gen_n_prompts,
                                             gdpo::stream_seed(seed, "eval-prompts", 0));
            gdpo::save_prompts(gen_prompts_out, prompts);
            std::printf("wrote %d prompts to %s\n", gen_n_prompts, gen_prompts_out.c_str());
        }
        return kExitOk;
    }

    if (train->parsed()) {
        const gdpo::RunConfig cfg = resolve_train_config(tcli);
        const gdpo::TrainResult result = gdpo::run_train(cfg);
        std::printf("method=%s steps=%ld first_loss=%.6f final_loss=%.6f\n",
                    std::string(gdpo::to_string(cfg.method)).c_str(), result.total_steps,
                    result.first_loss, result.final_loss);
        if (result.has_heldout)
            std::printf("heldout margin: %.6f -> %.6f\n", result.heldout_margin_start,
                        result.heldout_margin_end);
        return kExitOk;
    }

    if (sample->parsed()) {
        const gdpo::Checkpoint ck = gdpo::Checkpoint::load(smp_ckpt);
        const auto prompts = gdpo::load_prompts(smp_prompts);
        gdpo::SamplingDefaults s{smp_temperature, smp_top_p, smp_n};
        const gdpo::SampleSet samples =
            gdpo::run_sample(ck, prompts, s, static_cast<std::uint64_t>(smp_seed));
        gdpo::save_samples(smp_out, samples);
        std::printf("wrote %zu prompts x %d samples to %s\n", samples.entries.size(), smp_n,
                    smp_out.c_str());
        return kExitOk;
    }

    if (eval->parsed()) {
        const gdpo::TaskSpec task = gdpo::TaskSpec::load(ev_task);
        const gdpo::SampleSet samples = gdpo::load_samples(ev_samples);
        const gdpo::SampleSet ref = gdpo::load_samples(ev_ref);
        const gdpo::EvalReport report = gdpo::evaluate_samples(samples, ref, task);
        const auto j = gdpo::eval_report_json(ev_method, ev_temperature, 0.95,
                                              samples.entries.empty()
                                                  ? 0
                                                  : static_cast<int>(samples.entries[0].samples.size()),
                                              report);
        if (!ev_report.empty()) {
            std::ofstream out(ev_report);
            out << j.dump(2) << '\n';
        }
        if (!ev_csv.empty()) {
            std::ofstream out(ev_csv, std::ios::binary);
            out << gdpo::kEvalCsvHeader << '\n'
                << gdpo::eval_csv_row(ev_method, ev_temperature, report) << '\n';
        }
        std::printf("%s\n", j.dump().c_str());
        return kExitOk;
    }

    if (oracle->parsed()) {
        const gdpo::EnumMdp mdp = gdpo::EnumMdp::load(orc_mdp);
        gdpo::DbTrainOptions opts;
        opts.steps = orc_steps;
        gdpo::OracleReport report;
        try {
            report = gdpo::oracle_check(mdp, static_cast<std::uint64_t>(orc_seed), opts);
        } catch (const gdpo::ConvergenceError& e) {
            std::fprintf(stderr, "oracle-check: %s\n", e.what());
            return kExitNumeric;
        }
        if (!orc_report.empty()) gdpo::save_oracle_report(orc_report, report);
        std::printf("Z=%.12g residual=%.3e steps=%ld tv=%.3e\n", report.z,
                    report.final_loss, report.steps_used, report.tv);
        if (!(report.tv < orc_tv_limit)) {
            std::fprintf(stderr, "oracle-check: TV %.3e exceeds limit %.3e\n", report.tv,
                         orc_tv_limit);
            return kExitAcceptance;
        }
        return kExitOk;
    }

    if (sweep->parsed()) {
        const gdpo::TaskSpec task = gdpo::TaskSpec::load(sw_task);
        const auto prompts = gdpo::load_prompts(sw_prompts);
        gdpo::SweepOptions opts;
        opts.ckpt_dir = sw_dir;
        opts.methods = sw_methods;
        opts.temperatures = sw_temps;
        opts.ref_method = sw_ref;
        opts.top_p = sw_top_p;
        opts.n = sw_n;
        opts.seed = static_cast<std::uint64_t>(sw_seed);
        std::vector<std::string> warnings;
        const std::string csv = gdpo::run_sweep(task, prompts, opts, &warnings);
        for (const auto& w : warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
        std::ofstream out(sw_out, std::ios::binary);
        if (!out) throw gdpo::ValidationError("cannot write sweep CSV " + sw_out);
        out << csv;
        std::printf("wrote sweep CSV to %s\n", sw_out.c_str());
        return kExitOk;
    }

    if (gradcheck->parsed()) {
        std::vector<std::uint64_t> seeds;
        for (long s : gc_seeds) seeds.push_back(static_cast<std::uint64_t>(s));
        const auto rows = gdpo::run_gradcheck(seeds);
        bool ok = true;
        for (const auto& [name, err] : rows) {
            const bool pass = err < gc_limit;
            ok = ok && pass;
            std::printf("%-5s max_rel_err=%.3e %s\n", name.c_str(), err,
                        pass ? "[pass]" : "[FAIL]");
        }
        return ok ? kExitOk : kExitNumeric;
    }

    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const gdpo::ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitValidation;
    } catch (const gdpo::NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitValidation;
    }
}
