#include "gdpo/driver.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>

#include "gdpo/errors.hpp"
#include "gdpo/rng.hpp"

namespace gdpo {

using nlohmann::json;

// Shortest round-trip decimal form; deterministic for identical values.
static std::string fmt_double(double v) {
    char buf[40];
    auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

RunConfig RunConfig::from_json(const json& j) {
    RunConfig cfg;
    try {
        if (j.contains("task")) cfg.task_path = j["task"].get<std::string>();
        if (j.contains("data")) cfg.data_path = j["data"].get<std::string>();
        if (j.contains("heldout")) cfg.heldout_path = j["heldout"].get<std::string>();
        if (j.contains("init_from")) cfg.init_from = j["init_from"].get<std::string>();
        if (j.contains("out")) cfg.out_path = j["out"].get<std::string>();
        if (j.contains("log")) cfg.log_path = j["log"].get<std::string>();
        if (j.contains("method")) cfg.method = method_from_string(j["method"].get<std::string>());
        cfg.lr = j.value("lr", cfg.lr);
        cfg.epochs = j.value("epochs", cfg.epochs);
        cfg.batch_size = j.value("batch_size", cfg.batch_size);
        cfg.warmup_ratio = j.value("warmup_ratio", cfg.warmup_ratio);
        cfg.seed = j.value("seed", cfg.seed);
        cfg.beta = j.value("beta", cfg.beta);
        cfg.lambda_cpo = j.value("lambda_cpo", cfg.lambda_cpo);
        cfg.delta_slic = j.value("delta_slic", cfg.delta_slic);
        cfg.lambda_orpo = j.value("lambda_orpo", cfg.lambda_orpo);
        if (j.contains("alpha")) cfg.alpha = j["alpha"].get<double>();
        cfg.gamma = j.value("gamma", cfg.gamma);
        cfg.eps_pref = j.value("eps_pref", cfg.eps_pref);
        if (j.contains("sampling")) {
            const auto& s = j["sampling"];
            cfg.sampling.temperature = s.value("temperature", cfg.sampling.temperature);
            cfg.sampling.top_p = s.value("top_p", cfg.sampling.top_p);
            cfg.sampling.n = s.value("n", cfg.sampling.n);
        }
        if (j.contains("arch")) {
            const auto& a = j["arch"];
            cfg.arch.embed_dim = a.value("embed_dim", cfg.arch.embed_dim);
            cfg.arch.context_window = a.value("context_window", cfg.arch.context_window);
            cfg.arch.hidden_dim = a.value("hidden_dim", cfg.arch.hidden_dim);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("run config: ") + e.what());
    }
    return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open run config " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError("run config " + path.string() + ": " + e.what());
    }
    return from_json(j);
}

json RunConfig::to_json() const {
    json j{{"task", task_path.string()},
           {"data", data_path.string()},
           {"method", std::string(to_string(method))},
           {"lr", lr},
           {"epochs", epochs},
           {"batch_size", batch_size},
           {"warmup_ratio", warmup_ratio},
           {"seed", seed},
           {"beta", beta},
           {"lambda_cpo", lambda_cpo},
           {"delta_slic", delta_slic},
           {"lambda_orpo", lambda_orpo},
           {"gamma", gamma},
           {"eps_pref", eps_pref},
           {"sampling", {{"temperature", sampling.temperature},
                         {"top_p", sampling.top_p},
                         {"n", sampling.n}}},
           {"arch", {{"embed_dim", arch.embed_dim},
                     {"context_window", arch.context_window},
                     {"hidden_dim", arch.hidden_dim}}}};
    if (alpha) j["alpha"] = *alpha;
    if (!heldout_path.empty()) j["heldout"] = heldout_path.string();
    if (!init_from.empty()) j["init_from"] = init_from.string();
    if (!out_path.empty()) j["out"] = out_path.string();
    if (!log_path.empty()) j["log"] = log_path.string();
    return j;
}

int RunConfig::effective_epochs() const {
    if (epochs > 0) return epochs;
    return method == Method::orpo ? 3 : 1;
}

LossConfig RunConfig::loss_config(TaskKind kind) const {
    LossConfig lc;
    lc.method = method;
    lc.beta = beta;
    lc.lambda_cpo = lambda_cpo;
    lc.delta_slic = delta_slic;
    lc.lambda_orpo = lambda_orpo;
    lc.reward.alpha = alpha ? *alpha : (kind == TaskKind::modes ? 5.0 : 2.0);
    lc.reward.gamma = gamma;
    lc.reward.eps_pref = eps_pref;
    lc.validate();
    return lc;
}

static double mean_margin_of(const NeuralPolicy& policy, const Vocab& vocab,
                             std::span<const EncodedPair> pairs) {
    double total = 0.0;
    for (const auto& p : pairs) {
        auto prefix = vocab.prompt_context(p.prompt);
        std::vector<Token> plus(p.chosen);
        plus.push_back(vocab.eos());
        std::vector<Token> minus(p.rejected);
        minus.push_back(vocab.eos());
        total += seq_logprob(policy, prefix, plus) - seq_logprob(policy, prefix, minus);
    }
    return total / static_cast<double>(pairs.size());
}

TrainResult run_train(const RunConfig& cfg) {
    if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(cfg.lr > 0)) throw ConfigError("lr must be > 0");

    TaskSpec task = TaskSpec::load(cfg.task_path);
    const Vocab vocab = task.vocab();
    const auto raw_pairs = load_pairs(cfg.data_path, task);
    if (raw_pairs.empty()) throw ValidationError("dataset " + cfg.data_path.string() + " is empty");

    std::vector<EncodedPair> pairs;
    pairs.reserve(raw_pairs.size());
    for (const auto& p : raw_pairs) pairs.push_back(encode_pair(vocab, p));

    std::vector<EncodedPair> heldout;
    if (!cfg.heldout_path.empty())
        for (const auto& p : load_pairs(cfg.heldout_path, task))
            heldout.push_back(encode_pair(vocab, p));

    PolicySpec spec{vocab.size(), vocab.eos(), task.max_response_len, MaskMode::standard};
    NeuralArch arch = cfg.arch;
    arch.vocab_size = vocab.size();

    ParamVector params;
    std::optional<ParamVector> ref_params;
    if (cfg.method == Method::sft) {
        if (!cfg.init_from.empty())
            throw ConfigError("sft trains from scratch; drop init_from");
        params = NeuralPolicy::random_init(spec, arch, stream_seed(cfg.seed, "init", 0)).params();
    } else {
        if (cfg.init_from.empty())
            throw ConfigError("method '" + std::string(to_string(cfg.method)) +
                              "' requires an SFT checkpoint (init_from)");
        Checkpoint ref_ck = Checkpoint::load(cfg.init_from);
        if (ref_ck.alphabet != task.alphabet ||
            ref_ck.max_response_len != task.max_response_len)
            throw ConfigError("checkpoint " + cfg.init_from.string() +
                              " was trained for a different task");
        arch = ref_ck.arch;
        params = ref_ck.params;
        ref_params = ref_ck.params;  // pi_hat starts at pi_ref
    }

    const LossConfig loss_cfg = cfg.loss_config(task.kind);
    const int epochs = cfg.effective_epochs();
    const long steps_per_epoch =
        static_cast<long>((pairs.size() + static_cast<std::size_t>(cfg.batch_size) - 1) /
                          static_cast<std::size_t>(cfg.batch_size));
    const long total_steps = epochs * steps_per_epoch;
    const Schedule schedule{cfg.lr, total_steps, cfg.warmup_ratio};

    OptimState opt = OptimState::zeros(params.size());
    Xoshiro256ss train_rng(stream_seed(cfg.seed, "train", 0));

    TrainResult result;
    result.total_steps = total_steps;
    if (!heldout.empty()) {
        result.has_heldout = true;
        result.heldout_margin_start =
            mean_margin_of(NeuralPolicy(spec, arch, params), vocab, heldout);
    }

    std::string csv = "step,lr,loss,margin\n";
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    ParamVector grad(params.size(), 0.0);
    long step = 0;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        train_rng.shuffle(order);
        for (std::size_t begin = 0; begin < order.size();
             begin += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end =
                std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
            std::vector<EncodedPair> batch;
            batch.reserve(end - begin);
            for (std::size_t i = begin; i < end; ++i) batch.push_back(pairs[order[i]]);

            ObjectiveLoss objective(loss_cfg, vocab, spec, arch, std::move(batch), ref_params);
            const double loss = objective.value_and_grad(params, grad);
            if (!std::isfinite(loss))
                throw NumericError("non-finite " + std::string(to_string(cfg.method)) +
                                   " loss at step " + std::to_string(step));
            const double margin = objective.mean_margin(params);
            const double lr = lr_at(schedule, step);
            adam_step(params, grad, opt, lr);

            csv += fmt_double(static_cast<double>(step)) + "," + fmt_double(lr) + "," +
                   fmt_double(loss) + "," + fmt_double(margin) + "\n";
            if (step == 0) result.first_loss = loss;
            result.final_loss = loss;
            ++step;
        }
    }

    if (!heldout.empty())
        result.heldout_margin_end =
            mean_margin_of(NeuralPolicy(spec, arch, params), vocab, heldout);

    Checkpoint ck;
    ck.arch = arch;
    ck.max_response_len = task.max_response_len;
    ck.alphabet = task.alphabet;
    ck.params = std::move(params);
    ck.opt = std::move(opt);
    ck.rng_state = train_rng.state();
    ck.step = step;
    ck.config_echo = cfg.to_json();
    result.checkpoint = std::move(ck);

    if (!cfg.out_path.empty()) result.checkpoint.save(cfg.out_path);
    if (!cfg.log_path.empty()) {
        std::ofstream out(cfg.log_path, std::ios::binary);
        if (!out) throw ValidationError("cannot write training log " + cfg.log_path.string());
        out << csv;
        if (result.has_heldout) {
            std::ofstream hout(cfg.log_path.string() + ".heldout.csv", std::ios::binary);
            hout << "step,margin\n";
            hout << "0," << fmt_double(result.heldout_margin_start) << "\n";
            hout << total_steps << "," << fmt_double(result.heldout_margin_end) << "\n";
        }
    }
    return result;
}

SampleSet run_sample(const Checkpoint& ck, const std::vector<std::string>& prompts,
                     const SamplingDefaults& sampling, std::uint64_t seed) {
    if (prompts.empty()) throw ValidationError("run_sample: no prompts");
    if (sampling.n < 1) throw ConfigError("run_sample: n must be >= 1");
    const NeuralPolicy policy = ck.policy();
    const Vocab vocab = ck.vocab();

    SampleSet out;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        const auto prefix = vocab.prompt_context(prompts[i]);
        const std::uint64_t prompt_seed = stream_seed(seed, "sample", i);
        SampleSet::Entry entry;
        entry.prompt = prompts[i];
        for (int j = 0; j < sampling.n; ++j) {
            SamplingConfig scfg{sampling.temperature, sampling.top_p,
                                ck.max_response_len,
                                stream_seed(prompt_seed, "draw", static_cast<std::uint64_t>(j))};
            auto response = sample_response(policy, prefix, scfg);
            response.pop_back();  // strip EOS for scoring and storage
            entry.samples.push_back(vocab.decode(response));
        }
        out.entries.push_back(std::move(entry));
    }
    return out;
}

std::string eval_csv_row(const std::string& method, double temperature,
                         const EvalReport& report) {
    return method + "," + fmt_double(temperature) + "," + fmt_double(report.diversity) +
           "," + fmt_double(report.win_rate.mean) + "," + fmt_double(report.win_rate.se) +
           "," + fmt_double(report.mode_coverage) + "," +
           fmt_double(report.mean_tokens.mean) + "," + fmt_double(report.mean_tokens.se);
}

json eval_report_json(const std::string& method, double temperature, double top_p,
                      int n, const EvalReport& report) {
    return json{{"method", method},
                {"diversity", report.diversity},
                {"win_rate", report.win_rate.mean},
                {"win_se", report.win_rate.se},
                {"coverage", report.mode_coverage},
                {"mean_tokens", report.mean_tokens.mean},
                {"tokens_se", report.mean_tokens.se},
                {"sampling", {{"temperature", temperature}, {"top_p", top_p}, {"n", n}}}};
}

std::string run_sweep(const TaskSpec& task, const std::vector<std::string>& prompts,
                      const SweepOptions& opts, std::vector<std::string>* warnings) {
    if (opts.methods.empty() || opts.temperatures.empty())
        throw ConfigError("sweep needs at least one method and one temperature");

    std::vector<std::string> methods = opts.methods;
    std::sort(methods.begin(), methods.end());
    methods.erase(std::unique(methods.begin(), methods.end()), methods.end());
    std::vector<double> temperatures = opts.temperatures;
    std::sort(temperatures.begin(), temperatures.end());

    const auto ckpt_path = [&](const std::string& method) {
        return opts.ckpt_dir / (method + ".ckpt.json");
    };
    if (!std::filesystem::exists(ckpt_path(opts.ref_method)))
        throw ConfigError("sweep reference checkpoint missing: " +
                          ckpt_path(opts.ref_method).string());
    const Checkpoint ref_ck = Checkpoint::load(ckpt_path(opts.ref_method));

    std::vector<SampleSet> ref_samples;
    for (std::size_t ti = 0; ti < temperatures.size(); ++ti) {
        SamplingDefaults s{temperatures[ti], opts.top_p, opts.n};
        ref_samples.push_back(
            run_sample(ref_ck, prompts, s, stream_seed(opts.seed, "sweep-ref", ti)));
    }

    std::string csv = std::string(kEvalCsvHeader) + "\n";
    for (const auto& method : methods) {
        const auto path = ckpt_path(method);
        if (!std::filesystem::exists(path)) {
            if (warnings)
                warnings->push_back("missing checkpoint for '" + method + "' (" +
                                    path.string() + "), skipped");
            continue;
        }
        const Checkpoint ck = Checkpoint::load(path);
        for (std::size_t ti = 0; ti < temperatures.size(); ++ti) {
            SamplingDefaults s{temperatures[ti], opts.top_p, opts.n};
            const SampleSet samples =
                run_sample(ck, prompts, s, stream_seed(opts.seed, "sweep-" + method, ti));
            const EvalReport report = evaluate_samples(samples, ref_samples[ti], task);
            csv += eval_csv_row(method, temperatures[ti], report) + "\n";
        }
    }
    return csv;
}

std::vector<std::pair<std::string, double>> run_gradcheck(
    const std::vector<std::uint64_t>& seeds) {
    if (seeds.empty()) throw ConfigError("gradcheck needs at least one seed");

    TaskSpec task;
    task.kind = TaskKind::modes;
    task.alphabet = "abcd";
    task.mode_strings = {"aabb", "bbc", "cddc", "dab"};
    task.prompt_len = 3;
    task.max_response_len = 6;
    task.validate();
    const Vocab vocab = task.vocab();
    const PolicySpec spec{vocab.size(), vocab.eos(), task.max_response_len,
                          MaskMode::standard};
    NeuralArch arch;
    arch.vocab_size = vocab.size();

    std::vector<std::pair<std::string, double>> rows;
    for (Method method : kAllMethods) rows.emplace_back(std::string(to_string(method)), 0.0);

    for (std::uint64_t seed : seeds) {
        const auto raw = gen_pairs(task, 6, seed);
        std::vector<EncodedPair> batch;
        for (const auto& p : raw) batch.push_back(encode_pair(vocab, p));
        const ParamVector hat_params =
            NeuralPolicy::random_init(spec, arch, stream_seed(seed, "gradcheck-hat", 0)).params();
        const ParamVector ref_params =
            NeuralPolicy::random_init(spec, arch, stream_seed(seed, "gradcheck-ref", 0)).params();

        for (std::size_t mi = 0; mi < rows.size(); ++mi) {
            const Method method = kAllMethods[mi];
            LossConfig lc;
            lc.method = method;
            ObjectiveLoss objective(lc, vocab, spec, arch, batch,
                                    method == Method::sft
                                        ? std::optional<ParamVector>{}
                                        : std::optional<ParamVector>{ref_params});
            const double err = fd_check(objective, hat_params, 1e-5, seed);
            rows[mi].second = std::max(rows[mi].second, err);
        }
    }
    return rows;
}

}  // namespace gdpo
