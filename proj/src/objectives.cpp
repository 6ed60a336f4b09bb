#include "gdpo/objectives.hpp"

#include <cmath>
#include <cstring>
#include <unordered_map>

#include "gdpo/errors.hpp"

namespace gdpo {

std::string_view to_string(Method m) {
    switch (m) {
        case Method::sft: return "sft";
        case Method::dpo: return "dpo";
        case Method::ipo: return "ipo";
        case Method::cpo: return "cpo";
        case Method::slic: return "slic";
        case Method::orpo: return "orpo";
        case Method::gdpo: return "gdpo";
    }
    throw ConfigError("invalid method enum");
}

Method method_from_string(std::string_view s) {
    for (Method m : kAllMethods)
        if (to_string(m) == s) return m;
    throw ConfigError("unknown method '" + std::string(s) + "'");
}

bool is_pairwise(Method m) {
    return m == Method::dpo || m == Method::ipo || m == Method::cpo ||
           m == Method::slic || m == Method::orpo;
}

void LossConfig::validate() const {
    if (!(beta > 0)) throw ConfigError("beta must be > 0");
    if (lambda_cpo < 0) throw ConfigError("lambda_cpo must be >= 0");
    if (delta_slic < 0) throw ConfigError("delta_slic must be >= 0");
    if (lambda_orpo < 0) throw ConfigError("lambda_orpo must be >= 0");
    reward.validate();
}

namespace {

double log_sigmoid(double x) {
    return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

void check_track_entry(double v, const char* field, std::size_t pos) {
    if (!std::isfinite(v) || v <= kMaskSentinel / 2)
        throw NumericError(std::string("gdpo_db_loss: non-finite ") + field +
                           " at position " + std::to_string(pos + 1));
}

}  // namespace

double gdpo_db_loss(const TokenRewardTrack& track) {
    const std::size_t n = track.size();
    if (track.eos_logp.size() != n || track.log_reward.size() != n ||
        track.mask.size() != n)
        throw ShapeError("gdpo_db_loss: track arrays must have equal length");

    double loss = 0.0;
    for (std::size_t j = 0; j + 1 < n; ++j) {
        if (!track.mask[j] || !track.mask[j + 1]) continue;
        check_track_entry(track.log_reward[j], "log_reward", j);
        check_track_entry(track.eos_logp[j], "eos_logp", j);
        check_track_entry(track.log_reward[j + 1], "log_reward", j + 1);
        check_track_entry(track.eos_logp[j + 1], "eos_logp", j + 1);
        check_track_entry(track.logp[j + 1], "logp", j + 1);
        const double log_f_j = track.log_reward[j] - track.eos_logp[j];
        const double log_f_j1 = track.log_reward[j + 1] - track.eos_logp[j + 1];
        const double r = log_f_j - log_f_j1 + track.logp[j + 1];
        loss += r * r;
    }
    return loss;
}

double gdpo_db_batch_loss(std::span<const TokenRewardTrack> tracks) {
    if (tracks.empty()) throw ValidationError("gdpo_db_batch_loss: empty batch");
    double total = 0.0;
    for (const auto& t : tracks) total += gdpo_db_loss(t);
    return total / static_cast<double>(tracks.size());
}

double sft_loss(const Policy& pi_hat, const Vocab& vocab,
                std::span<const EncodedPair> batch) {
    if (batch.empty()) throw ValidationError("sft_loss: empty batch");
    double total = 0.0;
    for (const auto& pair : batch) {
        auto prefix = vocab.prompt_context(pair.prompt);
        std::vector<Token> full(pair.chosen);
        full.push_back(vocab.eos());
        total += -seq_logprob(pi_hat, prefix, full);
    }
    return total / static_cast<double>(batch.size());
}

namespace {

struct PairwiseEval {
    double value = 0.0;
    double d_lplus = 0.0;   // d value / d L+
    double d_lminus = 0.0;  // d value / d L-
};

PairwiseEval eval_pairwise(Method method, double lplus, double lminus,
                           double rplus, double rminus, double len_plus,
                           double len_minus, const LossConfig& cfg) {
    PairwiseEval out;
    switch (method) {
        case Method::dpo: {
            const double h = (lplus - rplus) - (lminus - rminus);
            const double u = cfg.beta * h;
            const double s = sigmoid(-u);
            out.value = -log_sigmoid(u);
            out.d_lplus = -cfg.beta * s;
            out.d_lminus = cfg.beta * s;
            break;
        }
        case Method::ipo: {
            const double h = (lplus - rplus) - (lminus - rminus);
            const double t = h - 1.0 / (2.0 * cfg.beta);
            out.value = t * t;
            out.d_lplus = 2.0 * t;
            out.d_lminus = -2.0 * t;
            break;
        }
        case Method::cpo: {
            const double u = cfg.beta * (lplus - lminus);
            const double s = sigmoid(-u);
            out.value = -log_sigmoid(u) - cfg.lambda_cpo * lplus / len_plus;
            out.d_lplus = -cfg.beta * s - cfg.lambda_cpo / len_plus;
            out.d_lminus = cfg.beta * s;
            break;
        }
        case Method::slic: {
            const double g = cfg.delta_slic - cfg.beta * (lplus - lminus);
            const bool active = g > 0;
            out.value = (active ? g : 0.0) - cfg.lambda_cpo * lplus / len_plus;
            out.d_lplus = (active ? -cfg.beta : 0.0) - cfg.lambda_cpo / len_plus;
            out.d_lminus = active ? cfg.beta : 0.0;
            break;
        }
        case Method::orpo: {
            // odds(l) = exp(l) / (1 - exp(l)) on length-normalized log-probs,
            // clamped below 0 so the denominator stays positive.
            constexpr double kClamp = -1e-6;
            const double ln_plus_raw = lplus / len_plus;
            const double ln_plus = std::min(ln_plus_raw, kClamp);
            const double ln_minus = std::min(lminus / len_minus, kClamp);
            const double log_odds_plus = ln_plus - std::log1p(-std::exp(ln_plus));
            const double log_odds_minus = ln_minus - std::log1p(-std::exp(ln_minus));
            const double log_or = log_odds_plus - log_odds_minus;
            const double s = sigmoid(-log_or);
            out.value = -ln_plus_raw + cfg.lambda_orpo * (-log_sigmoid(log_or));
            out.d_lplus = -1.0 / len_plus;
            if (ln_plus_raw < kClamp)
                out.d_lplus += cfg.lambda_orpo * (-s) / (1.0 - std::exp(ln_plus)) / len_plus;
            if (lminus / len_minus < kClamp)
                out.d_lminus = cfg.lambda_orpo * s / (1.0 - std::exp(ln_minus)) / len_minus;
            break;
        }
        default:
            throw ConfigError("eval_pairwise: method is not a pairwise baseline");
    }
    return out;
}

}  // namespace

double pairwise_baseline_loss(Method method, const Policy& pi_hat,
                              const Policy& pi_ref, const Vocab& vocab,
                              std::span<const EncodedPair> batch,
                              const LossConfig& cfg) {
    if (!is_pairwise(method))
        throw ConfigError("pairwise_baseline_loss: method '" +
                          std::string(to_string(method)) + "' is not pairwise");
    cfg.validate();
    if (batch.empty()) throw ValidationError("pairwise_baseline_loss: empty batch");

    double total = 0.0;
    for (const auto& pair : batch) {
        auto prefix = vocab.prompt_context(pair.prompt);
        std::vector<Token> plus(pair.chosen);
        plus.push_back(vocab.eos());
        std::vector<Token> minus(pair.rejected);
        minus.push_back(vocab.eos());
        const double lplus = seq_logprob(pi_hat, prefix, plus);
        const double lminus = seq_logprob(pi_hat, prefix, minus);
        double rplus = 0.0, rminus = 0.0;
        if (method == Method::dpo || method == Method::ipo) {
            rplus = seq_logprob(pi_ref, prefix, plus);
            rminus = seq_logprob(pi_ref, prefix, minus);
        }
        total += eval_pairwise(method, lplus, lminus, rplus, rminus,
                               static_cast<double>(plus.size()),
                               static_cast<double>(minus.size()), cfg)
                     .value;
    }
    return total / static_cast<double>(batch.size());
}

// ---------------------------------------------------------------------------
// Gradient accumulation over log-prob slots.
//
// Every objective touches the policy only through log pi(token | ctx) values.
// We gather d(loss)/d(logp) weights per context, convert them through the
// softmax Jacobian (dlogits = w - sum(w) * p), and backprop once per context.

namespace {

class SlotAccumulator {
public:
    explicit SlotAccumulator(int vocab_size) : vocab_size_(vocab_size) {}

    void add(std::span<const Token> ctx, int depth, Token token, double weight) {
        std::string key = make_key(ctx, depth);
        auto [it, inserted] = index_.try_emplace(std::move(key), entries_.size());
        if (inserted) {
            Entry e;
            e.ctx.assign(ctx.begin(), ctx.end());
            e.depth = depth;
            e.weights.assign(static_cast<std::size_t>(vocab_size_), 0.0);
            entries_.push_back(std::move(e));
        }
        entries_[it->second].weights[static_cast<std::size_t>(token)] += weight;
    }

    void apply(const NeuralPolicy& policy, ParamVector& grad) const {
        std::vector<double> dlogits(static_cast<std::size_t>(vocab_size_));
        for (const auto& e : entries_) {
            auto lp = policy.next_logprobs(e.ctx, e.depth);
            double wsum = 0.0;
            for (double w : e.weights) wsum += w;
            for (int i = 0; i < vocab_size_; ++i)
                dlogits[static_cast<std::size_t>(i)] =
                    e.weights[static_cast<std::size_t>(i)] -
                    wsum * std::exp(lp[static_cast<std::size_t>(i)]);
            policy.backprop_logits(e.ctx, dlogits, grad);
        }
    }

private:
    struct Entry {
        std::vector<Token> ctx;
        int depth;
        std::vector<double> weights;
    };

    static std::string make_key(std::span<const Token> ctx, int depth) {
        std::string key;
        key.resize((ctx.size() + 1) * sizeof(Token));
        std::memcpy(key.data(), ctx.data(), ctx.size() * sizeof(Token));
        std::memcpy(key.data() + ctx.size() * sizeof(Token), &depth, sizeof(Token));
        return key;
    }

    int vocab_size_;
    std::unordered_map<std::string, std::size_t> index_;
    std::vector<Entry> entries_;  // insertion order, so reductions are stable
};

}  // namespace

// ---------------------------------------------------------------------------
// ObjectiveLoss

namespace {

// log_reward array for one response under a frozen reference policy.
std::vector<double> log_reward_array(const Policy& pi_ref,
                                     std::span<const Token> prefix,
                                     std::span<const Token> response_no_eos,
                                     bool is_preferred, const RewardConfig& cfg) {
    std::vector<Token> full(response_no_eos.begin(), response_no_eos.end());
    full.push_back(pi_ref.spec().eos);
    const int n = static_cast<int>(full.size());
    std::vector<double> out(static_cast<std::size_t>(n));
    for (int k = 1; k <= n; ++k) {
        const double ref_value = ref_token_log_reward(pi_ref, prefix, full, k, cfg.gamma);
        out[static_cast<std::size_t>(k - 1)] =
            total_token_log_reward(ref_value, k == n, is_preferred, cfg);
    }
    return out;
}

}  // namespace

ObjectiveLoss::ObjectiveLoss(LossConfig cfg, const Vocab& vocab, PolicySpec spec,
                             NeuralArch arch, std::vector<EncodedPair> batch,
                             std::optional<ParamVector> ref_params)
    : cfg_(cfg), vocab_(vocab), spec_(spec), arch_(arch) {
    cfg_.validate();
    spec_.validate();
    if (batch.empty()) throw ValidationError("objective batch must be nonempty");
    if (cfg_.method != Method::sft) {
        if (!ref_params)
            throw ConfigError("method '" + std::string(to_string(cfg_.method)) +
                              "' requires reference policy parameters");
        pi_ref_.emplace(spec_, arch_, std::move(*ref_params));
    }

    pairs_.reserve(batch.size());
    for (const auto& pair : batch) {
        PairData pd;
        pd.prefix = vocab_.prompt_context(pair.prompt);
        pd.chosen = pair.chosen;
        pd.rejected = pair.rejected;
        if (cfg_.method == Method::dpo || cfg_.method == Method::ipo) {
            std::vector<Token> plus(pd.chosen);
            plus.push_back(vocab_.eos());
            std::vector<Token> minus(pd.rejected);
            minus.push_back(vocab_.eos());
            pd.ref_chosen_logp = seq_logprob(*pi_ref_, pd.prefix, plus);
            pd.ref_rejected_logp = seq_logprob(*pi_ref_, pd.prefix, minus);
        }
        if (cfg_.method == Method::gdpo) {
            pd.chosen_log_reward =
                log_reward_array(*pi_ref_, pd.prefix, pd.chosen, true, cfg_.reward);
            pd.rejected_log_reward =
                log_reward_array(*pi_ref_, pd.prefix, pd.rejected, false, cfg_.reward);
        }
        pairs_.push_back(std::move(pd));
    }
}

std::string_view ObjectiveLoss::name() const { return to_string(cfg_.method); }

double ObjectiveLoss::value(const ParamVector& params) const {
    return evaluate(params, nullptr);
}

double ObjectiveLoss::value_and_grad(const ParamVector& params,
                                     ParamVector& grad) const {
    if (grad.size() != params.size()) grad.assign(params.size(), 0.0);
    return evaluate(params, &grad);
}

double ObjectiveLoss::mean_margin(const ParamVector& params) const {
    NeuralPolicy pi_hat(spec_, arch_, params);
    double total = 0.0;
    for (const auto& pd : pairs_) {
        std::vector<Token> plus(pd.chosen);
        plus.push_back(vocab_.eos());
        std::vector<Token> minus(pd.rejected);
        minus.push_back(vocab_.eos());
        total += seq_logprob(pi_hat, pd.prefix, plus) -
                 seq_logprob(pi_hat, pd.prefix, minus);
    }
    return total / static_cast<double>(pairs_.size());
}

double ObjectiveLoss::evaluate(const ParamVector& params, ParamVector* grad) const {
    NeuralPolicy pi_hat(spec_, arch_, params);
    const double inv_b = 1.0 / static_cast<double>(pairs_.size());
    const Token eos = vocab_.eos();
    SlotAccumulator acc(spec_.vocab_size);

    // Walks one response chain, returning its sequence log-prob and the
    // per-step (context, token) slots.
    struct Step {
        std::size_t ctx_len;
        int depth;
        Token token;
    };
    std::vector<Token> ctx;
    std::vector<Step> steps;
    auto walk = [&](std::span<const Token> prefix, std::span<const Token> response_no_eos,
                    std::vector<double>* logp_out, std::vector<double>* eosl_out) {
        ctx.assign(prefix.begin(), prefix.end());
        steps.clear();
        std::vector<Token> full(response_no_eos.begin(), response_no_eos.end());
        full.push_back(eos);
        const int n = static_cast<int>(full.size());
        if (logp_out) logp_out->resize(static_cast<std::size_t>(n));
        if (eosl_out) eosl_out->resize(static_cast<std::size_t>(n));
        double total = 0.0;
        for (int t = 0; t <= n; ++t) {
            if (t == n && !eosl_out) break;
            auto dist = pi_hat.next_logprobs(ctx, t);
            if (t < n) {
                const Token tok = full[static_cast<std::size_t>(t)];
                total += dist[static_cast<std::size_t>(tok)];
                steps.push_back({ctx.size(), t, tok});
                if (logp_out) (*logp_out)[static_cast<std::size_t>(t)] = dist[static_cast<std::size_t>(tok)];
            }
            if (t >= 1 && eosl_out)
                (*eosl_out)[static_cast<std::size_t>(t - 1)] = dist[static_cast<std::size_t>(eos)];
            if (t < n) ctx.push_back(full[static_cast<std::size_t>(t)]);
        }
        return total;
    };

    double loss = 0.0;
    std::vector<double> logp, eosl;
    for (const auto& pd : pairs_) {
        switch (cfg_.method) {
            case Method::sft: {
                const double lp = walk(pd.prefix, pd.chosen, nullptr, nullptr);
                loss += -lp * inv_b;
                if (grad)
                    for (const auto& s : steps)
                        acc.add(std::span<const Token>(ctx.data(), s.ctx_len), s.depth,
                                s.token, -inv_b);
                break;
            }
            case Method::dpo:
            case Method::ipo:
            case Method::cpo:
            case Method::slic:
            case Method::orpo: {
                const double lplus = walk(pd.prefix, pd.chosen, nullptr, nullptr);
                auto steps_plus = steps;
                auto ctx_plus = ctx;
                const double lminus = walk(pd.prefix, pd.rejected, nullptr, nullptr);
                const auto pe = eval_pairwise(
                    cfg_.method, lplus, lminus, pd.ref_chosen_logp, pd.ref_rejected_logp,
                    static_cast<double>(pd.chosen.size() + 1),
                    static_cast<double>(pd.rejected.size() + 1), cfg_);
                loss += pe.value * inv_b;
                if (grad) {
                    for (const auto& s : steps_plus)
                        acc.add(std::span<const Token>(ctx_plus.data(), s.ctx_len), s.depth,
                                s.token, pe.d_lplus * inv_b);
                    for (const auto& s : steps)
                        acc.add(std::span<const Token>(ctx.data(), s.ctx_len), s.depth,
                                s.token, pe.d_lminus * inv_b);
                }
                break;
            }
            case Method::gdpo: {
                for (int side = 0; side < 2; ++side) {
                    const auto& resp = side == 0 ? pd.chosen : pd.rejected;
                    const auto& logr = side == 0 ? pd.chosen_log_reward : pd.rejected_log_reward;
                    walk(pd.prefix, resp, &logp, &eosl);
                    const int n = static_cast<int>(logp.size());
                    // ctx now holds prefix + full response; c_t is its prefix
                    // of length |prefix| + t.
                    const std::size_t base = pd.prefix.size();
                    for (int j = 0; j + 1 < n; ++j) {
                        const std::size_t ju = static_cast<std::size_t>(j);
                        const double r = (logr[ju] - eosl[ju]) - (logr[ju + 1] - eosl[ju + 1]) +
                                         logp[ju + 1];
                        loss += r * r * inv_b;
                        if (grad) {
                            const double coef = 2.0 * r * inv_b;
                            auto c1 = std::span<const Token>(ctx.data(), base + ju + 1);
                            auto c2 = std::span<const Token>(ctx.data(), base + ju + 2);
                            acc.add(c1, j + 1, eos, -coef);
                            acc.add(c2, j + 2, eos, coef);
                            acc.add(c1, j + 1, ctx[base + ju + 1], coef);
                        }
                    }
                }
                break;
            }
        }
    }

    if (grad) acc.apply(pi_hat, *grad);
    return loss;
}

}  // namespace gdpo
