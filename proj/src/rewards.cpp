#include "gdpo/rewards.hpp"

#include <cmath>

#include "gdpo/errors.hpp"

namespace gdpo {

void RewardConfig::validate() const {
    if (!(alpha > 0)) throw ConfigError("reward alpha must be > 0");
    if (!(gamma > 0) || gamma > 1) throw ConfigError("reward gamma must be in (0, 1]");
    if (!(eps_pref > 0) || !(eps_pref < 1))
        throw ConfigError("reward eps_pref must be in (0, 1)");
}

double ref_token_log_reward(const Policy& pi_ref, std::span<const Token> prefix,
                            std::span<const Token> response_with_eos, int k,
                            double gamma) {
    const int n = static_cast<int>(response_with_eos.size());
    if (k < 1 || k > n)
        throw ValidationError("ref_token_log_reward: position k out of range 1..n");
    if (!(gamma > 0) || gamma > 1) throw ConfigError("gamma must be in (0, 1]");

    std::vector<Token> ctx(prefix.begin(), prefix.end());
    ctx.insert(ctx.end(), response_with_eos.begin(), response_with_eos.begin() + (k - 1));
    const Token y_k = response_with_eos[static_cast<std::size_t>(k - 1)];
    auto dist_before = pi_ref.next_logprobs(ctx, k - 1);
    const double logp_token = dist_before[static_cast<std::size_t>(y_k)];

    ctx.push_back(y_k);
    auto dist_after = pi_ref.next_logprobs(ctx, k);
    const double logp_eos = dist_after[static_cast<std::size_t>(pi_ref.spec().eos)];

    if (logp_token <= kMaskSentinel / 2)
        throw NumericError("ref_token_log_reward: reference log-prob is masked at position " +
                           std::to_string(k));
    return logp_token + std::exp(logp_eos / gamma);
}

double total_token_log_reward(double ref_value, bool is_eos_position,
                              bool is_preferred, const RewardConfig& cfg) {
    cfg.validate();
    if (!std::isfinite(ref_value))
        throw NumericError("total_token_log_reward: non-finite reference value");
    if (!is_eos_position || is_preferred) return ref_value;
    return ref_value + std::log(cfg.eps_pref) / cfg.alpha;
}

TokenRewardTrack build_track(const Policy& pi_hat, const Policy& pi_ref,
                             std::span<const Token> prefix,
                             std::span<const Token> response_no_eos,
                             bool is_preferred, const RewardConfig& cfg) {
    cfg.validate();
    if (response_no_eos.empty())
        throw ShapeError("build_track: response must be nonempty");

    const Token eos = pi_hat.spec().eos;
    std::vector<Token> full(response_no_eos.begin(), response_no_eos.end());
    full.push_back(eos);
    const int n = static_cast<int>(full.size());

    TokenRewardTrack track;
    track.logp.resize(static_cast<std::size_t>(n));
    track.eos_logp.resize(static_cast<std::size_t>(n));
    track.log_reward.resize(static_cast<std::size_t>(n));
    track.mask.assign(static_cast<std::size_t>(n), 1);

    // One distribution per chain context c_t = prefix; y_{1:t}, t = 0..n.
    std::vector<Token> ctx(prefix.begin(), prefix.end());
    for (int t = 0; t <= n; ++t) {
        auto dist = pi_hat.next_logprobs(ctx, t);
        if (t < n) track.logp[static_cast<std::size_t>(t)] = dist[static_cast<std::size_t>(full[static_cast<std::size_t>(t)])];
        if (t >= 1) track.eos_logp[static_cast<std::size_t>(t - 1)] = dist[static_cast<std::size_t>(eos)];
        if (t < n) ctx.push_back(full[static_cast<std::size_t>(t)]);
    }

    for (int k = 1; k <= n; ++k) {
        const double ref_value = ref_token_log_reward(pi_ref, prefix, full, k, cfg.gamma);
        track.log_reward[static_cast<std::size_t>(k - 1)] =
            total_token_log_reward(ref_value, k == n, is_preferred, cfg);
    }
    return track;
}

TrackPair build_tracks(const Policy& pi_hat, const Policy& pi_ref,
                       const EncodedPair& pair, const Vocab& vocab,
                       const RewardConfig& cfg) {
    const auto prefix = vocab.prompt_context(pair.prompt);
    return {build_track(pi_hat, pi_ref, prefix, pair.chosen, true, cfg),
            build_track(pi_hat, pi_ref, prefix, pair.rejected, false, cfg)};
}

}  // namespace gdpo
