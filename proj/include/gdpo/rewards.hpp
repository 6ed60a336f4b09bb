#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "gdpo/policy.hpp"
#include "gdpo/task.hpp"

namespace gdpo {

struct RewardConfig {
    double alpha = 5.0;                  // preference tempering
    double gamma = 0.5;                  // EOS log-prob tempering
    double eps_pref = std::exp(-10.0);   // floor replacing p = 0 for rejected EOS

    void validate() const;
};

// Per-position arrays for one response y_1..y_{n-1} plus EOS at n (stored
// 0-indexed). mask marks the valid positions within a padded batch.
struct TokenRewardTrack {
    std::vector<double> logp;        // log pi_hat(y_k | x, y_{1:k-1})
    std::vector<double> eos_logp;    // log pi_hat(EOS | x, y_{1:k})
    std::vector<double> log_reward;  // total token log-reward
    std::vector<std::uint8_t> mask;

    std::size_t size() const { return logp.size(); }
};

// Token-wise reference log reward at 1-based position k:
//   log pi_ref(y_k | x, y_{1:k-1}) + exp((1/gamma) * log pi_ref(EOS | x, y_{1:k}))
// `response_with_eos` holds the full response including trailing EOS; `prefix`
// is the conditioning context in front of it.
double ref_token_log_reward(const Policy& pi_ref, std::span<const Token> prefix,
                            std::span<const Token> response_with_eos, int k,
                            double gamma);

// Adds the tempered preference term at the EOS position: 0 for preferred
// responses (log 1), (1/alpha) * log(eps_pref) for rejected ones. Non-EOS
// positions pass the reference value through unchanged.
double total_token_log_reward(double ref_value, bool is_eos_position,
                              bool is_preferred, const RewardConfig& cfg);

// Assembles the track for one response. pi_ref is treated as a constant.
TokenRewardTrack build_track(const Policy& pi_hat, const Policy& pi_ref,
                             std::span<const Token> prefix,
                             std::span<const Token> response_no_eos,
                             bool is_preferred, const RewardConfig& cfg);

struct TrackPair {
    TokenRewardTrack chosen;
    TokenRewardTrack rejected;
};

TrackPair build_tracks(const Policy& pi_hat, const Policy& pi_ref,
                       const EncodedPair& pair, const Vocab& vocab,
                       const RewardConfig& cfg);

}  // namespace gdpo
