#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gdpo/numerics.hpp"
#include "gdpo/policy.hpp"
#include "gdpo/rewards.hpp"
#include "gdpo/task.hpp"

namespace gdpo {

enum class Method { sft, dpo, ipo, cpo, slic, orpo, gdpo };

inline constexpr Method kAllMethods[] = {Method::sft, Method::dpo,  Method::ipo,
                                         Method::cpo, Method::slic, Method::orpo,
                                         Method::gdpo};

std::string_view to_string(Method m);
Method method_from_string(std::string_view s);
bool is_pairwise(Method m);  // dpo/ipo/cpo/slic/orpo

struct LossConfig {
    Method method = Method::gdpo;
    double beta = 0.1;         // dpo/ipo/cpo/slic link coefficient
    double lambda_cpo = 1.0;   // shared SFT-regularizer weight for cpo and slic
    double delta_slic = 1.0;   // slic hinge margin
    double lambda_orpo = 0.05; // orpo odds-ratio weight
    RewardConfig reward;       // gdpo

    void validate() const;
};

// Detailed-balance loss of one response track:
//   log_f[k]    = log_reward[k] - eos_logp[k]
//   residual[k] = log_f[k] - log_f[k+1] + logp[k+1]      (k = 1..n-1)
//   loss        = sum of squared residuals over valid consecutive positions
double gdpo_db_loss(const TokenRewardTrack& track);

// Mean over responses of the per-response sum.
double gdpo_db_batch_loss(std::span<const TokenRewardTrack> tracks);

// Mean over the batch of -log pi_hat(chosen | prompt), EOS step included.
double sft_loss(const Policy& pi_hat, const Vocab& vocab,
                std::span<const EncodedPair> batch);

// The offline pairwise baselines. With L = log pi_hat(y | x), R likewise under
// pi_ref, h = (L+ - R+) - (L- - R-), m = L+ - L-, |y| = token count incl. EOS:
//   dpo:  -log sigmoid(beta * h)
//   ipo:  (h - 1/(2 beta))^2
//   cpo:  -log sigmoid(beta * m) - lambda_cpo * L+ / |y+|
//   slic: max(0, delta_slic - beta * m) - lambda_cpo * L+ / |y+|
//   orpo: -L+/|y+| + lambda_orpo * (-log sigmoid(log OR))
// where OR is the odds ratio of the length-normalized sequence probabilities
// (clamped below 0 so the odds stay finite). Mean over the batch.
double pairwise_baseline_loss(Method method, const Policy& pi_hat,
                              const Policy& pi_ref, const Vocab& vocab,
                              std::span<const EncodedPair> batch,
                              const LossConfig& cfg);

// Any of the seven objectives as a differentiable function of the policy
// parameters. pi_ref (required for every method except sft) is frozen; its
// contribution to rewards and log-ratio anchors is precomputed once.
class ObjectiveLoss final : public DifferentiableLoss {
public:
    ObjectiveLoss(LossConfig cfg, const Vocab& vocab, PolicySpec spec,
                  NeuralArch arch, std::vector<EncodedPair> batch,
                  std::optional<ParamVector> ref_params);

    std::string_view name() const override;
    double value(const ParamVector& params) const override;
    double value_and_grad(const ParamVector& params, ParamVector& grad) const override;

    // Mean of L+ - L- over the batch under the given parameters.
    double mean_margin(const ParamVector& params) const;

private:
    struct PairData {
        std::vector<Token> prefix;            // prompt tokens + SEP
        std::vector<Token> chosen, rejected;  // no EOS
        double ref_chosen_logp = 0.0;
        double ref_rejected_logp = 0.0;
        std::vector<double> chosen_log_reward;    // gdpo only
        std::vector<double> rejected_log_reward;  // gdpo only
    };

    double evaluate(const ParamVector& params, ParamVector* grad) const;

    LossConfig cfg_;
    Vocab vocab_;
    PolicySpec spec_;
    NeuralArch arch_;
    std::vector<PairData> pairs_;
    std::optional<NeuralPolicy> pi_ref_;
};

}  // namespace gdpo
