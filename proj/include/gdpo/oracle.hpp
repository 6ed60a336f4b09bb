#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "gdpo/policy.hpp"

namespace gdpo {

// Fully enumerable token MDP: terminals are all letter strings of length
// 1..max_len followed by EOS (EOS is disallowed at depth 0 and forced at
// max_len). Every terminal carries a positive reward.
struct EnumMdp {
    std::string letters;                   // regular tokens, <= 5 distinct chars
    int max_len = 2;                       // <= 5
    std::map<std::string, double> reward;  // one entry per terminal string

    int vocab_size() const { return static_cast<int>(letters.size()) + 1; }
    Token eos() const { return static_cast<Token>(letters.size()); }
    PolicySpec policy_spec() const {
        return {vocab_size(), eos(), max_len, MaskMode::standard};
    }

    void validate() const;  // DomainError on nonpositive rewards

    std::vector<Token> encode(std::string_view s) const;
    std::string decode(std::span<const Token> tokens) const;

    // Prefix strings of length 0..max_len-1 (the states with a free policy
    // choice), shortest first, lexicographic within a length.
    std::vector<std::string> decision_states() const;
    std::vector<std::string> terminals() const;

    static EnumMdp load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;
};

// Deterministic random instance with rewards uniform in [reward_lo, reward_hi].
EnumMdp random_mdp(int n_letters, int max_len, std::uint64_t seed,
                   double reward_lo = 0.5, double reward_hi = 5.0);

// Exact state flows F(s) = R(s)[s terminable] + sum of child flows, total
// flow Z = F(root), and the reward-proportional target distribution R/Z.
struct FlowTable {
    std::map<std::string, double> flow;    // every prefix, root included
    double z = 0.0;
    std::map<std::string, double> target;  // terminal -> R/Z
};

FlowTable exact_flows(const EnumMdp& mdp);

// The flow-consistent policy: pi*(s+a | s) = F(s+a)/F(s), pi*(EOS | s) = R(s)/F(s).
TabularPolicy optimal_policy(const EnumMdp& mdp, const FlowTable& flows);

// Exact product of step probabilities (EOS emission included) per terminal.
std::map<std::string, double> policy_terminal_dist(const Policy& policy,
                                                   const EnumMdp& mdp);

// 1/2 * sum |p - q| over a shared support.
double tv_distance(const std::map<std::string, double>& p,
                   const std::map<std::string, double>& q);

struct DbTrainOptions {
    long steps = 40000;
    double lr_max = 0.05;
    double warmup_ratio = 0.05;
    double target_loss = 1e-10;
};

struct DbTrainResult {
    TabularPolicy policy;
    double final_loss = 0.0;
    long steps_used = 0;
    double log_z = 0.0;  // trained root log-flow
};

// Total squared DB residual of an arbitrary policy over every tree edge,
// with the root flow supplied as log_z. Zero exactly at the flow-consistent
// policy with log_z = log Z.
double db_residual(const EnumMdp& mdp, const Policy& policy, double log_z);

// Trains the textbook detailed-balance objective over every edge of the
// enumerated tree, with F parameterized through the policy's EOS probability
// (F(s) = R(s)/pi(EOS|s)) and a free log-flow parameter at the root. Stops
// when the total squared residual drops below target_loss; throws
// ConvergenceError (carrying the final residual) if the budget runs out.
DbTrainResult train_db_exact(const EnumMdp& mdp, std::uint64_t seed,
                             const DbTrainOptions& opts = {});

struct OracleReport {
    double z = 0.0;
    double final_loss = 0.0;
    long steps_used = 0;
    double tv = 0.0;
    // terminal -> (target probability, trained policy probability)
    std::map<std::string, std::pair<double, double>> terminals;
};

OracleReport oracle_check(const EnumMdp& mdp, std::uint64_t seed,
                          const DbTrainOptions& opts = {});

void save_oracle_report(const std::filesystem::path& path, const OracleReport& report);

}  // namespace gdpo
