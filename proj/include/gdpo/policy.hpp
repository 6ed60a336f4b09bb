#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "gdpo/params.hpp"
#include "gdpo/vocab.hpp"

namespace gdpo {

// Masked log-probabilities use this value instead of -inf so arithmetic stays
// finite; exp(kMaskSentinel) underflows to exactly 0 in double precision.
inline constexpr double kMaskSentinel = -1e30;

enum class MaskMode {
    standard,  // EOS masked at response depth 0, forced at depth >= L_max
    none,      // no masking (test policies and hand calculations)
};

struct PolicySpec {
    int vocab_size = 0;
    Token eos = -1;
    int max_response_len = 1;
    MaskMode mask_mode = MaskMode::standard;

    void validate() const;
};

// Autoregressive next-token policy over a token context. `response_depth` is
// the number of response tokens already in the context; the prefix before
// them (prompt + SEP, or nothing for bare MDPs) does not count.
class Policy {
public:
    virtual ~Policy() = default;

    const PolicySpec& spec() const { return spec_; }

    // Masked, normalized log-probabilities: logsumexp == 0, masked entries
    // exactly kMaskSentinel.
    std::vector<double> next_logprobs(std::span<const Token> ctx,
                                      int response_depth) const;

    // Unmasked, unnormalized logits.
    virtual void raw_logits(std::span<const Token> ctx,
                            std::span<double> out) const = 0;

protected:
    explicit Policy(PolicySpec spec);
    PolicySpec spec_;
};

// log pi(response | prefix) summed along the prefix chain, EOS step included.
// The response must end with EOS, contain it exactly once, and hold at least
// one real token before it.
double seq_logprob(const Policy& policy, std::span<const Token> prefix,
                   std::span<const Token> response_with_eos);

struct SamplingConfig {
    double temperature = 1.0;
    double top_p = 0.95;
    int max_len = 12;
    std::uint64_t seed = 0;

    void validate() const;
};

struct NucleusStep {
    std::vector<double> probs;   // temperature-scaled, full vocabulary
    std::vector<int> nucleus;    // token ids, descending probability (ties by id)
    double nucleus_mass = 0.0;
};

// Temperature scaling + nucleus selection for one step: smallest prefix of
// tokens sorted by descending probability (ties by ascending id) whose
// cumulative probability reaches top_p.
NucleusStep nucleus_from_logprobs(std::span<const double> logprobs,
                                  double temperature, double top_p);

// Nucleus sampling until EOS; EOS is forced once the response reaches
// min(cfg.max_len, policy max_response_len). Returns the response including
// the trailing EOS. Deterministic in (policy, prefix, cfg).
std::vector<Token> sample_response(const Policy& policy,
                                   std::span<const Token> prefix,
                                   const SamplingConfig& cfg);

// Exact policy: one logit row per stored context. Lookup key is the full
// token sequence; unknown contexts are an error.
class TabularPolicy final : public Policy {
public:
    explicit TabularPolicy(PolicySpec spec);

    void set_logits(std::span<const Token> ctx, std::vector<double> logits);
    bool has_context(std::span<const Token> ctx) const;
    std::size_t table_size() const { return table_.size(); }

    // Same raw logits at every context reachable under `prefix` within the
    // response depth bound (EOS continuations included).
    static TabularPolicy constant(PolicySpec spec, std::span<const Token> prefix,
                                  int depth_bound, std::span<const double> logits);

    // Snapshot of `src` on every context under `prefix` up to depth_bound:
    // stores src.next_logprobs so the copy reproduces src exactly.
    static TabularPolicy distill(const Policy& src, std::span<const Token> prefix,
                                 int depth_bound);

    void raw_logits(std::span<const Token> ctx,
                    std::span<double> out) const override;

    static std::string key_of(std::span<const Token> ctx);

private:
    std::unordered_map<std::string, std::vector<double>> table_;
};

// Small MLP policy: the last `context_window` tokens are embedded and
// concatenated (zero vectors pad short contexts), one tanh hidden layer,
// linear output to V logits.
struct NeuralArch {
    int vocab_size = 0;
    int embed_dim = 16;
    int context_window = 8;
    int hidden_dim = 64;

    std::size_t n_params() const;
    // Flat layout: [embeddings | W1 | b1 | W2 | b2], all row-major.
    std::size_t embed_offset() const { return 0; }
    std::size_t w1_offset() const;
    std::size_t b1_offset() const;
    std::size_t w2_offset() const;
    std::size_t b2_offset() const;

    bool operator==(const NeuralArch&) const = default;
};

class NeuralPolicy final : public Policy {
public:
    NeuralPolicy(PolicySpec spec, NeuralArch arch, ParamVector params);

    static NeuralPolicy random_init(PolicySpec spec, NeuralArch arch,
                                    std::uint64_t seed);

    const NeuralArch& arch() const { return arch_; }
    const ParamVector& params() const { return params_; }
    void set_params(ParamVector params);

    void raw_logits(std::span<const Token> ctx,
                    std::span<double> out) const override;

    // Accumulates d(loss)/d(params) into `grad` given d(loss)/d(raw logits)
    // at this context. `grad` must already have n_params() entries.
    void backprop_logits(std::span<const Token> ctx,
                         std::span<const double> dlogits,
                         ParamVector& grad) const;

private:
    struct Activations {
        std::vector<double> input;   // k*d concatenated embeddings
        std::vector<double> hidden;  // tanh outputs
    };
    void forward(std::span<const Token> ctx, Activations& act,
                 std::span<double> logits) const;

    NeuralArch arch_;
    ParamVector params_;
};

}  // namespace gdpo
