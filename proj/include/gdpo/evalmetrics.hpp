#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "gdpo/task.hpp"

namespace gdpo {

inline constexpr int kEmbedBuckets = 4096;

// Deterministic trigram-hash embedding standing in for a sentence encoder:
// character trigrams of "^^" + response + "$$", FNV-1a hashed into 4096
// signed buckets (sign from the parity of the hash's set bits), L2-normalized.
std::vector<double> embed_response(std::string_view response);

// N sampled responses per prompt, file order preserved.
struct SampleSet {
    struct Entry {
        std::string prompt;
        std::vector<std::string> samples;
    };
    std::vector<Entry> entries;
};

SampleSet load_samples(const std::filesystem::path& path);
void save_samples(const std::filesystem::path& path, const SampleSet& samples);

struct MeanSe {
    double mean = 0.0;
    double se = 0.0;
};

// Mean cosine distance over unordered sample pairs, averaged over prompts,
// on a x100 scale.
double diversity_score(const SampleSet& samples);

// Score-based pairwise comparison against matched reference samples:
// win = 1 / 0.5 / 0 per sample, reported as mean and standard error of the
// mean, both x100.
MeanSe win_rate_proxy(const SampleSet& samples, const SampleSet& ref_samples,
                      const TaskSpec& task);

// Fraction of modes attained: a mode counts as covered when some sample's
// similarity to it comes within 0.5 of the mode's self-score.
double mode_coverage(const SampleSet& samples, const TaskSpec& task);

// Mean response token count (EOS excluded) with standard error.
MeanSe token_length_stats(const SampleSet& samples);

struct EvalReport {
    double diversity = 0.0;   // x100
    MeanSe win_rate;          // x100
    double mode_coverage = 0.0;
    MeanSe mean_tokens;
};

EvalReport evaluate_samples(const SampleSet& samples, const SampleSet& ref_samples,
                            const TaskSpec& task);

}  // namespace gdpo
