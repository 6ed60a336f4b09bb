#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gdpo/vocab.hpp"

namespace gdpo {

enum class TaskKind { modes, unique_answer };

std::string_view to_string(TaskKind kind);
TaskKind task_kind_from_string(std::string_view s);

// Synthetic preference task: either "modes" (a fixed set of target response
// strings, all valid for every prompt) or "unique-answer" (one target derived
// from the prompt).
struct TaskSpec {
    TaskKind kind = TaskKind::modes;
    std::string alphabet;
    std::vector<std::string> mode_strings;  // kind=modes only, M >= 4
    int prompt_len = 4;
    int max_response_len = 12;
    double length_penalty = 0.1;  // weight of the |len(r) - len(target)| term
    std::uint64_t seed = 1;

    Vocab vocab() const { return Vocab::from_alphabet(alphabet); }
    void validate() const;

    static TaskSpec load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;
};

// Deduplicated prompt characters in first-occurrence order, truncated to
// max_response_len. The target answer of the unique-answer task.
std::string unique_answer_target(const TaskSpec& task, std::string_view prompt);

// Similarity of a response to one specific mode string:
//   lcp(response, mode) - length_penalty * |len(response) - len(mode)|
double mode_similarity(const TaskSpec& task, std::string_view response,
                       std::string_view mode);

// Ground-truth scorer standing in for human preference. Deterministic.
// modes: max over modes of mode_similarity; unique-answer: count of matching
// positions against the prompt-derived target minus the length penalty.
double true_score(const TaskSpec& task, std::string_view prompt,
                  std::string_view response);

struct PreferencePair {
    std::string prompt;
    std::string chosen;
    std::string rejected;

    bool operator==(const PreferencePair&) const = default;
};

// Token form of a pair; responses carry no EOS (ops append it).
struct EncodedPair {
    std::vector<Token> prompt;
    std::vector<Token> chosen;
    std::vector<Token> rejected;
};

EncodedPair encode_pair(const Vocab& vocab, const PreferencePair& pair);

// Synthetic pair generation. Candidates come from a noisy proposal (50% a
// mode/target string with up to 2 random substitutions, 50% a uniformly
// random string of random length <= L_max); the higher-scoring candidate is
// labeled chosen and exact ties are resampled. Deterministic in
// (task, n_pairs, seed).
std::vector<PreferencePair> gen_pairs(const TaskSpec& task, int n_pairs,
                                      std::uint64_t seed);

// Random prompts from the same stream family (for evaluation sets).
std::vector<std::string> gen_prompts(const TaskSpec& task, int n_prompts,
                                     std::uint64_t seed);

// Line-delimited dataset records {"prompt","chosen","rejected"}, UTF-8, one
// record per line. The loader validates characters against the task alphabet
// and enforces the pair invariants; errors carry the 1-based line number.
void save_pairs(const std::filesystem::path& path,
                std::span<const PreferencePair> pairs);
std::vector<PreferencePair> load_pairs(const std::filesystem::path& path,
                                       const TaskSpec& task);

void validate_pair(const TaskSpec& task, const PreferencePair& pair,
                   long line_no = -1);

void save_prompts(const std::filesystem::path& path,
                  std::span<const std::string> prompts);
// One prompt per line; character validation happens where prompts get used.
std::vector<std::string> load_prompts(const std::filesystem::path& path);

}  // namespace gdpo
