#include "gdpo/task.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <json.hpp>

#include "gdpo/errors.hpp"
#include "gdpo/rng.hpp"

namespace gdpo {

using nlohmann::json;

std::string_view to_string(TaskKind kind) {
    return kind == TaskKind::modes ? "modes" : "unique-answer";
}

TaskKind task_kind_from_string(std::string_view s) {
    if (s == "modes") return TaskKind::modes;
    if (s == "unique-answer") return TaskKind::unique_answer;
    throw ConfigError("unknown task kind '" + std::string(s) + "'");
}

void TaskSpec::validate() const {
    Vocab v = vocab();  // checks alphabet itself
    if (max_response_len < 1) throw ValidationError("max_response_len must be >= 1");
    if (prompt_len < 1) throw ValidationError("prompt_len must be >= 1");
    if (length_penalty < 0) throw ValidationError("length_penalty must be >= 0");
    if (kind == TaskKind::modes) {
        if (mode_strings.size() < 4)
            throw ValidationError("modes task needs at least 4 mode strings");
        std::set<std::string> seen;
        for (const auto& m : mode_strings) {
            if (m.empty()) throw ValidationError("mode strings must be nonempty");
            if (static_cast<int>(m.size()) > max_response_len)
                throw ValidationError("mode string '" + m + "' exceeds max_response_len");
            for (char c : m)
                if (!v.contains(c) || v.is_special(v.token_of(c)))
                    throw ValidationError("mode string '" + m + "' leaves the alphabet");
            if (!seen.insert(m).second)
                throw ValidationError("duplicate mode string '" + m + "'");
        }
    }
}

TaskSpec TaskSpec::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open task file " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError("task file " + path.string() + ": " + e.what());
    }
    TaskSpec t;
    try {
        t.kind = task_kind_from_string(j.at("kind").get<std::string>());
        t.alphabet = j.at("alphabet").get<std::string>();
        if (j.contains("modes")) t.mode_strings = j["modes"].get<std::vector<std::string>>();
        t.prompt_len = j.value("prompt_len", t.prompt_len);
        t.max_response_len = j.value("max_response_len", t.max_response_len);
        t.length_penalty = j.value("length_penalty", t.length_penalty);
        t.seed = j.value("seed", t.seed);
    } catch (const json::exception& e) {
        throw ParseError("task file " + path.string() + ": " + e.what());
    }
    t.validate();
    return t;
}

void TaskSpec::save(const std::filesystem::path& path) const {
    validate();
    json j{{"kind", std::string(to_string(kind))},
           {"alphabet", alphabet},
           {"prompt_len", prompt_len},
           {"max_response_len", max_response_len},
           {"length_penalty", length_penalty},
           {"seed", seed}};
    if (kind == TaskKind::modes) j["modes"] = mode_strings;
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write task file " + path.string());
    out << j.dump(2) << '\n';
}

std::string unique_answer_target(const TaskSpec& task, std::string_view prompt) {
    std::string target;
    for (char c : prompt)
        if (target.find(c) == std::string::npos) target.push_back(c);
    if (static_cast<int>(target.size()) > task.max_response_len)
        target.resize(static_cast<std::size_t>(task.max_response_len));
    return target;
}

static std::size_t common_prefix_len(std::string_view a, std::string_view b) {
    std::size_t n = std::min(a.size(), b.size());
    std::size_t i = 0;
    while (i < n && a[i] == b[i]) ++i;
    return i;
}

double mode_similarity(const TaskSpec& task, std::string_view response,
                       std::string_view mode) {
    double lcp = static_cast<double>(common_prefix_len(response, mode));
    double len_gap = std::abs(static_cast<double>(response.size()) -
                              static_cast<double>(mode.size()));
    return lcp - task.length_penalty * len_gap;
}

double true_score(const TaskSpec& task, std::string_view prompt,
                  std::string_view response) {
    if (response.empty()) throw ValidationError("true_score: response must be nonempty");
    if (static_cast<int>(response.size()) > task.max_response_len)
        throw ValidationError("true_score: response exceeds max_response_len");
    if (task.kind == TaskKind::modes) {
        double best = -1e300;
        for (const auto& m : task.mode_strings)
            best = std::max(best, mode_similarity(task, response, m));
        return best;
    }
    std::string target = unique_answer_target(task, prompt);
    std::size_t n = std::min(response.size(), target.size());
    double matches = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (response[i] == target[i]) matches += 1;
    double len_gap = std::abs(static_cast<double>(response.size()) -
                              static_cast<double>(target.size()));
    return matches - task.length_penalty * len_gap;
}

EncodedPair encode_pair(const Vocab& vocab, const PreferencePair& pair) {
    return {vocab.encode(pair.prompt), vocab.encode(pair.chosen),
            vocab.encode(pair.rejected)};
}

static std::string random_string(Xoshiro256ss& rng, const std::string& alphabet,
                                 int len) {
    std::string s;
    s.reserve(static_cast<std::size_t>(len));
    for (int i = 0; i < len; ++i)
        s.push_back(alphabet[rng.below(alphabet.size())]);
    return s;
}

// Noisy candidate proposal: 50% a target string with up to 2 random
// single-character substitutions, 50% a uniformly random string of uniform
// random length in 1..L_max.
static std::string draw_candidate(const TaskSpec& task, Xoshiro256ss& rng,
                                  std::string_view prompt) {
    if (rng.uniform() < 0.5) {
        std::string base;
        if (task.kind == TaskKind::modes) {
            base = task.mode_strings[rng.below(task.mode_strings.size())];
        } else {
            base = unique_answer_target(task, prompt);
        }
        int edits = rng.uniform_int(0, 2);
        for (int e = 0; e < edits; ++e) {
            std::size_t pos = rng.below(base.size());
            base[pos] = task.alphabet[rng.below(task.alphabet.size())];
        }
        return base;
    }
    int len = rng.uniform_int(1, task.max_response_len);
    return random_string(rng, task.alphabet, len);
}

std::vector<PreferencePair> gen_pairs(const TaskSpec& task, int n_pairs,
                                      std::uint64_t seed) {
    task.validate();
    if (n_pairs < 1) throw ValidationError("n_pairs must be >= 1");
    Xoshiro256ss rng(stream_seed(seed, "gen-pairs", 0));
    std::vector<PreferencePair> out;
    out.reserve(static_cast<std::size_t>(n_pairs));
    for (int i = 0; i < n_pairs; ++i) {
        std::string prompt = random_string(rng, task.alphabet, task.prompt_len);
        PreferencePair pair;
        pair.prompt = prompt;
        while (true) {
            std::string a = draw_candidate(task, rng, prompt);
            std::string b = draw_candidate(task, rng, prompt);
            double sa = true_score(task, prompt, a);
            double sb = true_score(task, prompt, b);
            if (sa == sb) continue;  // exact ties are resampled
            pair.chosen = sa > sb ? a : b;
            pair.rejected = sa > sb ? b : a;
            break;
        }
        out.push_back(std::move(pair));
    }
    return out;
}

std::vector<std::string> gen_prompts(const TaskSpec& task, int n_prompts,
                                     std::uint64_t seed) {
    task.validate();
    if (n_prompts < 1) throw ValidationError("n_prompts must be >= 1");
    Xoshiro256ss rng(stream_seed(seed, "gen-prompts", 0));
    std::vector<std::string> out;
    out.reserve(static_cast<std::size_t>(n_prompts));
    for (int i = 0; i < n_prompts; ++i)
        out.push_back(random_string(rng, task.alphabet, task.prompt_len));
    return out;
}

static void check_chars(const TaskSpec& task, std::string_view field,
                        std::string_view text, long line_no) {
    for (char c : text) {
        if (task.alphabet.find(c) == std::string::npos) {
            std::string where = line_no >= 0 ? "line " + std::to_string(line_no) + ": " : "";
            throw VocabError(where + std::string(field) + " contains out-of-vocab character '" +
                             std::string(1, c) + "'");
        }
    }
}

void validate_pair(const TaskSpec& task, const PreferencePair& pair, long line_no) {
    std::string where = line_no >= 0 ? "line " + std::to_string(line_no) + ": " : "";
    check_chars(task, "prompt", pair.prompt, line_no);
    check_chars(task, "chosen", pair.chosen, line_no);
    check_chars(task, "rejected", pair.rejected, line_no);
    if (pair.chosen.empty() || pair.rejected.empty())
        throw ValidationError(where + "responses must be nonempty");
    if (pair.chosen == pair.rejected)
        throw ValidationError(where + "chosen and rejected must differ");
    if (static_cast<int>(pair.chosen.size()) > task.max_response_len ||
        static_cast<int>(pair.rejected.size()) > task.max_response_len)
        throw ValidationError(where + "response exceeds max_response_len");
}

void save_pairs(const std::filesystem::path& path,
                std::span<const PreferencePair> pairs) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write dataset " + path.string());
    for (const auto& p : pairs) {
        json j{{"prompt", p.prompt}, {"chosen", p.chosen}, {"rejected", p.rejected}};
        out << j.dump() << '\n';
    }
}

std::vector<PreferencePair> load_pairs(const std::filesystem::path& path,
                                       const TaskSpec& task) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open dataset " + path.string());
    std::vector<PreferencePair> out;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
        }
        PreferencePair p;
        for (const char* field : {"prompt", "chosen", "rejected"}) {
            if (!j.contains(field) || !j[field].is_string())
                throw ParseError("line " + std::to_string(line_no) +
                                 ": missing string field \"" + field + "\"");
        }
        p.prompt = j["prompt"].get<std::string>();
        p.chosen = j["chosen"].get<std::string>();
        p.rejected = j["rejected"].get<std::string>();
        validate_pair(task, p, line_no);
        out.push_back(std::move(p));
    }
    return out;
}

void save_prompts(const std::filesystem::path& path,
                  std::span<const std::string> prompts) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write prompts " + path.string());
    for (const auto& p : prompts) out << p << '\n';
}

std::vector<std::string> load_prompts(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open prompts " + path.string());
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(line);
    return out;
}

}  // namespace gdpo
