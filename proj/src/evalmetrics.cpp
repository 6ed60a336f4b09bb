#include "gdpo/evalmetrics.hpp"

#include <bit>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "gdpo/errors.hpp"
#include "gdpo/rng.hpp"

namespace gdpo {

using nlohmann::json;

std::vector<double> embed_response(std::string_view response) {
    if (response.empty()) throw ValidationError("embed_response: response must be nonempty");
    std::vector<double> v(kEmbedBuckets, 0.0);
    std::string padded = "^^" + std::string(response) + "$$";
    for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
        const std::uint64_t h = fnv1a64(std::string_view(padded).substr(i, 3));
        const std::size_t bucket = static_cast<std::size_t>(h % kEmbedBuckets);
        const double sign = (std::popcount(h) % 2 == 0) ? 1.0 : -1.0;
        v[bucket] += sign;
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0)
        throw NumericError("embed_response: degenerate zero embedding");
    for (double& x : v) x /= norm;
    return v;
}

SampleSet load_samples(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open samples file " + path.string());
    SampleSet out;
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
        if (!j.contains("prompt") || !j["prompt"].is_string() || !j.contains("samples") ||
            !j["samples"].is_array())
            throw ParseError("line " + std::to_string(line_no) +
                             ": expected {\"prompt\": str, \"samples\": [str, ...]}");
        SampleSet::Entry entry;
        entry.prompt = j["prompt"].get<std::string>();
        for (const auto& s : j["samples"]) {
            if (!s.is_string())
                throw ParseError("line " + std::to_string(line_no) + ": samples must be strings");
            entry.samples.push_back(s.get<std::string>());
        }
        out.entries.push_back(std::move(entry));
    }
    return out;
}

void save_samples(const std::filesystem::path& path, const SampleSet& samples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write samples file " + path.string());
    for (const auto& entry : samples.entries) {
        json j{{"prompt", entry.prompt}, {"samples", entry.samples}};
        out << j.dump() << '\n';
    }
}

double diversity_score(const SampleSet& samples) {
    if (samples.entries.empty()) throw ValidationError("diversity_score: empty sample set");
    double prompt_sum = 0.0;
    for (const auto& entry : samples.entries) {
        const std::size_t n = entry.samples.size();
        if (n < 2)
            throw ValidationError("diversity_score: need at least 2 samples per prompt");
        std::vector<std::vector<double>> embeds;
        embeds.reserve(n);
        for (const auto& s : entry.samples) embeds.push_back(embed_response(s));
        double pair_sum = 0.0;
        std::size_t pairs = 0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                double dot = 0.0;
                for (int b = 0; b < kEmbedBuckets; ++b) dot += embeds[i][static_cast<std::size_t>(b)] * embeds[j][static_cast<std::size_t>(b)];
                pair_sum += 1.0 - dot;
                ++pairs;
            }
        }
        prompt_sum += pair_sum / static_cast<double>(pairs);
    }
    return 100.0 * prompt_sum / static_cast<double>(samples.entries.size());
}

namespace {

MeanSe mean_and_se(const std::vector<double>& xs) {
    const double n = static_cast<double>(xs.size());
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= n;
    if (xs.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / (n - 1.0));
    return {mean, sd / std::sqrt(n)};
}

}  // namespace

MeanSe win_rate_proxy(const SampleSet& samples, const SampleSet& ref_samples,
                      const TaskSpec& task) {
    if (samples.entries.size() != ref_samples.entries.size())
        throw ValidationError("win_rate_proxy: sample sets cover different prompt counts");
    std::vector<double> outcomes;
    for (std::size_t i = 0; i < samples.entries.size(); ++i) {
        const auto& mine = samples.entries[i];
        const auto& theirs = ref_samples.entries[i];
        if (mine.prompt != theirs.prompt)
            throw ValidationError("win_rate_proxy: prompt mismatch at entry " +
                                  std::to_string(i + 1));
        if (mine.samples.size() != theirs.samples.size())
            throw ValidationError("win_rate_proxy: sample count mismatch at entry " +
                                  std::to_string(i + 1));
        for (std::size_t j = 0; j < mine.samples.size(); ++j) {
            const double a = true_score(task, mine.prompt, mine.samples[j]);
            const double b = true_score(task, theirs.prompt, theirs.samples[j]);
            outcomes.push_back(a > b ? 1.0 : (a == b ? 0.5 : 0.0));
        }
    }
    if (outcomes.empty()) throw ValidationError("win_rate_proxy: no samples");
    MeanSe stats = mean_and_se(outcomes);
    return {100.0 * stats.mean, 100.0 * stats.se};
}

double mode_coverage(const SampleSet& samples, const TaskSpec& task) {
    if (task.kind != TaskKind::modes)
        throw ValidationError("mode_coverage: task kind must be 'modes'");
    std::size_t covered = 0;
    for (const auto& mode : task.mode_strings) {
        const double self_score = mode_similarity(task, mode, mode);
        bool hit = false;
        for (const auto& entry : samples.entries) {
            for (const auto& s : entry.samples) {
                if (mode_similarity(task, s, mode) >= self_score - 0.5) {
                    hit = true;
                    break;
                }
            }
            if (hit) break;
        }
        if (hit) ++covered;
    }
    return static_cast<double>(covered) / static_cast<double>(task.mode_strings.size());
}

MeanSe token_length_stats(const SampleSet& samples) {
    std::vector<double> lengths;
    for (const auto& entry : samples.entries)
        for (const auto& s : entry.samples) lengths.push_back(static_cast<double>(s.size()));
    if (lengths.empty()) throw ValidationError("token_length_stats: no samples");
    return mean_and_se(lengths);
}

EvalReport evaluate_samples(const SampleSet& samples, const SampleSet& ref_samples,
                            const TaskSpec& task) {
    EvalReport report;
    report.diversity = diversity_score(samples);
    report.win_rate = win_rate_proxy(samples, ref_samples, task);
    report.mode_coverage = task.kind == TaskKind::modes
                               ? mode_coverage(samples, task)
                               : std::numeric_limits<double>::quiet_NaN();
    report.mean_tokens = token_length_stats(samples);
    return report;
}

}  // namespace gdpo
