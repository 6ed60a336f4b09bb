#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "gdpo/errors.hpp"
#include "gdpo/task.hpp"

using namespace gdpo;

namespace {

TaskSpec modes_task() {
    TaskSpec t;
    t.kind = TaskKind::modes;
    t.alphabet = "abcd";
    t.mode_strings = {"aab", "bba", "cac", "dbd"};
    t.prompt_len = 3;
    t.max_response_len = 6;
    return t;
}

std::filesystem::path tmp_file(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "gdpo_corpus_tests";
    std::filesystem::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST_CASE("vocab layout: alphabet then SEP then EOS, dense ids") {
    Vocab v = Vocab::from_alphabet("abc");
    CHECK(v.size() == 5);
    CHECK(v.token_of('a') == 0);
    CHECK(v.token_of('c') == 2);
    CHECK(v.sep() == 3);
    CHECK(v.eos() == 4);
    CHECK(v.sep() != v.eos());
    CHECK(v.decode(v.encode("cab")) == "cab");
    CHECK_THROWS_AS(v.token_of('z'), VocabError);
    CHECK_THROWS_AS(Vocab::from_alphabet("aa"), VocabError);
    CHECK_THROWS_AS(Vocab::from_alphabet("a|b"), VocabError);
    CHECK_THROWS_AS(Vocab::from_alphabet(""), VocabError);
}

TEST_CASE("true_score on the modes task") {
    TaskSpec t = modes_task();
    t.mode_strings = {"ab"};  // single-mode scorer checks don't need generator validity
    CHECK(true_score(t, "aaa", "ab") == doctest::Approx(2.0).epsilon(1e-12));
    // lcp 1, length gap 1
    CHECK(true_score(t, "aaa", "a") == doctest::Approx(1.0 - 0.1).epsilon(1e-12));
    // no common prefix, equal length
    CHECK(true_score(t, "aaa", "ba") == doctest::Approx(0.0).epsilon(1e-12));
    CHECK_THROWS_AS(true_score(t, "aaa", ""), ValidationError);
    CHECK_THROWS_AS(true_score(t, "aaa", "aaaaaaa"), ValidationError);
    CHECK(true_score(t, "aaa", "ab") == true_score(t, "aaa", "ab"));
}

TEST_CASE("true_score on the unique-answer task") {
    TaskSpec t;
    t.kind = TaskKind::unique_answer;
    t.alphabet = "abcd";
    t.prompt_len = 4;
    t.max_response_len = 6;
    CHECK(unique_answer_target(t, "abca") == "abc");
    CHECK(true_score(t, "abca", "abc") == doctest::Approx(3.0));
    CHECK(true_score(t, "abca", "ab") == doctest::Approx(2.0 - 0.1));
    CHECK(true_score(t, "abca", "dbc") == doctest::Approx(2.0));
    // target truncation at max_response_len
    TaskSpec t2 = t;
    t2.max_response_len = 2;
    CHECK(unique_answer_target(t2, "abca") == "ab");
}

TEST_CASE("gen_pairs is deterministic and label-sound") {
    TaskSpec t = modes_task();
    auto p1 = gen_pairs(t, 200, 42);
    auto p2 = gen_pairs(t, 200, 42);
    CHECK(p1 == p2);
    auto p3 = gen_pairs(t, 200, 43);
    CHECK(p1 != p3);

    for (const auto& pair : p1) {
        CHECK(true_score(t, pair.prompt, pair.chosen) >
              true_score(t, pair.prompt, pair.rejected));
        CHECK(pair.chosen != pair.rejected);
        CHECK(!pair.chosen.empty());
        CHECK(static_cast<int>(pair.chosen.size()) <= t.max_response_len);
    }
}

TEST_CASE("gen_pairs reaches every mode as a chosen response") {
    TaskSpec t = modes_task();
    auto pairs = gen_pairs(t, 1000, 7);
    std::set<std::string> chosen_modes;
    for (const auto& pair : pairs)
        for (const auto& m : t.mode_strings)
            if (pair.chosen == m) chosen_modes.insert(m);
    CHECK(chosen_modes.size() == t.mode_strings.size());
}

TEST_CASE("dataset round-trips and serializes deterministically") {
    TaskSpec t = modes_task();
    auto pairs = gen_pairs(t, 50, 3);
    auto path = tmp_file("pairs.jsonl");
    save_pairs(path, pairs);
    auto loaded = load_pairs(path, t);
    CHECK(loaded == pairs);

    std::ostringstream first, second;
    save_pairs(path, pairs);
    first << std::ifstream(path).rdbuf();
    save_pairs(path, loaded);
    second << std::ifstream(path).rdbuf();
    CHECK(first.str() == second.str());
}

TEST_CASE("dataset loader reports malformed lines and violated invariants") {
    TaskSpec t = modes_task();
    auto path = tmp_file("bad.jsonl");

    {
        std::ofstream out(path);
        out << R"({"prompt": "aaa", "chosen": "ab"})" << "\n";
    }
    CHECK_THROWS_WITH_AS(static_cast<void>(load_pairs(path, t)),
                         doctest::Contains("line 1"), ParseError);

    {
        std::ofstream out(path);
        out << R"({"prompt": "aaa", "chosen": "ab", "rejected": "ab"})" << "\n";
    }
    CHECK_THROWS_AS(static_cast<void>(load_pairs(path, t)), ValidationError);

    {
        std::ofstream out(path);
        out << R"({"prompt": "aaa", "chosen": "ab", "rejected": "ba"})" << "\n";
        out << R"({"prompt": "aaa", "chosen": "xy", "rejected": "ba"})" << "\n";
    }
    CHECK_THROWS_WITH_AS(static_cast<void>(load_pairs(path, t)),
                         doctest::Contains("line 2"), VocabError);

    {
        std::ofstream out(path);
        out << "not json" << "\n";
    }
    CHECK_THROWS_AS(static_cast<void>(load_pairs(path, t)), ParseError);
}

TEST_CASE("task file round-trip") {
    TaskSpec t = modes_task();
    auto path = tmp_file("task.json");
    t.save(path);
    TaskSpec loaded = TaskSpec::load(path);
    CHECK(loaded.kind == t.kind);
    CHECK(loaded.alphabet == t.alphabet);
    CHECK(loaded.mode_strings == t.mode_strings);
    CHECK(loaded.prompt_len == t.prompt_len);
    CHECK(loaded.max_response_len == t.max_response_len);
    CHECK(loaded.seed == t.seed);
}

TEST_CASE("task validation rejects bad specs") {
    TaskSpec t = modes_task();
    t.mode_strings = {"aab", "bba", "cac"};  // fewer than 4 modes
    CHECK_THROWS_AS(t.validate(), ValidationError);
    t = modes_task();
    t.mode_strings[1] = t.mode_strings[0];
    CHECK_THROWS_AS(t.validate(), ValidationError);
    t = modes_task();
    t.mode_strings[0] = "aaaaaaaaaa";  // longer than max_response_len
    CHECK_THROWS_AS(t.validate(), ValidationError);
    t = modes_task();
    t.mode_strings[0] = "xyz";  // leaves the alphabet
    CHECK_THROWS_AS(t.validate(), ValidationError);
}

TEST_CASE("prompt files round-trip") {
    TaskSpec t = modes_task();
    auto prompts = gen_prompts(t, 10, 5);
    CHECK(prompts.size() == 10);
    for (const auto& p : prompts) CHECK(p.size() == 3);
    auto path = tmp_file("prompts.txt");
    save_prompts(path, prompts);
    CHECK(load_prompts(path) == prompts);
}
