#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gdpo {

using Token = std::int32_t;

// Character-level vocabulary: the task alphabet followed by the two special
// tokens SEP and EOS. Token ids are dense 0..V-1 in symbol order, so the
// alphabet occupies [0, V-2) and the specials are the last two ids.
class Vocab {
public:
    static constexpr char kSepChar = '|';
    static constexpr char kEosChar = '$';

    // Builds alphabet + SEP + EOS. The alphabet must be nonempty, duplicate
    // free, and must not contain the special glyphs.
    static Vocab from_alphabet(std::string_view alphabet);

    int size() const { return static_cast<int>(symbols_.size()); }
    Token sep() const { return sep_; }
    Token eos() const { return eos_; }
    const std::string& symbols() const { return symbols_; }
    int alphabet_size() const { return size() - 2; }

    bool contains(char c) const;
    Token token_of(char c) const;  // VocabError on unknown character
    char char_of(Token t) const;   // VocabError on out-of-range id
    bool is_special(Token t) const { return t == sep_ || t == eos_; }

    std::vector<Token> encode(std::string_view text) const;
    std::string decode(std::span<const Token> tokens) const;

    // Prompt tokens followed by SEP: the conditioning prefix policies see.
    std::vector<Token> prompt_context(std::span<const Token> prompt) const;
    std::vector<Token> prompt_context(std::string_view prompt) const;

private:
    std::string symbols_;
    Token sep_ = -1;
    Token eos_ = -1;
};

}  // namespace gdpo
