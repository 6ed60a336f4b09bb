#include "gdpo/vocab.hpp"

#include <algorithm>

#include "gdpo/errors.hpp"

namespace gdpo {

Vocab Vocab::from_alphabet(std::string_view alphabet) {
    if (alphabet.empty())
        throw VocabError("alphabet must contain at least one character");
    Vocab v;
    v.symbols_.reserve(alphabet.size() + 2);
    for (char c : alphabet) {
        if (c == kSepChar || c == kEosChar)
            throw VocabError(std::string("alphabet may not contain the special glyph '") + c + "'");
        if (v.symbols_.find(c) != std::string::npos)
            throw VocabError(std::string("duplicate alphabet character '") + c + "'");
        v.symbols_.push_back(c);
    }
    v.sep_ = static_cast<Token>(v.symbols_.size());
    v.symbols_.push_back(kSepChar);
    v.eos_ = static_cast<Token>(v.symbols_.size());
    v.symbols_.push_back(kEosChar);
    return v;
}

bool Vocab::contains(char c) const {
    return symbols_.find(c) != std::string::npos;
}

Token Vocab::token_of(char c) const {
    auto pos = symbols_.find(c);
    if (pos == std::string::npos)
        throw VocabError(std::string("character '") + c + "' is not in the vocabulary");
    return static_cast<Token>(pos);
}

char Vocab::char_of(Token t) const {
    if (t < 0 || t >= size())
        throw VocabError("token id " + std::to_string(t) + " out of range 0.." +
                         std::to_string(size() - 1));
    return symbols_[static_cast<std::size_t>(t)];
}

std::vector<Token> Vocab::encode(std::string_view text) const {
    std::vector<Token> out;
    out.reserve(text.size());
    for (char c : text) out.push_back(token_of(c));
    return out;
}

std::string Vocab::decode(std::span<const Token> tokens) const {
    std::string out;
    out.reserve(tokens.size());
    for (Token t : tokens) out.push_back(char_of(t));
    return out;
}

std::vector<Token> Vocab::prompt_context(std::span<const Token> prompt) const {
    std::vector<Token> ctx(prompt.begin(), prompt.end());
    ctx.push_back(sep_);
    return ctx;
}

std::vector<Token> Vocab::prompt_context(std::string_view prompt) const {
    auto ctx = encode(prompt);
    ctx.push_back(sep_);
    return ctx;
}

}  // namespace gdpo
