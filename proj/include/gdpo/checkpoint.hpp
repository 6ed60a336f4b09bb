#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "gdpo/numerics.hpp"
#include "gdpo/policy.hpp"
#include "gdpo/vocab.hpp"

namespace gdpo {

// Exact textual round-trip for doubles ("%a" hexadecimal floats).
std::string double_to_hex(double v);
double hex_to_double(const std::string& s);

// Full training state: policy parameters, optimizer moments, RNG stream
// state, and a config echo. load(save(c)) == c bit-exactly.
struct Checkpoint {
    NeuralArch arch;
    int max_response_len = 1;
    std::string alphabet;  // vocab is alphabet + SEP + EOS
    ParamVector params;
    OptimState opt;
    std::array<std::uint64_t, 4> rng_state{};
    long step = 0;
    nlohmann::json config_echo;

    Vocab vocab() const { return Vocab::from_alphabet(alphabet); }
    PolicySpec policy_spec(MaskMode mode = MaskMode::standard) const;
    NeuralPolicy policy(MaskMode mode = MaskMode::standard) const;

    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);

    bool operator==(const Checkpoint& other) const;
};

}  // namespace gdpo
