#include "gdpo/checkpoint.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>

#include "gdpo/errors.hpp"

namespace gdpo {

using nlohmann::json;

std::string double_to_hex(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%a", v);
    return buf;
}

double hex_to_double(const std::string& s) {
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size())
        throw ParseError("bad hex float '" + s + "'");
    return v;
}

namespace {

std::string u64_to_hex(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t hex_to_u64(const std::string& s) {
    char* end = nullptr;
    unsigned long long v = std::strtoull(s.c_str(), &end, 16);
    if (end != s.c_str() + s.size()) throw ParseError("bad hex integer '" + s + "'");
    return v;
}

json doubles_to_json(const ParamVector& v) {
    json out = json::array();
    for (double x : v) out.push_back(double_to_hex(x));
    return out;
}

ParamVector doubles_from_json(const json& j) {
    ParamVector out;
    out.reserve(j.size());
    for (const auto& s : j) out.push_back(hex_to_double(s.get<std::string>()));
    return out;
}

}  // namespace

PolicySpec Checkpoint::policy_spec(MaskMode mode) const {
    Vocab v = vocab();
    return {v.size(), v.eos(), max_response_len, mode};
}

NeuralPolicy Checkpoint::policy(MaskMode mode) const {
    return NeuralPolicy(policy_spec(mode), arch, params);
}

void Checkpoint::save(const std::filesystem::path& path) const {
    json j;
    j["format"] = "gdpo-checkpoint-v1";
    j["arch"] = {{"vocab_size", arch.vocab_size},
                 {"embed_dim", arch.embed_dim},
                 {"context_window", arch.context_window},
                 {"hidden_dim", arch.hidden_dim}};
    j["max_response_len"] = max_response_len;
    j["alphabet"] = alphabet;
    j["params"] = doubles_to_json(params);
    j["opt"] = {{"m", doubles_to_json(opt.m)},
                {"v", doubles_to_json(opt.v)},
                {"step", opt.step}};
    json rng = json::array();
    for (std::uint64_t w : rng_state) rng.push_back(u64_to_hex(w));
    j["rng_state"] = rng;
    j["step"] = step;
    j["config"] = config_echo;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write checkpoint " + path.string());
    out << j.dump(1) << '\n';
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open checkpoint " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError("checkpoint " + path.string() + ": " + e.what());
    }
    Checkpoint ck;
    try {
        if (j.value("format", "") != "gdpo-checkpoint-v1")
            throw ParseError("checkpoint " + path.string() + ": unknown format tag");
        const auto& a = j.at("arch");
        ck.arch.vocab_size = a.at("vocab_size").get<int>();
        ck.arch.embed_dim = a.at("embed_dim").get<int>();
        ck.arch.context_window = a.at("context_window").get<int>();
        ck.arch.hidden_dim = a.at("hidden_dim").get<int>();
        ck.max_response_len = j.at("max_response_len").get<int>();
        ck.alphabet = j.at("alphabet").get<std::string>();
        ck.params = doubles_from_json(j.at("params"));
        ck.opt.m = doubles_from_json(j.at("opt").at("m"));
        ck.opt.v = doubles_from_json(j.at("opt").at("v"));
        ck.opt.step = j.at("opt").at("step").get<long>();
        const auto& rng = j.at("rng_state");
        if (rng.size() != 4) throw ParseError("checkpoint rng_state must hold 4 words");
        for (std::size_t i = 0; i < 4; ++i)
            ck.rng_state[i] = hex_to_u64(rng[i].get<std::string>());
        ck.step = j.at("step").get<long>();
        ck.config_echo = j.value("config", json::object());
    } catch (const json::exception& e) {
        throw ParseError("checkpoint " + path.string() + ": " + e.what());
    }
    if (ck.params.size() != ck.arch.n_params())
        throw ShapeError("checkpoint " + path.string() + ": parameter count disagrees with arch");
    if (ck.opt.m.size() != ck.params.size() || ck.opt.v.size() != ck.params.size())
        throw ShapeError("checkpoint " + path.string() + ": optimizer state size mismatch");
    return ck;
}

bool Checkpoint::operator==(const Checkpoint& other) const {
    return arch == other.arch && max_response_len == other.max_response_len &&
           alphabet == other.alphabet && params == other.params &&
           opt.m == other.opt.m && opt.v == other.opt.v && opt.step == other.opt.step &&
           rng_state == other.rng_state && step == other.step &&
           config_echo == other.config_echo;
}

}  // namespace gdpo
