#include "gdpo/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gdpo/errors.hpp"
#include "gdpo/rng.hpp"

namespace gdpo {

void PolicySpec::validate() const {
    if (vocab_size < 2) throw ValidationError("policy vocab_size must be >= 2");
    if (eos < 0 || eos >= vocab_size) throw ValidationError("policy eos id out of range");
    if (max_response_len < 1) throw ValidationError("policy max_response_len must be >= 1");
}

Policy::Policy(PolicySpec spec) : spec_(spec) { spec_.validate(); }

static void check_tokens(std::span<const Token> ctx, int vocab_size) {
    for (Token t : ctx)
        if (t < 0 || t >= vocab_size)
            throw VocabError("token id " + std::to_string(t) + " out of range 0.." +
                             std::to_string(vocab_size - 1));
}

std::vector<double> Policy::next_logprobs(std::span<const Token> ctx,
                                          int response_depth) const {
    if (response_depth < 0) throw ValidationError("response_depth must be >= 0");
    check_tokens(ctx, spec_.vocab_size);

    const int v = spec_.vocab_size;
    std::vector<double> z(static_cast<std::size_t>(v));
    raw_logits(ctx, z);

    std::vector<bool> masked(static_cast<std::size_t>(v), false);
    if (spec_.mask_mode == MaskMode::standard) {
        if (response_depth >= spec_.max_response_len) {
            for (int i = 0; i < v; ++i) masked[static_cast<std::size_t>(i)] = (i != spec_.eos);
        } else if (response_depth == 0) {
            masked[static_cast<std::size_t>(spec_.eos)] = true;
        }
    }

    double max_z = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < v; ++i)
        if (!masked[static_cast<std::size_t>(i)]) max_z = std::max(max_z, z[static_cast<std::size_t>(i)]);
    if (!std::isfinite(max_z))
        throw NumericError("next_logprobs: non-finite logits at context");

    double sum = 0.0;
    for (int i = 0; i < v; ++i)
        if (!masked[static_cast<std::size_t>(i)]) sum += std::exp(z[static_cast<std::size_t>(i)] - max_z);
    double lse = max_z + std::log(sum);

    std::vector<double> out(static_cast<std::size_t>(v));
    for (int i = 0; i < v; ++i)
        out[static_cast<std::size_t>(i)] =
            masked[static_cast<std::size_t>(i)] ? kMaskSentinel : z[static_cast<std::size_t>(i)] - lse;
    return out;
}

double seq_logprob(const Policy& policy, std::span<const Token> prefix,
                   std::span<const Token> response_with_eos) {
    const Token eos = policy.spec().eos;
    if (response_with_eos.size() < 2)
        throw ShapeError("seq_logprob: response must hold at least one token before EOS");
    if (response_with_eos.back() != eos)
        throw ShapeError("seq_logprob: response must end with EOS");
    for (std::size_t i = 0; i + 1 < response_with_eos.size(); ++i)
        if (response_with_eos[i] == eos)
            throw ShapeError("seq_logprob: EOS may appear only at the last position");

    std::vector<Token> ctx(prefix.begin(), prefix.end());
    double total = 0.0;
    int depth = 0;
    for (Token tok : response_with_eos) {
        if (tok < 0 || tok >= policy.spec().vocab_size)
            throw VocabError("seq_logprob: token id " + std::to_string(tok) + " out of range");
        auto lp = policy.next_logprobs(ctx, depth);
        total += lp[static_cast<std::size_t>(tok)];
        ctx.push_back(tok);
        ++depth;
    }
    return total;
}

void SamplingConfig::validate() const {
    if (!(temperature > 0)) throw ConfigError("temperature must be > 0");
    if (!(top_p > 0) || top_p > 1) throw ConfigError("top_p must be in (0, 1]");
    if (max_len < 1) throw ConfigError("max_len must be >= 1");
}

NucleusStep nucleus_from_logprobs(std::span<const double> logprobs,
                                  double temperature, double top_p) {
    if (!(temperature > 0)) throw ConfigError("temperature must be > 0");
    if (!(top_p > 0) || top_p > 1) throw ConfigError("top_p must be in (0, 1]");

    const int v = static_cast<int>(logprobs.size());
    NucleusStep step;
    step.probs.resize(static_cast<std::size_t>(v));

    double max_s = -std::numeric_limits<double>::infinity();
    for (double lp : logprobs) max_s = std::max(max_s, lp / temperature);
    double sum = 0.0;
    for (int i = 0; i < v; ++i) {
        double e = std::exp(logprobs[static_cast<std::size_t>(i)] / temperature - max_s);
        step.probs[static_cast<std::size_t>(i)] = e;
        sum += e;
    }
    for (double& p : step.probs) p /= sum;

    std::vector<int> order(static_cast<std::size_t>(v));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        double pa = step.probs[static_cast<std::size_t>(a)];
        double pb = step.probs[static_cast<std::size_t>(b)];
        if (pa != pb) return pa > pb;
        return a < b;  // ties broken by ascending token id
    });

    double cum = 0.0;
    for (int id : order) {
        step.nucleus.push_back(id);
        cum += step.probs[static_cast<std::size_t>(id)];
        if (cum >= top_p) break;
    }
    step.nucleus_mass = cum;
    return step;
}

std::vector<Token> sample_response(const Policy& policy,
                                   std::span<const Token> prefix,
                                   const SamplingConfig& cfg) {
    cfg.validate();
    const PolicySpec& spec = policy.spec();
    const int force_len = std::min(cfg.max_len, spec.max_response_len);

    Xoshiro256ss rng(cfg.seed);
    std::vector<Token> ctx(prefix.begin(), prefix.end());
    std::vector<Token> response;
    int depth = 0;
    while (true) {
        if (depth >= force_len) {
            response.push_back(spec.eos);
            break;
        }
        auto lp = policy.next_logprobs(ctx, depth);
        NucleusStep step = nucleus_from_logprobs(lp, cfg.temperature, cfg.top_p);

        std::vector<bool> in_nucleus(static_cast<std::size_t>(spec.vocab_size), false);
        for (int id : step.nucleus) in_nucleus[static_cast<std::size_t>(id)] = true;

        // Inverse-CDF over the renormalized nucleus in vocab index order.
        const double u = rng.uniform();
        double acc = 0.0;
        Token picked = -1;
        Token last_positive = -1;
        for (int id = 0; id < spec.vocab_size; ++id) {
            if (!in_nucleus[static_cast<std::size_t>(id)]) continue;
            double q = step.probs[static_cast<std::size_t>(id)] / step.nucleus_mass;
            if (q > 0) last_positive = id;
            acc += q;
            if (u < acc) {
                picked = id;
                break;
            }
        }
        if (picked < 0) picked = last_positive;

        response.push_back(picked);
        ctx.push_back(picked);
        ++depth;
        if (picked == spec.eos) break;
    }
    return response;
}

// ---------------------------------------------------------------------------
// TabularPolicy

TabularPolicy::TabularPolicy(PolicySpec spec) : Policy(spec) {
    if (spec.vocab_size > 127)
        throw ValidationError("tabular policies support vocab_size <= 127");
}

std::string TabularPolicy::key_of(std::span<const Token> ctx) {
    std::string key;
    key.reserve(ctx.size());
    for (Token t : ctx) key.push_back(static_cast<char>(t));
    return key;
}

void TabularPolicy::set_logits(std::span<const Token> ctx, std::vector<double> logits) {
    if (static_cast<int>(logits.size()) != spec_.vocab_size)
        throw ShapeError("set_logits: expected " + std::to_string(spec_.vocab_size) +
                         " logits, got " + std::to_string(logits.size()));
    check_tokens(ctx, spec_.vocab_size);
    table_[key_of(ctx)] = std::move(logits);
}

bool TabularPolicy::has_context(std::span<const Token> ctx) const {
    return table_.contains(key_of(ctx));
}

void TabularPolicy::raw_logits(std::span<const Token> ctx, std::span<double> out) const {
    auto it = table_.find(key_of(ctx));
    if (it == table_.end())
        throw VocabError("tabular policy has no entry for a context of length " +
                         std::to_string(ctx.size()));
    std::copy(it->second.begin(), it->second.end(), out.begin());
}

namespace {

template <class Fn>
void for_each_context(int vocab_size, std::span<const Token> prefix, int depth_bound,
                      Fn&& fn) {
    double total = 0;
    for (int len = 0, width = 1; len <= depth_bound; ++len, width *= vocab_size)
        total += width;
    if (total > 5e6)
        throw ValidationError("context enumeration too large (" + std::to_string(total) +
                              " states)");
    std::vector<Token> ctx(prefix.begin(), prefix.end());
    auto rec = [&](auto&& self, int depth) -> void {
        fn(std::span<const Token>(ctx), depth);
        if (depth == depth_bound) return;
        for (Token t = 0; t < vocab_size; ++t) {
            ctx.push_back(t);
            self(self, depth + 1);
            ctx.pop_back();
        }
    };
    rec(rec, 0);
}

}  // namespace

TabularPolicy TabularPolicy::constant(PolicySpec spec, std::span<const Token> prefix,
                                      int depth_bound, std::span<const double> logits) {
    TabularPolicy pol(spec);
    std::vector<double> row(logits.begin(), logits.end());
    for_each_context(spec.vocab_size, prefix, depth_bound,
                     [&](std::span<const Token> ctx, int) { pol.set_logits(ctx, row); });
    return pol;
}

TabularPolicy TabularPolicy::distill(const Policy& src, std::span<const Token> prefix,
                                     int depth_bound) {
    TabularPolicy pol(src.spec());
    for_each_context(src.spec().vocab_size, prefix, depth_bound,
                     [&](std::span<const Token> ctx, int depth) {
                         pol.set_logits(ctx, src.next_logprobs(ctx, depth));
                     });
    return pol;
}

// ---------------------------------------------------------------------------
// NeuralPolicy

std::size_t NeuralArch::n_params() const {
    return b2_offset() + static_cast<std::size_t>(vocab_size);
}
std::size_t NeuralArch::w1_offset() const {
    return static_cast<std::size_t>(vocab_size) * static_cast<std::size_t>(embed_dim);
}
std::size_t NeuralArch::b1_offset() const {
    return w1_offset() + static_cast<std::size_t>(hidden_dim) *
                             static_cast<std::size_t>(context_window) *
                             static_cast<std::size_t>(embed_dim);
}
std::size_t NeuralArch::w2_offset() const {
    return b1_offset() + static_cast<std::size_t>(hidden_dim);
}
std::size_t NeuralArch::b2_offset() const {
    return w2_offset() + static_cast<std::size_t>(vocab_size) *
                             static_cast<std::size_t>(hidden_dim);
}

NeuralPolicy::NeuralPolicy(PolicySpec spec, NeuralArch arch, ParamVector params)
    : Policy(spec), arch_(arch), params_(std::move(params)) {
    if (arch_.vocab_size != spec.vocab_size)
        throw ValidationError("neural arch vocab_size disagrees with policy spec");
    if (arch_.embed_dim < 1 || arch_.context_window < 1 || arch_.hidden_dim < 1)
        throw ValidationError("neural arch dimensions must be positive");
    if (params_.size() != arch_.n_params())
        throw ShapeError("neural policy expected " + std::to_string(arch_.n_params()) +
                         " params, got " + std::to_string(params_.size()));
    require_finite(params_, "neural policy params");
}

void NeuralPolicy::set_params(ParamVector params) {
    if (params.size() != arch_.n_params())
        throw ShapeError("set_params: wrong parameter count");
    params_ = std::move(params);
}

NeuralPolicy NeuralPolicy::random_init(PolicySpec spec, NeuralArch arch,
                                       std::uint64_t seed) {
    ParamVector p(arch.n_params(), 0.0);
    Xoshiro256ss rng(seed);
    auto fill_uniform = [&](std::size_t begin, std::size_t end, double scale) {
        for (std::size_t i = begin; i < end; ++i)
            p[i] = scale * (2.0 * rng.uniform() - 1.0);
    };
    const double in1 = static_cast<double>(arch.context_window * arch.embed_dim);
    fill_uniform(arch.embed_offset(), arch.w1_offset(), 0.1);
    fill_uniform(arch.w1_offset(), arch.b1_offset(),
                 std::sqrt(6.0 / (in1 + arch.hidden_dim)));
    fill_uniform(arch.w2_offset(), arch.b2_offset(),
                 std::sqrt(6.0 / (arch.hidden_dim + arch.vocab_size)));
    return NeuralPolicy(spec, arch, std::move(p));
}

void NeuralPolicy::forward(std::span<const Token> ctx, Activations& act,
                           std::span<double> logits) const {
    const int k = arch_.context_window;
    const int d = arch_.embed_dim;
    const int h_dim = arch_.hidden_dim;
    const int v = arch_.vocab_size;
    const double* emb = params_.data() + arch_.embed_offset();
    const double* w1 = params_.data() + arch_.w1_offset();
    const double* b1 = params_.data() + arch_.b1_offset();
    const double* w2 = params_.data() + arch_.w2_offset();
    const double* b2 = params_.data() + arch_.b2_offset();

    act.input.assign(static_cast<std::size_t>(k) * static_cast<std::size_t>(d), 0.0);
    const long n = static_cast<long>(ctx.size());
    for (int j = 0; j < k; ++j) {
        long pos = n - k + j;
        if (pos < 0) continue;  // short contexts are zero-padded on the left
        const double* row = emb + static_cast<std::size_t>(ctx[static_cast<std::size_t>(pos)]) *
                                      static_cast<std::size_t>(d);
        std::copy(row, row + d, act.input.begin() + static_cast<std::size_t>(j) * d);
    }

    act.hidden.resize(static_cast<std::size_t>(h_dim));
    const int in_dim = k * d;
    for (int hh = 0; hh < h_dim; ++hh) {
        const double* row = w1 + static_cast<std::size_t>(hh) * static_cast<std::size_t>(in_dim);
        double pre = b1[hh];
        for (int j = 0; j < in_dim; ++j) pre += row[j] * act.input[static_cast<std::size_t>(j)];
        act.hidden[static_cast<std::size_t>(hh)] = std::tanh(pre);
    }

    for (int vv = 0; vv < v; ++vv) {
        const double* row = w2 + static_cast<std::size_t>(vv) * static_cast<std::size_t>(h_dim);
        double z = b2[vv];
        for (int hh = 0; hh < h_dim; ++hh) z += row[hh] * act.hidden[static_cast<std::size_t>(hh)];
        logits[static_cast<std::size_t>(vv)] = z;
    }
}

void NeuralPolicy::raw_logits(std::span<const Token> ctx, std::span<double> out) const {
    Activations act;
    forward(ctx, act, out);
}

void NeuralPolicy::backprop_logits(std::span<const Token> ctx,
                                   std::span<const double> dlogits,
                                   ParamVector& grad) const {
    if (grad.size() != params_.size())
        throw ShapeError("backprop_logits: gradient buffer has wrong size");
    const int k = arch_.context_window;
    const int d = arch_.embed_dim;
    const int h_dim = arch_.hidden_dim;
    const int v = arch_.vocab_size;
    const int in_dim = k * d;

    Activations act;
    std::vector<double> logits(static_cast<std::size_t>(v));
    forward(ctx, act, logits);

    const double* w1 = params_.data() + arch_.w1_offset();
    const double* w2 = params_.data() + arch_.w2_offset();
    double* g_emb = grad.data() + arch_.embed_offset();
    double* g_w1 = grad.data() + arch_.w1_offset();
    double* g_b1 = grad.data() + arch_.b1_offset();
    double* g_w2 = grad.data() + arch_.w2_offset();
    double* g_b2 = grad.data() + arch_.b2_offset();

    std::vector<double> dhidden(static_cast<std::size_t>(h_dim), 0.0);
    for (int vv = 0; vv < v; ++vv) {
        const double dl = dlogits[static_cast<std::size_t>(vv)];
        if (dl == 0.0) continue;
        g_b2[vv] += dl;
        const double* row = w2 + static_cast<std::size_t>(vv) * static_cast<std::size_t>(h_dim);
        double* g_row = g_w2 + static_cast<std::size_t>(vv) * static_cast<std::size_t>(h_dim);
        for (int hh = 0; hh < h_dim; ++hh) {
            g_row[hh] += dl * act.hidden[static_cast<std::size_t>(hh)];
            dhidden[static_cast<std::size_t>(hh)] += dl * row[hh];
        }
    }

    std::vector<double> dinput(static_cast<std::size_t>(in_dim), 0.0);
    for (int hh = 0; hh < h_dim; ++hh) {
        const double hval = act.hidden[static_cast<std::size_t>(hh)];
        const double dpre = dhidden[static_cast<std::size_t>(hh)] * (1.0 - hval * hval);
        if (dpre == 0.0) continue;
        g_b1[hh] += dpre;
        const double* row = w1 + static_cast<std::size_t>(hh) * static_cast<std::size_t>(in_dim);
        double* g_row = g_w1 + static_cast<std::size_t>(hh) * static_cast<std::size_t>(in_dim);
        for (int j = 0; j < in_dim; ++j) {
            g_row[j] += dpre * act.input[static_cast<std::size_t>(j)];
            dinput[static_cast<std::size_t>(j)] += dpre * row[j];
        }
    }

    const long n = static_cast<long>(ctx.size());
    for (int j = 0; j < k; ++j) {
        long pos = n - k + j;
        if (pos < 0) continue;
        double* g_row = g_emb + static_cast<std::size_t>(ctx[static_cast<std::size_t>(pos)]) *
                                    static_cast<std::size_t>(d);
        for (int e = 0; e < d; ++e)
            g_row[e] += dinput[static_cast<std::size_t>(j) * static_cast<std::size_t>(d) +
                               static_cast<std::size_t>(e)];
    }
}

}  // namespace gdpo
