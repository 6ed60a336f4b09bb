#include "gdpo/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_map>

#include <json.hpp>

#include "gdpo/errors.hpp"
#include "gdpo/numerics.hpp"
#include "gdpo/rng.hpp"

namespace gdpo {

using nlohmann::json;

void EnumMdp::validate() const {
    if (letters.empty() || letters.size() > 5)
        throw ValidationError("mdp needs 1..5 letters (vocab <= 6 incl. EOS)");
    for (std::size_t i = 0; i < letters.size(); ++i)
        for (std::size_t j = i + 1; j < letters.size(); ++j)
            if (letters[i] == letters[j]) throw ValidationError("mdp letters must be distinct");
    if (max_len < 1 || max_len > 5) throw ValidationError("mdp max_len must be in 1..5");

    const auto terms = terminals();
    if (reward.size() != terms.size())
        throw ValidationError("mdp reward table must cover exactly the " +
                              std::to_string(terms.size()) + " terminals, got " +
                              std::to_string(reward.size()));
    for (const auto& t : terms) {
        auto it = reward.find(t);
        if (it == reward.end())
            throw ValidationError("mdp reward table is missing terminal '" + t + "'");
        if (!(it->second > 0))
            throw DomainError("mdp reward for terminal '" + t + "' must be positive");
    }
}

std::vector<Token> EnumMdp::encode(std::string_view s) const {
    std::vector<Token> out;
    out.reserve(s.size());
    for (char c : s) {
        auto pos = letters.find(c);
        if (pos == std::string::npos)
            throw VocabError(std::string("mdp letter '") + c + "' unknown");
        out.push_back(static_cast<Token>(pos));
    }
    return out;
}

std::string EnumMdp::decode(std::span<const Token> tokens) const {
    std::string out;
    for (Token t : tokens) {
        if (t < 0 || t >= static_cast<Token>(letters.size()))
            throw VocabError("mdp token id out of range");
        out.push_back(letters[static_cast<std::size_t>(t)]);
    }
    return out;
}

static void extend_states(const EnumMdp& mdp, int from_len, int to_len,
                          std::vector<std::string>& out) {
    std::vector<std::string> frontier{""};
    for (int len = 0; len <= to_len; ++len) {
        if (len >= from_len)
            for (const auto& s : frontier) out.push_back(s);
        if (len == to_len) break;
        std::vector<std::string> next;
        next.reserve(frontier.size() * mdp.letters.size());
        for (const auto& s : frontier)
            for (char c : mdp.letters) next.push_back(s + c);
        frontier = std::move(next);
    }
}

std::vector<std::string> EnumMdp::decision_states() const {
    std::vector<std::string> out;
    extend_states(*this, 0, max_len - 1, out);
    return out;
}

std::vector<std::string> EnumMdp::terminals() const {
    std::vector<std::string> out;
    extend_states(*this, 1, max_len, out);
    return out;
}

EnumMdp EnumMdp::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open mdp file " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError("mdp file " + path.string() + ": " + e.what());
    }
    EnumMdp mdp;
    try {
        mdp.letters = j.at("letters").get<std::string>();
        mdp.max_len = j.at("max_len").get<int>();
        for (auto& [key, value] : j.at("rewards").items())
            mdp.reward[key] = value.get<double>();
    } catch (const json::exception& e) {
        throw ParseError("mdp file " + path.string() + ": " + e.what());
    }
    mdp.validate();
    return mdp;
}

void EnumMdp::save(const std::filesystem::path& path) const {
    validate();
    json rewards = json::object();
    for (const auto& [term, r] : reward) rewards[term] = r;
    json j{{"letters", letters}, {"max_len", max_len}, {"rewards", rewards}};
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write mdp file " + path.string());
    out << j.dump(2) << '\n';
}

EnumMdp random_mdp(int n_letters, int max_len, std::uint64_t seed,
                   double reward_lo, double reward_hi) {
    if (n_letters < 1 || n_letters > 5) throw ValidationError("n_letters must be 1..5");
    if (!(reward_lo > 0) || !(reward_hi >= reward_lo))
        throw ValidationError("need 0 < reward_lo <= reward_hi");
    EnumMdp mdp;
    mdp.letters = std::string("abcde").substr(0, static_cast<std::size_t>(n_letters));
    mdp.max_len = max_len;
    Xoshiro256ss rng(stream_seed(seed, "random-mdp", 0));
    for (const auto& t : mdp.terminals())
        mdp.reward[t] = reward_lo + (reward_hi - reward_lo) * rng.uniform();
    mdp.validate();
    return mdp;
}

FlowTable exact_flows(const EnumMdp& mdp) {
    mdp.validate();
    FlowTable out;

    // Bottom-up over the prefix tree; states at a given length only depend on
    // length + 1, and each non-root state has exactly the one parent that is
    // its own prefix.
    std::vector<std::string> all_states;
    extend_states(mdp, 0, mdp.max_len, all_states);
    std::sort(all_states.begin(), all_states.end(),
              [](const std::string& a, const std::string& b) {
                  return a.size() != b.size() ? a.size() > b.size() : a < b;
              });
    for (const auto& s : all_states) {
        const int len = static_cast<int>(s.size());
        double f = len >= 1 ? mdp.reward.at(s) : 0.0;
        if (len < mdp.max_len)
            for (char c : mdp.letters) f += out.flow.at(s + c);
        out.flow[s] = f;
    }
    out.z = out.flow.at("");
    for (const auto& t : mdp.terminals()) out.target[t] = mdp.reward.at(t) / out.z;
    return out;
}

TabularPolicy optimal_policy(const EnumMdp& mdp, const FlowTable& flows) {
    TabularPolicy pol(mdp.policy_spec());
    const int v = mdp.vocab_size();
    std::vector<std::string> all_states;
    extend_states(mdp, 0, mdp.max_len, all_states);
    for (const auto& s : all_states) {
        const int len = static_cast<int>(s.size());
        std::vector<double> logits(static_cast<std::size_t>(v), 0.0);
        if (len < mdp.max_len) {
            for (std::size_t a = 0; a < mdp.letters.size(); ++a)
                logits[a] = std::log(flows.flow.at(s + mdp.letters[a]));
            // EOS logit log R(s); masked out at the root where R is undefined.
            logits[static_cast<std::size_t>(mdp.eos())] =
                len >= 1 ? std::log(mdp.reward.at(s)) : 0.0;
        }
        pol.set_logits(mdp.encode(s), std::move(logits));
    }
    return pol;
}

std::map<std::string, double> policy_terminal_dist(const Policy& policy,
                                                   const EnumMdp& mdp) {
    mdp.validate();
    std::map<std::string, double> out;
    const Token eos = mdp.eos();
    std::vector<Token> ctx;
    std::string prefix;
    auto rec = [&](auto&& self, int depth, double logp_so_far) -> void {
        auto dist = policy.next_logprobs(ctx, depth);
        if (depth >= 1)
            out[prefix] = std::exp(logp_so_far + dist[static_cast<std::size_t>(eos)]);
        if (depth == mdp.max_len) return;
        for (std::size_t a = 0; a < mdp.letters.size(); ++a) {
            ctx.push_back(static_cast<Token>(a));
            prefix.push_back(mdp.letters[a]);
            self(self, depth + 1, logp_so_far + dist[a]);
            prefix.pop_back();
            ctx.pop_back();
        }
    };
    rec(rec, 0, 0.0);
    return out;
}

double tv_distance(const std::map<std::string, double>& p,
                   const std::map<std::string, double>& q) {
    if (p.size() != q.size())
        throw ValidationError("tv_distance: supports differ in size");
    double total = 0.0;
    for (const auto& [key, pv] : p) {
        auto it = q.find(key);
        if (it == q.end())
            throw ValidationError("tv_distance: key '" + key + "' missing from q");
        total += std::abs(pv - it->second);
    }
    return 0.5 * total;
}

double db_residual(const EnumMdp& mdp, const Policy& policy, double log_z) {
    mdp.validate();
    const Token eos = mdp.eos();
    double total = 0.0;
    for (const auto& s : mdp.decision_states()) {
        const int depth = static_cast<int>(s.size());
        const auto ctx = mdp.encode(s);
        const auto lp = policy.next_logprobs(ctx, depth);
        const double log_f_src =
            depth == 0 ? log_z
                       : std::log(mdp.reward.at(s)) - lp[static_cast<std::size_t>(eos)];
        for (std::size_t a = 0; a < mdp.letters.size(); ++a) {
            const std::string child = s + mdp.letters[a];
            double log_f_child = std::log(mdp.reward.at(child));
            if (static_cast<int>(child.size()) < mdp.max_len) {
                const auto child_lp =
                    policy.next_logprobs(mdp.encode(child), static_cast<int>(child.size()));
                log_f_child -= child_lp[static_cast<std::size_t>(eos)];
            }
            const double r = log_f_src + lp[a] - log_f_child;
            total += r * r;
        }
    }
    return total;
}

// ---------------------------------------------------------------------------
// Clean DB training on the enumerated tree.

namespace {

// Policy view over one flat parameter block: V logits per decision state.
class TabularParamView final : public Policy {
public:
    TabularParamView(PolicySpec spec,
                     const std::unordered_map<std::string, std::size_t>& index,
                     const ParamVector& params)
        : Policy(spec), index_(index), params_(params) {}

    void raw_logits(std::span<const Token> ctx, std::span<double> out) const override {
        std::string key = TabularPolicy::key_of(ctx);
        auto it = index_.find(key);
        if (it == index_.end()) throw VocabError("param view: unknown context");
        const double* base = params_.data() + it->second;
        std::copy(base, base + spec_.vocab_size, out.begin());
    }

private:
    const std::unordered_map<std::string, std::size_t>& index_;
    const ParamVector& params_;
};

}  // namespace

DbTrainResult train_db_exact(const EnumMdp& mdp, std::uint64_t seed,
                             const DbTrainOptions& opts) {
    mdp.validate();
    if (opts.steps < 1) throw ValidationError("train_db_exact: steps must be >= 1");

    const int v = mdp.vocab_size();
    const Token eos = mdp.eos();
    const auto states = mdp.decision_states();
    const std::size_t n_states = states.size();

    std::unordered_map<std::string, std::size_t> offset;  // state -> param offset
    std::vector<std::vector<Token>> state_ctx(n_states);
    for (std::size_t i = 0; i < n_states; ++i) {
        offset[TabularPolicy::key_of(mdp.encode(states[i]))] =
            i * static_cast<std::size_t>(v);
        state_ctx[i] = mdp.encode(states[i]);
    }
    const std::size_t z_index = n_states * static_cast<std::size_t>(v);

    ParamVector params(z_index + 1, 0.0);
    Xoshiro256ss init_rng(stream_seed(seed, "db-init", 0));
    for (std::size_t i = 0; i < z_index; ++i) params[i] = init_rng.uniform() - 0.5;
    params[z_index] = 0.0;  // log Z-hat

    // Edge list: (source state index, letter). The child is a decision state
    // when its length is still below max_len, otherwise a leaf with F = R.
    struct Edge {
        std::size_t src;
        int letter;
        long child_state = -1;  // index into states, -1 for leaves
        double log_child_reward;
        double log_src_reward;  // log R(src), unused at the root
        bool src_is_root;
    };
    std::vector<Edge> edges;
    std::unordered_map<std::string, std::size_t> state_pos;
    for (std::size_t i = 0; i < n_states; ++i) state_pos[states[i]] = i;
    for (std::size_t i = 0; i < n_states; ++i) {
        const std::string& s = states[i];
        for (std::size_t a = 0; a < mdp.letters.size(); ++a) {
            Edge e;
            e.src = i;
            e.letter = static_cast<int>(a);
            const std::string child = s + mdp.letters[a];
            auto it = state_pos.find(child);
            if (it != state_pos.end()) e.child_state = static_cast<long>(it->second);
            e.log_child_reward = std::log(mdp.reward.at(child));
            e.log_src_reward = s.empty() ? 0.0 : std::log(mdp.reward.at(s));
            e.src_is_root = s.empty();
            edges.push_back(e);
        }
    }

    const PolicySpec spec = mdp.policy_spec();
    Schedule schedule{opts.lr_max, opts.steps, opts.warmup_ratio};
    OptimState opt = OptimState::zeros(params.size());
    ParamVector grad(params.size(), 0.0);
    std::vector<std::vector<double>> logprobs(n_states);
    std::vector<std::vector<double>> weights(n_states,
                                             std::vector<double>(static_cast<std::size_t>(v)));

    double loss = 0.0;
    long step = 0;
    auto eval = [&](bool with_grad) {
        TabularParamView view(spec, offset, params);
        for (std::size_t i = 0; i < n_states; ++i) {
            logprobs[i] = view.next_logprobs(state_ctx[i], static_cast<int>(states[i].size()));
            if (with_grad) std::fill(weights[i].begin(), weights[i].end(), 0.0);
        }
        double total = 0.0;
        double z_grad = 0.0;
        for (const auto& e : edges) {
            const auto& lp_src = logprobs[e.src];
            const double log_f_src =
                e.src_is_root ? params[z_index]
                              : e.log_src_reward - lp_src[static_cast<std::size_t>(eos)];
            double log_f_child = e.log_child_reward;
            if (e.child_state >= 0)
                log_f_child -= logprobs[static_cast<std::size_t>(e.child_state)]
                                       [static_cast<std::size_t>(eos)];
            const double r = log_f_src + lp_src[static_cast<std::size_t>(e.letter)] - log_f_child;
            total += r * r;
            if (with_grad) {
                const double c = 2.0 * r;
                weights[e.src][static_cast<std::size_t>(e.letter)] += c;
                if (e.src_is_root)
                    z_grad += c;
                else
                    weights[e.src][static_cast<std::size_t>(eos)] -= c;
                if (e.child_state >= 0)
                    weights[static_cast<std::size_t>(e.child_state)]
                           [static_cast<std::size_t>(eos)] += c;
            }
        }
        if (with_grad) {
            std::fill(grad.begin(), grad.end(), 0.0);
            grad[z_index] = z_grad;
            for (std::size_t i = 0; i < n_states; ++i) {
                double wsum = 0.0;
                for (double w : weights[i]) wsum += w;
                double* g = grad.data() + i * static_cast<std::size_t>(v);
                for (int t = 0; t < v; ++t)
                    g[t] = weights[i][static_cast<std::size_t>(t)] -
                           wsum * std::exp(logprobs[i][static_cast<std::size_t>(t)]);
            }
        }
        return total;
    };

    for (step = 0; step < opts.steps; ++step) {
        loss = eval(true);
        if (loss < opts.target_loss) break;
        adam_step(params, grad, opt, lr_at(schedule, step));
    }
    loss = eval(false);
    if (!(loss < opts.target_loss))
        throw ConvergenceError("train_db_exact: residual " + std::to_string(loss) +
                                   " after " + std::to_string(step) + " steps",
                               loss);

    // Materialize the trained policy, leaf states included (their distribution
    // is fully masked to EOS but the table still needs rows for lookups).
    TabularPolicy trained(spec);
    for (std::size_t i = 0; i < n_states; ++i) {
        const double* base = params.data() + i * static_cast<std::size_t>(v);
        trained.set_logits(state_ctx[i], std::vector<double>(base, base + v));
    }
    std::vector<std::string> leaf_states;
    extend_states(mdp, mdp.max_len, mdp.max_len, leaf_states);
    for (const auto& s : leaf_states)
        trained.set_logits(mdp.encode(s), std::vector<double>(static_cast<std::size_t>(v), 0.0));

    return {std::move(trained), loss, step, params[z_index]};
}

OracleReport oracle_check(const EnumMdp& mdp, std::uint64_t seed,
                          const DbTrainOptions& opts) {
    const FlowTable flows = exact_flows(mdp);
    DbTrainResult result = train_db_exact(mdp, seed, opts);
    const auto actual = policy_terminal_dist(result.policy, mdp);

    OracleReport report;
    report.z = flows.z;
    report.final_loss = result.final_loss;
    report.steps_used = result.steps_used;
    report.tv = tv_distance(flows.target, actual);
    for (const auto& [term, target_p] : flows.target)
        report.terminals[term] = {target_p, actual.at(term)};
    return report;
}

void save_oracle_report(const std::filesystem::path& path, const OracleReport& report) {
    json terminals = json::array();
    for (const auto& [term, probs] : report.terminals)
        terminals.push_back(json{{"terminal", term},
                                 {"target", probs.first},
                                 {"actual", probs.second}});
    json j{{"Z", report.z},
           {"final_residual", report.final_loss},
           {"steps_used", report.steps_used},
           {"tv", report.tv},
           {"terminals", terminals}};
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write oracle report " + path.string());
    out << j.dump(2) << '\n';
}

}  // namespace gdpo
