#include "adpo/policy.hpp"

#include "adpo/hashing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace adpo::policy {

const char* to_string(Backend b) {
    return b == Backend::tabular ? "tabular" : "neural";
}

const char* to_string(Role r) {
    switch (r) {
    case Role::theta:
        return "theta";
    case Role::ref:
        return "ref";
    case Role::tox:
        return "tox";
    }
    return "?";
}

Backend backend_from_string(const std::string& s) {
    if (s == "tabular") return Backend::tabular;
    if (s == "neural") return Backend::neural;
    throw InvalidArgument("unknown backend '" + s + "'");
}

Policy::Policy(std::shared_ptr<const Vocabulary> vocab, std::size_t max_len, std::size_t n_params)
    : vocab_(std::move(vocab)), max_len_(max_len), params_(n_params, 0.0) {
    if (!vocab_) {
        throw InvalidArgument("policy needs a vocabulary");
    }
    if (max_len_ == 0) {
        throw InvalidArgument("policy max response length must be positive");
    }
}

std::span<double> Policy::mutable_params() {
    if (frozen_) {
        throw FrozenPolicyError("parameter update on a frozen policy snapshot");
    }
    return params_;
}

std::shared_ptr<const Policy> Policy::freeze() const {
    std::unique_ptr<Policy> copy = clone();
    copy->frozen_ = true;
    return std::shared_ptr<const Policy>(std::move(copy));
}

std::unique_ptr<Policy> Policy::thaw() const {
    std::unique_ptr<Policy> copy = clone();
    copy->frozen_ = false;
    return copy;
}

std::string Policy::param_hash() const {
    return sha256_hex(std::span<const double>(params_));
}

void Policy::check_response(std::span<const TokenId> y) const {
    if (y.empty()) {
        throw InvalidArgument("response must be nonempty");
    }
    if (y.size() > max_len_) {
        throw InvalidArgument("response length " + std::to_string(y.size()) + " exceeds policy maximum " +
                              std::to_string(max_len_));
    }
    for (TokenId t : y) {
        if (vocab_->response_index(t) < 0) {
            throw OutOfVocabulary("token id " + std::to_string(t) + " is not a response token");
        }
    }
}

double Policy::conditioned_log_prob(const Context& x, std::span<const TokenId> y) const {
    check_response(y);
    double lp = 0.0;
    for (std::size_t k = 0; k < y.size(); ++k) {
        const auto logits = next_logits(x, y.first(k));
        const auto ls = log_softmax(logits);
        lp += ls[static_cast<std::size_t>(vocab_->response_index(y[k]))];
    }
    return lp;
}

std::vector<double> log_softmax(std::span<const double> logits) {
    double m = -std::numeric_limits<double>::infinity();
    for (double z : logits) m = std::max(m, z);
    double s = 0.0;
    for (double z : logits) s += std::exp(z - m);
    const double lse = m + std::log(s);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
    return out;
}

Context apply_control_token(const Vocabulary& vocab, const Context& x) {
    corpus::parse_context(vocab, x);
    if (std::find(x.tokens.begin(), x.tokens.end(), vocab.control_token()) != x.tokens.end()) {
        throw InvalidArgument("context already carries the control token");
    }
    Context out = x;
    out.tokens.insert(out.tokens.end() - 1, vocab.control_token());
    return out;
}

Context condition(const Vocabulary& vocab, Role role, const Context& x) {
    return role == Role::tox ? apply_control_token(vocab, x) : x;
}

double log_prob(const Policy& policy, Role role, const Context& x, const Response& y) {
    const double lp = policy.conditioned_log_prob(condition(policy.vocab(), role, x), y.tokens);
    if (!std::isfinite(lp)) {
        throw NonFiniteError("non-finite log-probability");
    }
    return lp;
}

void accumulate_log_prob_grad(const Policy& policy, Role role, const Context& x, const Response& y,
                              double scale, std::span<double> grad) {
    if (is_frozen_role(role) || policy.frozen()) {
        throw FrozenPolicyError(std::string("no gradients for frozen role ") + to_string(role));
    }
    if (grad.size() != policy.num_params()) {
        throw InvalidArgument("gradient buffer size mismatch");
    }
    policy.accumulate_log_prob_grad(condition(policy.vocab(), role, x), y.tokens, scale, grad);
}

Response sample(const Policy& policy, Role role, const Context& x, const SampleOptions& opts, Rng& rng) {
    if (!opts.greedy && !(opts.temperature > 0.0)) {
        throw InvalidArgument("sampling temperature must be positive (or use greedy decoding)");
    }
    const Vocabulary& vocab = policy.vocab();
    const Context cx = condition(vocab, role, x);
    const auto& resp = vocab.response_tokens();
    Response y;
    std::vector<double> probs(resp.size());
    for (std::size_t k = 0; k < policy.max_response_len(); ++k) {
        const auto logits = policy.next_logits(cx, y.tokens);
        std::size_t pick = 0;
        if (opts.greedy) {
            pick = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
        } else {
            std::vector<double> scaled(logits.size());
            for (std::size_t i = 0; i < logits.size(); ++i) scaled[i] = logits[i] / opts.temperature;
            const auto ls = log_softmax(scaled);
            double total = 0.0;
            for (std::size_t i = 0; i < ls.size(); ++i) {
                probs[i] = std::exp(ls[i]);
                total += probs[i];
            }
            const double u = rng.uniform() * total;
            double acc = 0.0;
            pick = probs.size() - 1;
            for (std::size_t i = 0; i < probs.size(); ++i) {
                acc += probs[i];
                if (u < acc) {
                    pick = i;
                    break;
                }
            }
        }
        y.tokens.push_back(resp[pick]);
        if (resp[pick] == vocab.end_marker()) {
            break;
        }
    }
    return y;
}

Response sample(const Policy& policy, Role role, const Context& x, const SampleOptions& opts,
                std::uint64_t seed) {
    Rng rng(seed);
    return sample(policy, role, x, opts, rng);
}

void apply_update(Policy& policy, Role role, std::span<const double> step) {
    if (is_frozen_role(role)) {
        throw FrozenPolicyError(std::string("role ") + to_string(role) + " is frozen");
    }
    auto p = policy.mutable_params();
    if (step.size() != p.size()) {
        throw InvalidArgument("update size mismatch");
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] -= step[i];
    }
}

} // namespace adpo::policy
