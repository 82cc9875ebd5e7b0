#include "adpo/policy.hpp"

#include <algorithm>
#include <cmath>

namespace adpo::policy {

TabularPolicy::TabularPolicy(std::shared_ptr<const Vocabulary> vocab, std::vector<TokenSeq> keys,
                             std::size_t max_len)
    : Policy(vocab, max_len, 0), n_resp_(vocab->response_tokens().size()) {
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    if (keys.empty()) {
        throw InvalidArgument("tabular policy needs at least one context key");
    }
    keys_ = std::move(keys);
    for (std::size_t i = 0; i < keys_.size(); ++i) {
        key_index_.emplace(keys_[i], i);
    }
    params_.assign(keys_.size() * 2 * max_len_ * n_resp_, 0.0);
}

std::vector<TokenSeq> TabularPolicy::keys_for(const Vocabulary& vocab, std::span<const Context> contexts) {
    std::vector<TokenSeq> keys;
    keys.reserve(contexts.size());
    for (const Context& x : contexts) {
        keys.push_back(corpus::parse_context(vocab, x).final_human);
    }
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    return keys;
}

std::size_t TabularPolicy::key_index(const Context& x) const {
    return slice(x).key;
}

TabularPolicy::Slice TabularPolicy::slice(const Context& x) const {
    const corpus::ContextView view = corpus::parse_context(*vocab_, x);
    auto it = key_index_.find(view.final_human);
    if (it == key_index_.end()) {
        throw UnknownContext("context key '" + corpus::detokenize(*vocab_, view.final_human) +
                             "' unknown to tabular policy");
    }
    return {it->second, view.control};
}

std::size_t TabularPolicy::row_offset(std::size_t key, bool control_slot, std::size_t position) const {
    return ((key * 2 + (control_slot ? 1 : 0)) * max_len_ + position) * n_resp_;
}

void TabularPolicy::logits_at(const Slice& s, std::size_t pos, std::span<double> out) const {
    const double* base = params_.data() + row_offset(s.key, false, pos);
    for (std::size_t r = 0; r < n_resp_; ++r) out[r] = base[r];
    if (s.control) {
        const double* ctrl = params_.data() + row_offset(s.key, true, pos);
        for (std::size_t r = 0; r < n_resp_; ++r) out[r] += ctrl[r];
    }
}

std::vector<double> TabularPolicy::next_logits(const Context& x, std::span<const TokenId> prefix) const {
    if (prefix.size() >= max_len_) {
        throw InvalidArgument("response prefix already at maximum length");
    }
    std::vector<double> out(n_resp_);
    logits_at(slice(x), prefix.size(), out);
    return out;
}

double TabularPolicy::conditioned_log_prob(const Context& x, std::span<const TokenId> y) const {
    check_response(y);
    const Slice s = slice(x);
    std::vector<double> logits(n_resp_);
    double lp = 0.0;
    for (std::size_t k = 0; k < y.size(); ++k) {
        logits_at(s, k, logits);
        const auto ls = log_softmax(logits);
        lp += ls[static_cast<std::size_t>(vocab_->response_index(y[k]))];
    }
    return lp;
}

void TabularPolicy::accumulate_log_prob_grad(const Context& x, std::span<const TokenId> y, double scale,
                                             std::span<double> grad) const {
    check_response(y);
    const Slice s = slice(x);
    std::vector<double> logits(n_resp_);
    for (std::size_t k = 0; k < y.size(); ++k) {
        logits_at(s, k, logits);
        const auto ls = log_softmax(logits);
        const auto target = static_cast<std::size_t>(vocab_->response_index(y[k]));
        // d log softmax_target / d logit_r = [r == target] - p_r
        for (int slot = 0; slot < (s.control ? 2 : 1); ++slot) {
            double* g = grad.data() + row_offset(s.key, slot == 1, k);
            for (std::size_t r = 0; r < n_resp_; ++r) {
                const double d = (r == target ? 1.0 : 0.0) - std::exp(ls[r]);
                g[r] += scale * d;
            }
        }
    }
}

nlohmann::json TabularPolicy::architecture() const {
    nlohmann::json keys = nlohmann::json::array();
    for (const auto& k : keys_) {
        keys.push_back(corpus::detokenize(*vocab_, k));
    }
    return {{"max_response_len", max_len_}, {"keys", keys}};
}

} // namespace adpo::policy
