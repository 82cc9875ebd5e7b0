#include "adpo/policy.hpp"

#include <cmath>

namespace adpo::policy {

NeuralPolicy::Layout NeuralPolicy::make_layout(std::size_t vocab, std::size_t resp, std::size_t max_len,
                                               NeuralShape s) {
    Layout l{};
    std::size_t off = 0;
    l.e_ctx = off;
    off += vocab * s.embed_dim;
    l.e_in = off;
    off += vocab * s.embed_dim;
    l.pos = off;
    off += max_len * s.embed_dim;
    l.w1 = off;
    off += s.hidden_dim * s.embed_dim;
    l.b1 = off;
    off += s.hidden_dim;
    l.w2 = off;
    off += resp * s.hidden_dim;
    l.b2 = off;
    off += resp;
    l.total = off;
    return l;
}

NeuralPolicy::NeuralPolicy(std::shared_ptr<const Vocabulary> vocab, std::size_t max_len, NeuralShape shape)
    : Policy(vocab, max_len, 0),
      shape_(shape),
      layout_(make_layout(vocab->size(), vocab->response_tokens().size(), max_len, shape)),
      n_resp_(vocab->response_tokens().size()) {
    if (shape.embed_dim == 0 || shape.hidden_dim == 0) {
        throw InvalidArgument("neural policy dimensions must be positive");
    }
    params_.assign(layout_.total, 0.0);
}

NeuralPolicy::NeuralPolicy(std::shared_ptr<const Vocabulary> vocab, std::size_t max_len, NeuralShape shape,
                           std::uint64_t init_seed, double init_scale)
    : NeuralPolicy(std::move(vocab), max_len, shape) {
    Rng rng(init_seed);
    const double w1_scale = 1.0 / std::sqrt(static_cast<double>(shape_.embed_dim));
    for (std::size_t i = 0; i < layout_.total; ++i) {
        if (i >= layout_.b1 && i < layout_.w2) continue;  // b1
        if (i >= layout_.b2) continue;                    // b2
        const double scale = (i >= layout_.w1 && i < layout_.b1) ? w1_scale : init_scale;
        params_[i] = scale * rng.normal();
    }
}

std::vector<double> NeuralPolicy::encode(const corpus::ContextView& view) const {
    const std::size_t d = shape_.embed_dim;
    std::vector<double> c(d, 0.0);
    if (!view.final_human.empty()) {
        const double inv = 1.0 / static_cast<double>(view.final_human.size());
        for (TokenId w : view.final_human) {
            const double* e = params_.data() + layout_.e_ctx + static_cast<std::size_t>(w) * d;
            for (std::size_t i = 0; i < d; ++i) c[i] += inv * e[i];
        }
    }
    if (view.control) {
        const double* e = params_.data() + layout_.e_ctx + static_cast<std::size_t>(vocab_->control_token()) * d;
        for (std::size_t i = 0; i < d; ++i) c[i] += e[i];
    }
    return c;
}

void NeuralPolicy::forward(const std::vector<double>& c, TokenId prev, std::size_t pos, Step& out) const {
    const std::size_t d = shape_.embed_dim;
    const std::size_t hd = shape_.hidden_dim;
    const double* p = params_.data();
    out.a.assign(d, 0.0);
    const double* ein = p + layout_.e_in + static_cast<std::size_t>(prev) * d;
    const double* pe = p + layout_.pos + pos * d;
    for (std::size_t i = 0; i < d; ++i) out.a[i] = c[i] + ein[i] + pe[i];
    out.h.assign(hd, 0.0);
    for (std::size_t j = 0; j < hd; ++j) {
        const double* row = p + layout_.w1 + j * d;
        double s = p[layout_.b1 + j];
        for (std::size_t i = 0; i < d; ++i) s += row[i] * out.a[i];
        out.h[j] = std::tanh(s);
    }
    out.logits.assign(n_resp_, 0.0);
    for (std::size_t r = 0; r < n_resp_; ++r) {
        const double* row = p + layout_.w2 + r * hd;
        double s = p[layout_.b2 + r];
        for (std::size_t j = 0; j < hd; ++j) s += row[j] * out.h[j];
        out.logits[r] = s;
    }
}

std::vector<double> NeuralPolicy::next_logits(const Context& x, std::span<const TokenId> prefix) const {
    if (prefix.size() >= max_len_) {
        throw InvalidArgument("response prefix already at maximum length");
    }
    const auto c = encode(corpus::parse_context(*vocab_, x));
    const TokenId prev = prefix.empty() ? vocab_->assistant_marker() : prefix.back();
    Step s;
    forward(c, prev, prefix.size(), s);
    return s.logits;
}

double NeuralPolicy::conditioned_log_prob(const Context& x, std::span<const TokenId> y) const {
    check_response(y);
    const auto c = encode(corpus::parse_context(*vocab_, x));
    Step s;
    double lp = 0.0;
    for (std::size_t k = 0; k < y.size(); ++k) {
        const TokenId prev = k == 0 ? vocab_->assistant_marker() : y[k - 1];
        forward(c, prev, k, s);
        const auto ls = log_softmax(s.logits);
        lp += ls[static_cast<std::size_t>(vocab_->response_index(y[k]))];
    }
    return lp;
}

void NeuralPolicy::accumulate_log_prob_grad(const Context& x, std::span<const TokenId> y, double scale,
                                            std::span<double> grad) const {
    check_response(y);
    const std::size_t d = shape_.embed_dim;
    const std::size_t hd = shape_.hidden_dim;
    const corpus::ContextView view = corpus::parse_context(*vocab_, x);
    const auto c = encode(view);
    const double* p = params_.data();
    double* g = grad.data();

    std::vector<double> dc(d, 0.0);
    std::vector<double> dlogits(n_resp_);
    std::vector<double> dpre(hd);
    std::vector<double> da(d);
    Step s;
    for (std::size_t k = 0; k < y.size(); ++k) {
        const TokenId prev = k == 0 ? vocab_->assistant_marker() : y[k - 1];
        forward(c, prev, k, s);
        const auto ls = log_softmax(s.logits);
        const auto target = static_cast<std::size_t>(vocab_->response_index(y[k]));
        for (std::size_t r = 0; r < n_resp_; ++r) {
            dlogits[r] = scale * ((r == target ? 1.0 : 0.0) - std::exp(ls[r]));
        }
        std::fill(dpre.begin(), dpre.end(), 0.0);
        for (std::size_t r = 0; r < n_resp_; ++r) {
            const double dl = dlogits[r];
            g[layout_.b2 + r] += dl;
            double* gw = g + layout_.w2 + r * hd;
            const double* w = p + layout_.w2 + r * hd;
            for (std::size_t j = 0; j < hd; ++j) {
                gw[j] += dl * s.h[j];
                dpre[j] += dl * w[j];
            }
        }
        for (std::size_t j = 0; j < hd; ++j) {
            dpre[j] *= 1.0 - s.h[j] * s.h[j];
        }
        std::fill(da.begin(), da.end(), 0.0);
        for (std::size_t j = 0; j < hd; ++j) {
            const double dp = dpre[j];
            g[layout_.b1 + j] += dp;
            double* gw = g + layout_.w1 + j * d;
            const double* w = p + layout_.w1 + j * d;
            for (std::size_t i = 0; i < d; ++i) {
                gw[i] += dp * s.a[i];
                da[i] += dp * w[i];
            }
        }
        double* gin = g + layout_.e_in + static_cast<std::size_t>(prev) * d;
        double* gpos = g + layout_.pos + k * d;
        for (std::size_t i = 0; i < d; ++i) {
            gin[i] += da[i];
            gpos[i] += da[i];
            dc[i] += da[i];
        }
    }
    if (!view.final_human.empty()) {
        const double inv = 1.0 / static_cast<double>(view.final_human.size());
        for (TokenId w : view.final_human) {
            double* ge = g + layout_.e_ctx + static_cast<std::size_t>(w) * d;
            for (std::size_t i = 0; i < d; ++i) ge[i] += inv * dc[i];
        }
    }
    if (view.control) {
        double* ge = g + layout_.e_ctx + static_cast<std::size_t>(vocab_->control_token()) * d;
        for (std::size_t i = 0; i < d; ++i) ge[i] += dc[i];
    }
}

nlohmann::json NeuralPolicy::architecture() const {
    return {{"max_response_len", max_len_}, {"embed_dim", shape_.embed_dim}, {"hidden_dim", shape_.hidden_dim}};
}

} // namespace adpo::policy
