#pragma once

#include "adpo/corpus.hpp"
#include "adpo/rng.hpp"
#include "adpo/types.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace adpo::policy {

using corpus::Vocabulary;

enum class Backend { tabular, neural };

// THETA is the trainable policy. REF and TOX evaluate the frozen post-SFT
// snapshot; TOX additionally conditions on the control token.
enum class Role { theta, ref, tox };

constexpr bool is_frozen_role(Role r) { return r != Role::theta; }

const char* to_string(Backend b);
const char* to_string(Role r);
Backend backend_from_string(const std::string& s);

// Autoregressive response model over the response vocabulary. Parameters
// are one flat vector so trainers, oracles and snapshots share a layout.
class Policy {
public:
    virtual ~Policy() = default;

    virtual Backend backend() const = 0;
    virtual std::unique_ptr<Policy> clone() const = 0;

    // Logits over vocab().response_tokens() for the next response token.
    // `x` is used verbatim: conditioning has already been applied.
    virtual std::vector<double> next_logits(const Context& x, std::span<const TokenId> prefix) const = 0;

    // Adds scale * d log p(y | x) / d params into `grad`.
    virtual void accumulate_log_prob_grad(const Context& x, std::span<const TokenId> y, double scale,
                                          std::span<double> grad) const = 0;

    // Sequence log-probability (nats, no length normalisation) for an
    // already-conditioned context. Backends may override for speed.
    virtual double conditioned_log_prob(const Context& x, std::span<const TokenId> y) const;

    // Backend-specific shape description stored in snapshots.
    virtual nlohmann::json architecture() const = 0;

    const Vocabulary& vocab() const { return *vocab_; }
    std::shared_ptr<const Vocabulary> vocab_ptr() const { return vocab_; }
    std::size_t max_response_len() const { return max_len_; }
    std::size_t num_params() const { return params_.size(); }

    std::span<const double> params() const { return params_; }
    // Throws FrozenPolicyError on a frozen snapshot.
    std::span<double> mutable_params();

    bool frozen() const { return frozen_; }
    // Frozen copy sharing nothing mutable with this policy.
    std::shared_ptr<const Policy> freeze() const;
    // Trainable copy, also of a frozen snapshot.
    std::unique_ptr<Policy> thaw() const;

    std::string param_hash() const;

protected:
    Policy(std::shared_ptr<const Vocabulary> vocab, std::size_t max_len, std::size_t n_params);
    Policy(const Policy&) = default;

    void check_response(std::span<const TokenId> y) const;

    std::shared_ptr<const Vocabulary> vocab_;
    std::size_t max_len_;
    std::vector<double> params_;
    bool frozen_ = false;
};

// Logit table indexed by (context key, response position, token) with a
// second table added when the control token is present. The context key
// is the final human turn, so earlier history does not change the slice.
class TabularPolicy final : public Policy {
public:
    TabularPolicy(std::shared_ptr<const Vocabulary> vocab, std::vector<TokenSeq> keys, std::size_t max_len);

    // Keys covering the final human turn of every context given.
    static std::vector<TokenSeq> keys_for(const Vocabulary& vocab, std::span<const Context> contexts);

    Backend backend() const override { return Backend::tabular; }
    std::unique_ptr<Policy> clone() const override { return std::make_unique<TabularPolicy>(*this); }
    std::vector<double> next_logits(const Context& x, std::span<const TokenId> prefix) const override;
    void accumulate_log_prob_grad(const Context& x, std::span<const TokenId> y, double scale,
                                  std::span<double> grad) const override;
    double conditioned_log_prob(const Context& x, std::span<const TokenId> y) const override;
    nlohmann::json architecture() const override;

    const std::vector<TokenSeq>& keys() const { return keys_; }
    // Throws UnknownContext when the final human turn is not a known key.
    std::size_t key_index(const Context& x) const;
    // Offset of the logit row for (key, control slot, position).
    std::size_t row_offset(std::size_t key, bool control_slot, std::size_t position) const;
    std::size_t num_response_tokens() const { return n_resp_; }

private:
    struct Slice {
        std::size_t key;
        bool control;
    };
    Slice slice(const Context& x) const;
    void logits_at(const Slice& s, std::size_t pos, std::span<double> out) const;

    std::vector<TokenSeq> keys_;
    std::map<TokenSeq, std::size_t> key_index_;
    std::size_t n_resp_;
};

struct NeuralShape {
    std::size_t embed_dim = 24;
    std::size_t hidden_dim = 48;
};

// Bag-of-words context encoder plus a one-hidden-layer next-token network
// fed with the previous token and position:
//   c = mean(E_ctx[w] for w in final human turn) + [control] E_ctx[TOXIC]
//   a = c + E_in[prev] + P[pos]
//   h = tanh(W1 a + b1)
//   logits = W2 h + b2
class NeuralPolicy final : public Policy {
public:
    NeuralPolicy(std::shared_ptr<const Vocabulary> vocab, std::size_t max_len, NeuralShape shape,
                 std::uint64_t init_seed, double init_scale = 0.1);
    // Uninitialised (zero) parameters, used by snapshot loading.
    NeuralPolicy(std::shared_ptr<const Vocabulary> vocab, std::size_t max_len, NeuralShape shape);

    Backend backend() const override { return Backend::neural; }
    std::unique_ptr<Policy> clone() const override { return std::make_unique<NeuralPolicy>(*this); }
    std::vector<double> next_logits(const Context& x, std::span<const TokenId> prefix) const override;
    void accumulate_log_prob_grad(const Context& x, std::span<const TokenId> y, double scale,
                                  std::span<double> grad) const override;
    double conditioned_log_prob(const Context& x, std::span<const TokenId> y) const override;
    nlohmann::json architecture() const override;

    const NeuralShape& shape() const { return shape_; }

private:
    struct Layout {
        std::size_t e_ctx, e_in, pos, w1, b1, w2, b2, total;
    };
    static Layout make_layout(std::size_t vocab, std::size_t resp, std::size_t max_len, NeuralShape s);

    struct Step {
        std::vector<double> a;
        std::vector<double> h;
        std::vector<double> logits;
    };
    std::vector<double> encode(const corpus::ContextView& view) const;
    void forward(const std::vector<double>& c, TokenId prev, std::size_t pos, Step& out) const;

    NeuralShape shape_;
    Layout layout_;
    std::size_t n_resp_;
};

// ------------------------------------------------------------- role API

// Inserts the control token right after the final human turn, i.e. just
// before the assistant slot. Throws InvalidArgument if already present.
Context apply_control_token(const Vocabulary& vocab, const Context& x);

// Context as seen by `role`: TOX gets the control token, others unchanged.
Context condition(const Vocabulary& vocab, Role role, const Context& x);

double log_prob(const Policy& policy, Role role, const Context& x, const Response& y);

// Adds scale * d log p_role(y | x) / d params. Only THETA carries
// gradients; frozen roles throw FrozenPolicyError.
void accumulate_log_prob_grad(const Policy& policy, Role role, const Context& x, const Response& y,
                              double scale, std::span<double> grad);

struct SampleOptions {
    double temperature = 1.0;
    bool greedy = false;
};

// Draws tokens until the end marker or max_response_len(). The control
// token is only ever part of the conditioning, never of the output.
Response sample(const Policy& policy, Role role, const Context& x, const SampleOptions& opts, Rng& rng);
Response sample(const Policy& policy, Role role, const Context& x, const SampleOptions& opts,
                std::uint64_t seed);

// Applies params -= step; rejects frozen roles and frozen policies.
void apply_update(Policy& policy, Role role, std::span<const double> step);

// Numerically stable log-softmax.
std::vector<double> log_softmax(std::span<const double> logits);

// ------------------------------------------------------------- snapshots

nlohmann::json snapshot_to_json(const Policy& policy);
// Verifies the stored vocabulary hash against `vocab`.
std::unique_ptr<Policy> snapshot_from_json(const nlohmann::json& j, std::shared_ptr<const Vocabulary> vocab);

void save_snapshot(const std::filesystem::path& path, const Policy& policy);
std::unique_ptr<Policy> load_snapshot(const std::filesystem::path& path, std::shared_ptr<const Vocabulary> vocab);

} // namespace adpo::policy
