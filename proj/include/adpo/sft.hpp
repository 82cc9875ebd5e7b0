#pragma once

#include "adpo/corpus.hpp"
#include "adpo/optim.hpp"
#include "adpo/policy.hpp"

#include "json.hpp"

#include <memory>
#include <span>
#include <vector>

namespace adpo::sft {

using corpus::Dialogue;

struct SftConfig {
    std::size_t epochs = 2;
    double learning_rate = 0.05;
    std::size_t batch_size = 8;
    std::uint64_t seed = 42;
    double validation_fraction = 0.2;
    optim::OptimizerKind optimizer = optim::OptimizerKind::adam;
    optim::Schedule schedule = optim::Schedule::linear_decay;

    void validate() const;
    nlohmann::json to_json() const;
    static SftConfig from_json(const nlohmann::json& j);
};

// Inserts the control token after the final human turn of a toxic
// dialogue. Throws InvalidArgument for non-toxic dialogues or when the
// token is already present.
Dialogue augment_toxic(const corpus::Vocabulary& vocab, const Dialogue& d);

// Negative log-likelihood (nats) of every assistant turn, each followed by
// the end marker, given its history. Human tokens only condition.
double sft_loss(const policy::Policy& policy, const Dialogue& d);
std::size_t assistant_token_count(const Dialogue& d);

// Adds scale * d sft_loss / d params.
void accumulate_sft_grad(const policy::Policy& policy, const Dialogue& d, double scale, std::span<double> grad);

struct EpochMetrics {
    std::size_t epoch = 0;
    double train_nll = 0.0;  // per assistant token
    double val_nll = 0.0;
    nlohmann::json to_json() const;
};

struct SftResult {
    std::unique_ptr<policy::Policy> trained;
    // Frozen copy taken when training ends; serves as pi_ref and pi_tox.
    std::shared_ptr<const policy::Policy> snapshot;
    double initial_train_nll = 0.0;
    double initial_val_nll = 0.0;
    std::vector<EpochMetrics> epochs;
    std::size_t n_train = 0;
    std::size_t n_val = 0;
};

// Per-token NLL over a dialogue set; 0 for an empty set.
double mean_token_nll(const policy::Policy& policy, std::span<const Dialogue> dialogues);

// Mixes normal and control-token-augmented toxic dialogues into one
// shuffled stream per epoch. Throws EmptyDataset if both are empty.
SftResult train_sft(const policy::Policy& init, std::span<const Dialogue> normal,
                    std::span<const Dialogue> toxic, const SftConfig& config);

} // namespace adpo::sft
