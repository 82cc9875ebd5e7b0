#include "adpo/sft.hpp"

#include "adpo/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace adpo::sft {

using policy::Role;

void SftConfig::validate() const {
    if (epochs < 1) {
        throw InvalidArgument("sft: epochs must be at least 1");
    }
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
        throw InvalidArgument("sft: validation fraction must lie in [0, 1)");
    }
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw InvalidArgument("sft: learning rate must be positive");
    }
    if (batch_size == 0) {
        throw InvalidArgument("sft: batch size must be positive");
    }
}

nlohmann::json SftConfig::to_json() const {
    return {{"epochs", epochs},
            {"learning_rate", learning_rate},
            {"batch_size", batch_size},
            {"validation_fraction", validation_fraction},
            {"optimizer", optim::to_string(optimizer)},
            {"schedule", optim::to_string(schedule)}};
}

SftConfig SftConfig::from_json(const nlohmann::json& j) {
    SftConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
    if (j.contains("optimizer")) c.optimizer = optim::optimizer_from_string(j.at("optimizer").get<std::string>());
    if (j.contains("schedule")) c.schedule = optim::schedule_from_string(j.at("schedule").get<std::string>());
    return c;
}

Dialogue augment_toxic(const corpus::Vocabulary& vocab, const Dialogue& d) {
    corpus::validate_dialogue(d);
    if (!d.final_toxic) {
        throw InvalidArgument("augment_toxic: dialogue is not labelled toxic");
    }
    for (const auto& t : d.turns) {
        if (std::find(t.tokens.begin(), t.tokens.end(), vocab.control_token()) != t.tokens.end()) {
            throw InvalidArgument("augment_toxic: control token already present");
        }
    }
    Dialogue out = d;
    // The final human turn directly precedes the final assistant turn.
    out.turns[out.turns.size() - 2].tokens.push_back(vocab.control_token());
    return out;
}

std::size_t assistant_token_count(const Dialogue& d) {
    std::size_t n = 0;
    for (const auto& t : d.turns) {
        if (t.speaker == corpus::Speaker::assistant) n += t.tokens.size() + 1;
    }
    return n;
}

double sft_loss(const policy::Policy& policy, const Dialogue& d) {
    corpus::validate_dialogue(d);
    const auto& vocab = policy.vocab();
    double nll = 0.0;
    for (std::size_t i = 0; i < d.turns.size(); ++i) {
        if (d.turns[i].speaker != corpus::Speaker::assistant) continue;
        const Context x = corpus::context_before(vocab, d, i);
        const Response y = corpus::response_of(vocab, d.turns[i]);
        nll -= policy::log_prob(policy, Role::theta, x, y);
    }
    return nll;
}

void accumulate_sft_grad(const policy::Policy& policy, const Dialogue& d, double scale, std::span<double> grad) {
    corpus::validate_dialogue(d);
    const auto& vocab = policy.vocab();
    for (std::size_t i = 0; i < d.turns.size(); ++i) {
        if (d.turns[i].speaker != corpus::Speaker::assistant) continue;
        const Context x = corpus::context_before(vocab, d, i);
        const Response y = corpus::response_of(vocab, d.turns[i]);
        policy::accumulate_log_prob_grad(policy, Role::theta, x, y, -scale, grad);
    }
}

nlohmann::json EpochMetrics::to_json() const {
    return {{"epoch", epoch}, {"train_nll", train_nll}, {"val_nll", val_nll}};
}

double mean_token_nll(const policy::Policy& policy, std::span<const Dialogue> dialogues) {
    double nll = 0.0;
    std::size_t tokens = 0;
    for (const auto& d : dialogues) {
        nll += sft_loss(policy, d);
        tokens += assistant_token_count(d);
    }
    return tokens == 0 ? 0.0 : nll / static_cast<double>(tokens);
}

SftResult train_sft(const policy::Policy& init, std::span<const Dialogue> normal, std::span<const Dialogue> toxic,
                    const SftConfig& config) {
    config.validate();
    if (normal.empty() && toxic.empty()) {
        throw EmptyDataset("sft: combined corpus is empty");
    }
    const auto& vocab = init.vocab();
    std::vector<Dialogue> all(normal.begin(), normal.end());
    for (const auto& d : toxic) {
        all.push_back(augment_toxic(vocab, d));
    }
    Rng split_rng(derive_seed(config.seed, "sft-split"));
    split_rng.shuffle(std::span<Dialogue>(all));
    const auto n_val = static_cast<std::size_t>(std::floor(config.validation_fraction * static_cast<double>(all.size()) + 1e-9));
    std::vector<Dialogue> val(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<Dialogue> train(all.begin() + static_cast<std::ptrdiff_t>(n_val), all.end());
    if (train.empty()) {
        throw EmptyDataset("sft: no training dialogues after the validation split");
    }

    SftResult result;
    result.trained = init.thaw();
    result.n_train = train.size();
    result.n_val = val.size();
    result.initial_train_nll = mean_token_nll(*result.trained, train);
    result.initial_val_nll = mean_token_nll(*result.trained, val);

    policy::Policy& theta = *result.trained;
    auto optimizer = optim::make_optimizer(config.optimizer, theta.num_params());
    const std::size_t batches_per_epoch = (train.size() + config.batch_size - 1) / config.batch_size;
    const std::size_t total_steps = batches_per_epoch * config.epochs;
    std::vector<double> grad(theta.num_params());
    std::vector<double> step(theta.num_params());
    std::vector<std::size_t> order(train.size());
    std::size_t global_step = 0;
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        Rng epoch_rng(derive_seed(config.seed, epoch));
        epoch_rng.shuffle(std::span<std::size_t>(order));
        for (std::size_t b = 0; b < batches_per_epoch; ++b) {
            const std::size_t lo = b * config.batch_size;
            const std::size_t hi = std::min(order.size(), lo + config.batch_size);
            std::size_t tokens = 0;
            for (std::size_t i = lo; i < hi; ++i) tokens += assistant_token_count(train[order[i]]);
            std::fill(grad.begin(), grad.end(), 0.0);
            const double scale = 1.0 / static_cast<double>(tokens);
            for (std::size_t i = lo; i < hi; ++i) {
                accumulate_sft_grad(theta, train[order[i]], scale, grad);
            }
            const double lr = optim::scheduled_rate(config.learning_rate, config.schedule, global_step, total_steps);
            optimizer->compute_step(grad, lr, step);
            policy::apply_update(theta, Role::theta, step);
            ++global_step;
        }
        EpochMetrics m;
        m.epoch = epoch;
        m.train_nll = mean_token_nll(theta, train);
        m.val_nll = mean_token_nll(theta, val);
        if (!std::isfinite(m.train_nll)) {
            throw NonFiniteError("sft: non-finite training NLL at epoch " + std::to_string(epoch));
        }
        result.epochs.push_back(m);
    }
    result.snapshot = theta.freeze();
    return result;
}

} // namespace adpo::sft
