#pragma once

#include "adpo/losses.hpp"
#include "adpo/optim.hpp"
#include "adpo/policy.hpp"
#include "adpo/types.hpp"

#include "json.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace adpo::train {

using losses::Method;

struct TrainerConfig {
    Method method = Method::adpo;
    double beta = 0.3;
    double gamma = 0.2;  // ignored and reported as 0 for DPO
    std::size_t epochs = 4;
    double learning_rate = 3e-5;
    optim::Schedule schedule = optim::Schedule::linear_decay;
    std::size_t batch_size = 16;  // 0 = full batch
    std::uint64_t seed = 42;
    double validation_fraction = 0.2;
    // Unset picks SGD for tabular policies and Adam for neural ones.
    std::optional<optim::OptimizerKind> optimizer;
    losses::LossVariant variant = losses::LossVariant::main_text;

    static TrainerConfig defaults(Method m);
    void validate() const;
    losses::Objective objective() const;
    nlohmann::json to_json() const;
    // Missing fields take the per-method defaults.
    static TrainerConfig from_json(const nlohmann::json& j);
};

struct Split {
    std::vector<PreferenceRecord> train;
    std::vector<PreferenceRecord> validation;
};

// Seeded shuffle, then the first floor(fraction * n) records validate.
Split split_dataset(std::span<const PreferenceRecord> records, double validation_fraction, std::uint64_t seed);

struct KlPair {
    double chosen_kl = 0.0;
    double toxic_kl = 0.0;
};

// chosen_kl = mean[log pi_theta(y_w|x) - log pi_ref(y_w|x)],
// toxic_kl  = mean[log pi_theta(y_t|x) - log pi_tox(y_t|x)].
// Sequence-level log-ratios; they may be negative.
KlPair kl_trace_step(const policy::Policy& theta, const policy::Policy& snapshot,
                     std::span<const PreferenceRecord> batch);

enum class RangeStatus { in, out };
inline constexpr double kKlRangeLow = -2.0;
inline constexpr double kKlRangeHigh = 1.0;
RangeStatus range_check(double chosen_kl);

struct StepRecord {
    std::size_t step = 0;
    double chosen_kl = 0.0;
    double toxic_kl = 0.0;
    double train_loss = 0.0;  // batch loss before the update
    double val_loss = 0.0;    // validation loss after the update
    nlohmann::json to_json() const;
};

struct EpochSummary {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    nlohmann::json to_json() const;
};

struct TrainResult {
    std::unique_ptr<policy::Policy> trained;     // parameters after the last step
    std::unique_ptr<policy::Policy> best;        // lowest validation loss at an epoch end
    std::size_t best_epoch = 0;
    double best_val_loss = 0.0;
    std::vector<StepRecord> trace;
    std::vector<EpochSummary> epochs;
    std::size_t n_train = 0;
    std::size_t n_val = 0;
};

struct TrainHooks {
    // Called after every update with the step record and current policy.
    std::function<void(const StepRecord&, const policy::Policy&)> on_step;
    // Directory for a diagnostic dump when the loss turns non-finite.
    std::optional<std::filesystem::path> dump_dir;
};

// Starts pi_theta from the snapshot and optimises the configured objective.
// Validation losses fall back to the training set when the split leaves
// no validation records.
TrainResult train(std::shared_ptr<const policy::Policy> snapshot, std::span<const PreferenceRecord> dataset,
                  const TrainerConfig& config, const TrainHooks& hooks = {});

void write_trace_jsonl(const std::filesystem::path& path, std::span<const StepRecord> trace);

} // namespace adpo::train
