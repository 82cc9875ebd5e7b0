#include "adpo/train.hpp"

#include "adpo/rng.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

namespace adpo::train {

using nlohmann::json;
using policy::Role;

TrainerConfig TrainerConfig::defaults(Method m) {
    TrainerConfig c;
    c.method = m;
    if (m == Method::dpo) {
        c.beta = 0.9;
        c.gamma = 0.0;
        c.epochs = 2;
    } else {
        c.beta = 0.3;
        c.gamma = 0.2;
        c.epochs = 4;
    }
    return c;
}

void TrainerConfig::validate() const {
    losses::Hyper{beta, method == Method::dpo ? 0.0 : gamma}.validate();
    if (epochs < 1) {
        throw InvalidArgument("train: epochs must be at least 1");
    }
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw InvalidArgument("train: learning rate must be positive");
    }
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
        throw InvalidArgument("train: validation fraction must lie in [0, 1)");
    }
}

losses::Objective TrainerConfig::objective() const {
    return {method, {beta, method == Method::dpo ? 0.0 : gamma}, variant};
}

json TrainerConfig::to_json() const {
    json j{{"method", losses::to_string(method)},
           {"beta", beta},
           {"gamma", method == Method::dpo ? 0.0 : gamma},
           {"epochs", epochs},
           {"learning_rate", learning_rate},
           {"schedule", optim::to_string(schedule)},
           {"batch_size", batch_size},
           {"seed", seed},
           {"validation_fraction", validation_fraction},
           {"variant", variant == losses::LossVariant::main_text ? "main" : "appendix"}};
    if (optimizer) j["optimizer"] = optim::to_string(*optimizer);
    return j;
}

TrainerConfig TrainerConfig::from_json(const json& j) {
    if (!j.is_object()) {
        throw InvalidArgument("train config must be a JSON object");
    }
    auto field = [&](const char* name) -> const json* {
        return j.contains(name) ? &j.at(name) : nullptr;
    };
    try {
        const Method m = j.contains("method") ? losses::method_from_string(j.at("method").get<std::string>())
                                              : Method::adpo;
        TrainerConfig c = defaults(m);
        if (auto* v = field("beta")) c.beta = v->get<double>();
        if (auto* v = field("gamma")) c.gamma = v->get<double>();
        if (m == Method::dpo) c.gamma = 0.0;
        if (auto* v = field("epochs")) c.epochs = v->get<std::size_t>();
        if (auto* v = field("learning_rate")) c.learning_rate = v->get<double>();
        if (auto* v = field("schedule")) c.schedule = optim::schedule_from_string(v->get<std::string>());
        if (auto* v = field("batch_size")) c.batch_size = v->get<std::size_t>();
        if (auto* v = field("seed")) c.seed = v->get<std::uint64_t>();
        if (auto* v = field("validation_fraction")) c.validation_fraction = v->get<double>();
        if (auto* v = field("optimizer")) c.optimizer = optim::optimizer_from_string(v->get<std::string>());
        if (auto* v = field("variant")) {
            const auto s = v->get<std::string>();
            if (s == "main") {
                c.variant = losses::LossVariant::main_text;
            } else if (s == "appendix") {
                c.variant = losses::LossVariant::appendix;
            } else {
                throw InvalidArgument("train.variant must be 'main' or 'appendix', got '" + s + "'");
            }
        }
        c.validate();
        return c;
    } catch (const json::exception& e) {
        throw InvalidArgument(std::string("train config: ") + e.what());
    }
}

Split split_dataset(std::span<const PreferenceRecord> records, double validation_fraction, std::uint64_t seed) {
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
        throw InvalidArgument("validation fraction must lie in [0, 1)");
    }
    std::vector<std::size_t> order(records.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, "pref-split"));
    rng.shuffle(std::span<std::size_t>(order));
    const auto n_val =
        static_cast<std::size_t>(std::floor(validation_fraction * static_cast<double>(records.size()) + 1e-9));
    Split s;
    for (std::size_t i = 0; i < order.size(); ++i) {
        (i < n_val ? s.validation : s.train).push_back(records[order[i]]);
    }
    return s;
}

KlPair kl_trace_step(const policy::Policy& theta, const policy::Policy& snapshot,
                     std::span<const PreferenceRecord> batch) {
    if (batch.empty()) {
        throw EmptyDataset("kl_trace_step on an empty batch");
    }
    double c = 0.0;
    double t = 0.0;
    for (const auto& r : batch) {
        c += policy::log_prob(theta, Role::theta, r.context, r.chosen) -
             policy::log_prob(snapshot, Role::ref, r.context, r.chosen);
        t += policy::log_prob(theta, Role::theta, r.context, r.toxic) -
             policy::log_prob(snapshot, Role::tox, r.context, r.toxic);
    }
    const double n = static_cast<double>(batch.size());
    KlPair out{c / n, t / n};
    if (!std::isfinite(out.chosen_kl) || !std::isfinite(out.toxic_kl)) {
        throw NonFiniteError("non-finite KL diagnostic");
    }
    return out;
}

RangeStatus range_check(double chosen_kl) {
    if (!std::isfinite(chosen_kl)) {
        throw InvalidArgument("range_check needs a finite value");
    }
    return chosen_kl >= kKlRangeLow && chosen_kl <= kKlRangeHigh ? RangeStatus::in : RangeStatus::out;
}

json StepRecord::to_json() const {
    return {{"step", step}, {"chosen_kl", chosen_kl}, {"toxic_kl", toxic_kl}, {"train_loss", train_loss},
            {"val_loss", val_loss}};
}

json EpochSummary::to_json() const {
    return {{"epoch", epoch}, {"train_loss", train_loss}, {"val_loss", val_loss}};
}

namespace {

void dump_divergence(const TrainHooks& hooks, const TrainerConfig& config, const policy::Policy& theta,
                     std::size_t step, std::span<const PreferenceRecord> batch, const std::string& what) {
    if (!hooks.dump_dir) return;
    std::filesystem::create_directories(*hooks.dump_dir);
    json batch_json = json::array();
    for (const auto& r : batch) {
        json b;
        try {
            const auto bundle = losses::make_bundle(theta, theta, r);
            b = {{"lp_theta_w", bundle.lp_theta_w}, {"lp_theta_l", bundle.lp_theta_l},
                 {"lp_theta_t", bundle.lp_theta_t}};
        } catch (const Error& e) {
            b = {{"error", e.what()}};
        }
        batch_json.push_back(b);
    }
    json dump{{"error", what},
              {"step", step},
              {"config", config.to_json()},
              {"param_hash", theta.param_hash()},
              {"batch", batch_json}};
    std::ofstream out(*hooks.dump_dir / "divergence.json");
    out << dump.dump(2) << '\n';
}

} // namespace

TrainResult train(std::shared_ptr<const policy::Policy> snapshot, std::span<const PreferenceRecord> dataset,
                  const TrainerConfig& config, const TrainHooks& hooks) {
    config.validate();
    if (!snapshot) {
        throw InvalidArgument("train: missing snapshot");
    }
    if (dataset.empty()) {
        throw EmptyDataset("train: preference dataset is empty");
    }
    if (!snapshot->frozen()) {
        snapshot = snapshot->freeze();
    }
    const Split split = split_dataset(dataset, config.validation_fraction, config.seed);
    if (split.train.empty()) {
        throw EmptyDataset("train: no training records after the validation split");
    }
    const std::vector<PreferenceRecord>& val = split.validation.empty() ? split.train : split.validation;
    const losses::Objective obj = config.objective();

    TrainResult result;
    result.trained = snapshot->thaw();
    result.n_train = split.train.size();
    result.n_val = split.validation.size();
    policy::Policy& theta = *result.trained;

    const auto kind = config.optimizer.value_or(
        theta.backend() == policy::Backend::tabular ? optim::OptimizerKind::sgd : optim::OptimizerKind::adam);
    auto optimizer = optim::make_optimizer(kind, theta.num_params());
    const std::size_t batch = config.batch_size == 0 ? split.train.size() : config.batch_size;
    const std::size_t batches_per_epoch = (split.train.size() + batch - 1) / batch;
    const std::size_t total_steps = batches_per_epoch * config.epochs;

    std::vector<double> step_vec(theta.num_params());
    std::vector<std::size_t> order(split.train.size());
    std::vector<PreferenceRecord> mb;
    std::size_t global_step = 0;
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        Rng epoch_rng(derive_seed(derive_seed(config.seed, "pref-epoch"), epoch));
        epoch_rng.shuffle(std::span<std::size_t>(order));
        double epoch_loss = 0.0;
        for (std::size_t b = 0; b < batches_per_epoch; ++b) {
            const std::size_t lo = b * batch;
            const std::size_t hi = std::min(order.size(), lo + batch);
            mb.clear();
            for (std::size_t i = lo; i < hi; ++i) mb.push_back(split.train[order[i]]);

            StepRecord rec;
            rec.step = global_step;
            losses::LossAndGrad lg;
            try {
                const KlPair kl = kl_trace_step(theta, *snapshot, mb);
                rec.chosen_kl = kl.chosen_kl;
                rec.toxic_kl = kl.toxic_kl;
                lg = losses::batch_loss_and_grad(theta, *snapshot, mb, obj);
            } catch (const NonFiniteError& e) {
                dump_divergence(hooks, config, theta, global_step, mb, e.what());
                throw NonFiniteError("train: non-finite loss at step " + std::to_string(global_step) + ": " +
                                     e.what());
            }
            rec.train_loss = lg.loss;
            epoch_loss += lg.loss * static_cast<double>(mb.size());

            const double lr = optim::scheduled_rate(config.learning_rate, config.schedule, global_step, total_steps);
            optimizer->compute_step(lg.grad, lr, step_vec);
            policy::apply_update(theta, Role::theta, step_vec);

            try {
                rec.val_loss = losses::batch_loss(theta, *snapshot, val, obj);
            } catch (const NonFiniteError& e) {
                dump_divergence(hooks, config, theta, global_step, mb, e.what());
                throw NonFiniteError("train: non-finite validation loss at step " + std::to_string(global_step));
            }
            if (!std::isfinite(rec.val_loss)) {
                dump_divergence(hooks, config, theta, global_step, mb, "non-finite validation loss");
                throw NonFiniteError("train: non-finite validation loss at step " + std::to_string(global_step));
            }
            result.trace.push_back(rec);
            if (hooks.on_step) hooks.on_step(rec, theta);
            ++global_step;
        }
        EpochSummary es;
        es.epoch = epoch;
        es.train_loss = epoch_loss / static_cast<double>(split.train.size());
        es.val_loss = result.trace.back().val_loss;
        result.epochs.push_back(es);
        if (!result.best || es.val_loss < result.best_val_loss) {
            result.best = theta.clone();
            result.best_epoch = epoch;
            result.best_val_loss = es.val_loss;
        }
    }
    return result;
}

void write_trace_jsonl(const std::filesystem::path& path, std::span<const StepRecord> trace) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    for (const auto& r : trace) {
        out << r.to_json().dump() << '\n';
    }
}

} // namespace adpo::train
