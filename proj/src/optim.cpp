#include "adpo/optim.hpp"

#include "adpo/common.hpp"

#include <cmath>

namespace adpo::optim {

const char* to_string(OptimizerKind k) {
    return k == OptimizerKind::sgd ? "sgd" : "adam";
}

const char* to_string(Schedule s) {
    return s == Schedule::constant ? "constant" : "linear";
}

OptimizerKind optimizer_from_string(const std::string& s) {
    if (s == "sgd") return OptimizerKind::sgd;
    if (s == "adam") return OptimizerKind::adam;
    throw InvalidArgument("unknown optimizer '" + s + "' (expected sgd or adam)");
}

Schedule schedule_from_string(const std::string& s) {
    if (s == "constant") return Schedule::constant;
    if (s == "linear") return Schedule::linear_decay;
    throw InvalidArgument("unknown schedule '" + s + "' (expected constant or linear)");
}

double scheduled_rate(double base, Schedule schedule, std::size_t step, std::size_t total_steps) {
    if (schedule == Schedule::constant || total_steps == 0) {
        return base;
    }
    const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
    return base * std::max(0.0, 1.0 - frac);
}

void Sgd::compute_step(std::span<const double> grad, double lr, std::span<double> step) {
    for (std::size_t i = 0; i < grad.size(); ++i) {
        step[i] = lr * grad[i];
    }
}

Adam::Adam(std::size_t n, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

void Adam::compute_step(std::span<const double> grad, double lr, std::span<double> step) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < grad.size(); ++i) {
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
        step[i] = lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
}

std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind, std::size_t n_params) {
    if (kind == OptimizerKind::sgd) {
        return std::make_unique<Sgd>();
    }
    return std::make_unique<Adam>(n_params);
}

} // namespace adpo::optim
