#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace adpo::optim {

enum class OptimizerKind { sgd, adam };
enum class Schedule { constant, linear_decay };

const char* to_string(OptimizerKind k);
const char* to_string(Schedule s);
OptimizerKind optimizer_from_string(const std::string& s);
Schedule schedule_from_string(const std::string& s);

// Learning rate for step `step` of `total_steps` (0-based). Linear decay
// goes from the base rate at step 0 towards zero at total_steps.
double scheduled_rate(double base, Schedule schedule, std::size_t step, std::size_t total_steps);

// Turns a gradient into the parameter decrement (params -= step).
class Optimizer {
public:
    virtual ~Optimizer() = default;
    virtual void compute_step(std::span<const double> grad, double lr, std::span<double> step) = 0;
};

class Sgd final : public Optimizer {
public:
    void compute_step(std::span<const double> grad, double lr, std::span<double> step) override;
};

class Adam final : public Optimizer {
public:
    explicit Adam(std::size_t n, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void compute_step(std::span<const double> grad, double lr, std::span<double> step) override;

private:
    double beta1_, beta2_, eps_;
    std::vector<double> m_, v_;
    std::size_t t_ = 0;
};

std::unique_ptr<Optimizer> make_optimizer(OptimizerKind kind, std::size_t n_params);

} // namespace adpo::optim
