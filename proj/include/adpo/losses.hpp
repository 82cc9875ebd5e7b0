#pragma once

#include "adpo/policy.hpp"
#include "adpo/types.hpp"

#include <span>
#include <vector>

namespace adpo::losses {

// Sequence log-probabilities (nats) feeding both objectives. `_w`, `_l`,
// `_t` stand for the chosen, rejected and toxic responses.
struct LogRatioBundle {
    double lp_theta_w = 0.0;
    double lp_ref_w = 0.0;
    double lp_theta_l = 0.0;
    double lp_ref_l = 0.0;
    double lp_theta_t = 0.0;
    double lp_tox_t = 0.0;
    double lp_theta_w_tox_side = 0.0;  // y_w under the policy, paired with lp_tox_w
    double lp_tox_w = 0.0;             // y_w under the toxic-conditioned snapshot

    bool finite() const;
};

struct Hyper {
    double beta = 0.3;
    double gamma = 0.2;

    void validate() const;
};

// The main-text objective pushes y_t below the toxic model and y_w above
// it. The appendix form flips the sign of the gamma term; it is kept for
// study only.
enum class LossVariant { main_text, appendix };

struct LossBreakdown {
    double r_beta = 0.0;
    double r_gamma = 0.0;
    double r = 0.0;     // chosen-side reward
    double p = 0.0;     // chosen-side penalty (toxic response)
    double R = 0.0;     // r - p
    double loss = 0.0;  // softplus(-(r_beta + r_gamma)) for the main-text variant
};

enum class Side { chosen, rejected };

struct RewardDecomposition {
    double r = 0.0;
    double p = 0.0;
    double R = 0.0;
};

// softplus(x) = log(1 + e^x), stable for large |x|.
double softplus(double x);

LossBreakdown dpo_loss(const LogRatioBundle& b, double beta);
LossBreakdown adpo_loss(const LogRatioBundle& b, const Hyper& h, LossVariant variant = LossVariant::main_text);

// r = beta * (lp_theta_y - lp_ref_y), p = gamma * (lp_theta_t' - lp_tox_t'),
// with (y, t') = (y_w, y_t) on the chosen side and (y_l, y_w) on the
// rejected side.
RewardDecomposition reward_decomposition(const LogRatioBundle& b, const Hyper& h, Side side);

// Both Bradley-Terry arguments for one bundle. main_argument is
// r_beta + r_gamma; appendix_argument uses the opposite gamma sign, so the
// two differ by 2 * r_gamma. bt_margin is R_chosen - R_rejected from
// reward_decomposition and coincides with main_argument.
struct SignDiscrepancy {
    double main_argument = 0.0;
    double appendix_argument = 0.0;
    double r_gamma = 0.0;
    double r_gamma_appendix = 0.0;
    double bt_margin = 0.0;
};
SignDiscrepancy sign_discrepancy(const LogRatioBundle& b, const Hyper& h);

// d loss / d lp for the policy-side entries; frozen entries carry no
// gradient.
struct BundleGradient {
    double d_theta_w = 0.0;
    double d_theta_l = 0.0;
    double d_theta_t = 0.0;
    double d_theta_w_tox_side = 0.0;
};
BundleGradient dpo_loss_grad(const LogRatioBundle& b, double beta);
BundleGradient adpo_loss_grad(const LogRatioBundle& b, const Hyper& h, LossVariant variant = LossVariant::main_text);

// ------------------------------------------------------- parameter level

enum class Method { dpo, adpo };
const char* to_string(Method m);
Method method_from_string(const std::string& s);

struct Objective {
    Method method = Method::adpo;
    Hyper hyper{};
    LossVariant variant = LossVariant::main_text;
};

// Evaluates every pairing for one record. `theta` is scored under THETA,
// `snapshot` under REF and TOX.
LogRatioBundle make_bundle(const policy::Policy& theta, const policy::Policy& snapshot,
                           const PreferenceRecord& record);

LossBreakdown record_loss(const LogRatioBundle& b, const Objective& obj);

// Mean loss over the records.
double batch_loss(const policy::Policy& theta, const policy::Policy& snapshot,
                  std::span<const PreferenceRecord> records, const Objective& obj);

struct LossAndGrad {
    double loss = 0.0;
    std::vector<double> grad;  // d mean-loss / d theta params
};

// Analytic gradient; records are reduced in input order so the result is
// bit-reproducible. Throws NonFiniteError if any record loss is not finite.
LossAndGrad batch_loss_and_grad(const policy::Policy& theta, const policy::Policy& snapshot,
                                std::span<const PreferenceRecord> records, const Objective& obj);

} // namespace adpo::losses
