#include "adpo/losses.hpp"

#include <cmath>

namespace adpo::losses {

using policy::Role;

bool LogRatioBundle::finite() const {
    for (double v : {lp_theta_w, lp_ref_w, lp_theta_l, lp_ref_l, lp_theta_t, lp_tox_t, lp_theta_w_tox_side, lp_tox_w}) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Hyper::validate() const {
    if (!(beta > 0.0) || !std::isfinite(beta)) {
        throw InvalidArgument("beta must be positive and finite");
    }
    if (!(gamma >= 0.0) || !std::isfinite(gamma)) {
        throw InvalidArgument("gamma must be nonnegative and finite");
    }
}

double softplus(double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

namespace {

void require_finite(const LogRatioBundle& b) {
    if (!b.finite()) {
        throw NonFiniteError("log-ratio bundle has non-finite entries");
    }
}

double sigmoid(double z) {
    if (z >= 0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

double chosen_margin(const LogRatioBundle& b) {
    return (b.lp_theta_w - b.lp_ref_w) - (b.lp_theta_l - b.lp_ref_l);
}

// Main-text sign: positive when y_t is less likely under the policy than
// under the toxic model and y_w more likely.
double toxic_margin(const LogRatioBundle& b) {
    return (b.lp_tox_t - b.lp_theta_t) - (b.lp_tox_w - b.lp_theta_w_tox_side);
}

} // namespace

LossBreakdown dpo_loss(const LogRatioBundle& b, double beta) {
    Hyper{beta, 0.0}.validate();
    require_finite(b);
    LossBreakdown out;
    out.r_beta = beta * chosen_margin(b);
    out.r_gamma = 0.0;
    out.r = beta * (b.lp_theta_w - b.lp_ref_w);
    out.p = 0.0;
    out.R = out.r - out.p;
    out.loss = softplus(-out.r_beta);
    return out;
}

LossBreakdown adpo_loss(const LogRatioBundle& b, const Hyper& h, LossVariant variant) {
    h.validate();
    require_finite(b);
    LossBreakdown out;
    out.r_beta = h.beta * chosen_margin(b);
    // "+ 0.0" maps a -0.0 product to +0.0 so gamma = 0 matches dpo_loss bitwise.
    out.r_gamma = h.gamma * toxic_margin(b) + 0.0;
    const RewardDecomposition w = reward_decomposition(b, h, Side::chosen);
    out.r = w.r;
    out.p = w.p;
    out.R = w.R;
    const double z = variant == LossVariant::main_text ? out.r_beta + out.r_gamma : out.r_beta - out.r_gamma;
    out.loss = softplus(-z);
    return out;
}

RewardDecomposition reward_decomposition(const LogRatioBundle& b, const Hyper& h, Side side) {
    require_finite(b);
    RewardDecomposition d;
    if (side == Side::chosen) {
        d.r = h.beta * (b.lp_theta_w - b.lp_ref_w);
        d.p = h.gamma * (b.lp_theta_t - b.lp_tox_t) + 0.0;
    } else {
        d.r = h.beta * (b.lp_theta_l - b.lp_ref_l);
        d.p = h.gamma * (b.lp_theta_w_tox_side - b.lp_tox_w) + 0.0;
    }
    d.R = d.r - d.p;
    return d;
}

SignDiscrepancy sign_discrepancy(const LogRatioBundle& b, const Hyper& h) {
    require_finite(b);
    SignDiscrepancy s;
    const double r_beta = h.beta * chosen_margin(b);
    s.r_gamma = h.gamma * toxic_margin(b);
    // Literal appendix gamma term: gamma * [log(pi_theta/pi_tox)(y_t) - log(pi_theta/pi_tox)(y_w)].
    s.r_gamma_appendix = h.gamma * ((b.lp_theta_t - b.lp_tox_t) - (b.lp_theta_w_tox_side - b.lp_tox_w));
    s.main_argument = r_beta + s.r_gamma;
    s.appendix_argument = r_beta + s.r_gamma_appendix;
    const RewardDecomposition w = reward_decomposition(b, h, Side::chosen);
    const RewardDecomposition l = reward_decomposition(b, h, Side::rejected);
    s.bt_margin = w.R - l.R;
    return s;
}

BundleGradient dpo_loss_grad(const LogRatioBundle& b, double beta) {
    const LossBreakdown lb = dpo_loss(b, beta);
    // d softplus(-z)/dz = -sigmoid(-z)
    const double dz = -sigmoid(-lb.r_beta);
    BundleGradient g;
    g.d_theta_w = dz * beta;
    g.d_theta_l = -dz * beta;
    return g;
}

BundleGradient adpo_loss_grad(const LogRatioBundle& b, const Hyper& h, LossVariant variant) {
    const LossBreakdown lb = adpo_loss(b, h, variant);
    const double sign = variant == LossVariant::main_text ? 1.0 : -1.0;
    const double z = lb.r_beta + sign * lb.r_gamma;
    const double dz = -sigmoid(-z);
    BundleGradient g;
    g.d_theta_w = dz * h.beta;
    g.d_theta_l = -dz * h.beta;
    g.d_theta_t = -dz * sign * h.gamma;
    g.d_theta_w_tox_side = dz * sign * h.gamma;
    return g;
}

// ------------------------------------------------------- parameter level

const char* to_string(Method m) {
    return m == Method::dpo ? "dpo" : "adpo";
}

Method method_from_string(const std::string& s) {
    if (s == "dpo" || s == "DPO") return Method::dpo;
    if (s == "adpo" || s == "ADPO") return Method::adpo;
    throw InvalidArgument("unknown method '" + s + "' (expected dpo or adpo)");
}

LogRatioBundle make_bundle(const policy::Policy& theta, const policy::Policy& snapshot,
                           const PreferenceRecord& rec) {
    LogRatioBundle b;
    b.lp_theta_w = policy::log_prob(theta, Role::theta, rec.context, rec.chosen);
    b.lp_ref_w = policy::log_prob(snapshot, Role::ref, rec.context, rec.chosen);
    b.lp_theta_l = policy::log_prob(theta, Role::theta, rec.context, rec.rejected);
    b.lp_ref_l = policy::log_prob(snapshot, Role::ref, rec.context, rec.rejected);
    b.lp_theta_t = policy::log_prob(theta, Role::theta, rec.context, rec.toxic);
    b.lp_tox_t = policy::log_prob(snapshot, Role::tox, rec.context, rec.toxic);
    b.lp_theta_w_tox_side = b.lp_theta_w;
    b.lp_tox_w = policy::log_prob(snapshot, Role::tox, rec.context, rec.chosen);
    return b;
}

LossBreakdown record_loss(const LogRatioBundle& b, const Objective& obj) {
    return obj.method == Method::dpo ? dpo_loss(b, obj.hyper.beta) : adpo_loss(b, obj.hyper, obj.variant);
}

double batch_loss(const policy::Policy& theta, const policy::Policy& snapshot,
                  std::span<const PreferenceRecord> records, const Objective& obj) {
    if (records.empty()) {
        throw EmptyDataset("batch_loss on an empty batch");
    }
    double total = 0.0;
    for (const auto& rec : records) {
        total += record_loss(make_bundle(theta, snapshot, rec), obj).loss;
    }
    return total / static_cast<double>(records.size());
}

LossAndGrad batch_loss_and_grad(const policy::Policy& theta, const policy::Policy& snapshot,
                                std::span<const PreferenceRecord> records, const Objective& obj) {
    if (records.empty()) {
        throw EmptyDataset("batch gradient on an empty batch");
    }
    LossAndGrad out;
    out.grad.assign(theta.num_params(), 0.0);
    const double inv_n = 1.0 / static_cast<double>(records.size());
    double total = 0.0;
    for (const auto& rec : records) {
        const LogRatioBundle b = make_bundle(theta, snapshot, rec);
        const LossBreakdown lb = record_loss(b, obj);
        if (!std::isfinite(lb.loss)) {
            throw NonFiniteError("non-finite record loss");
        }
        total += lb.loss;
        const BundleGradient g = obj.method == Method::dpo ? dpo_loss_grad(b, obj.hyper.beta)
                                                           : adpo_loss_grad(b, obj.hyper, obj.variant);
        // lp_theta_w and lp_theta_w_tox_side are the same quantity.
        const double dw = (g.d_theta_w + g.d_theta_w_tox_side) * inv_n;
        policy::accumulate_log_prob_grad(theta, Role::theta, rec.context, rec.chosen, dw, out.grad);
        policy::accumulate_log_prob_grad(theta, Role::theta, rec.context, rec.rejected, g.d_theta_l * inv_n, out.grad);
        if (obj.method == Method::adpo) {
            policy::accumulate_log_prob_grad(theta, Role::theta, rec.context, rec.toxic, g.d_theta_t * inv_n,
                                             out.grad);
        }
    }
    out.loss = total * inv_n;
    if (!std::isfinite(out.loss)) {
        throw NonFiniteError("non-finite batch loss");
    }
    return out;
}

} // namespace adpo::losses
