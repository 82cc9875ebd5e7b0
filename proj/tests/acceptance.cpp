// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include "adpo/eval.hpp"
#include "adpo/hashing.hpp"
#include "adpo/pipeline.hpp"
#include "adpo/sft.hpp"
#include "adpo/train.hpp"
#include "oracle.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

using namespace adpo;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            if (!detail.empty()) detail += "; ";
            detail += what;
        }
    }
};

int failures = 0;

void report(int id, const char* title, const Verdict& v, const std::string& info) {
    std::printf("[%s] %d. %s: %s\n", v.pass ? "PASS" : "FAIL", id, title,
                v.pass ? info.c_str() : (v.detail + " (" + info + ")").c_str());
    std::fflush(stdout);
    if (!v.pass) ++failures;
}

template <class F>
void criterion(int id, const char* title, F&& body) {
    Verdict v;
    std::string info;
    try {
        info = body(v);
    } catch (const std::exception& e) {
        v.require(false, std::string("exception: ") + e.what());
    }
    report(id, title, v, info);
}

std::string fmt(const char* f, double a) {
    char buf[96];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

losses::LogRatioBundle random_bundle(Rng& rng) {
    losses::LogRatioBundle b;
    for (double* v : {&b.lp_theta_w, &b.lp_ref_w, &b.lp_theta_l, &b.lp_ref_l, &b.lp_theta_t, &b.lp_tox_t,
                      &b.lp_tox_w}) {
        *v = -10.0 * rng.uniform();
    }
    b.lp_theta_w_tox_side = b.lp_theta_w;
    return b;
}

// log(1 + e^{-z}) written out separately from the library's softplus.
double reference_nll(double z) {
    return z > 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
}

train::TrainerConfig sgd_config(losses::Method m, double beta, double gamma, std::size_t epochs, double lr) {
    train::TrainerConfig c = train::TrainerConfig::defaults(m);
    c.beta = beta;
    c.gamma = gamma;
    c.epochs = epochs;
    c.learning_rate = lr;
    c.schedule = optim::Schedule::constant;
    c.batch_size = 0;
    c.validation_fraction = 0.0;
    c.optimizer = optim::OptimizerKind::sgd;
    return c;
}

const fs::path kRoot = fs::temp_directory_path() / "adpo_acceptance";

} // namespace

int main() {
    std::printf("adpo acceptance suite\n");

    criterion(1, "loss values", [](Verdict& v) {
        const auto t0 = Clock::now();
        Rng rng(1);
        double worst = 0.0;
        for (int i = 0; i < 1000; ++i) {
            const auto b = random_bundle(rng);
            const double beta = 0.05 + rng.uniform();
            const double gamma = rng.uniform();
            const double rb = beta * ((b.lp_theta_w - b.lp_ref_w) - (b.lp_theta_l - b.lp_ref_l));
            const double rg = gamma * ((b.lp_tox_t - b.lp_theta_t) - (b.lp_tox_w - b.lp_theta_w_tox_side));
            worst = std::max(worst, std::abs(losses::dpo_loss(b, beta).loss - reference_nll(rb)));
            worst = std::max(worst, std::abs(losses::adpo_loss(b, {beta, gamma}).loss - reference_nll(rb + rg)));
        }
        v.require(worst <= 1e-12, "max abs error " + fmt("%.3g", worst));

        losses::LogRatioBundle d;
        d.lp_theta_w = 0.5;
        d.lp_theta_l = -0.5;
        const double l1 = losses::dpo_loss(d, 0.9).loss;
        v.require(std::abs(l1 - std::log1p(std::exp(-0.9))) <= 1e-15 && std::round(l1 * 1e5) == 34115,
                  "beta 0.9 example " + fmt("%.6f", l1));
        losses::LogRatioBundle a;
        a.lp_theta_w = 1.0;
        a.lp_theta_w_tox_side = 1.0;
        a.lp_tox_w = 0.5;
        a.lp_theta_l = -1.0;
        a.lp_theta_t = -0.5;
        const double l2 = losses::adpo_loss(a, {0.3, 0.2}).loss;
        v.require(std::abs(l2 - std::log1p(std::exp(-0.8))) <= 1e-15 && std::round(l2 * 1e5) == 37110,
                  "adpo example " + fmt("%.6f", l2));
        const double l3 = losses::adpo_loss(losses::LogRatioBundle{}, {0.3, 0.2}).loss;
        v.require(l3 == std::log(2.0), "zero ratios " + fmt("%.17g", l3));
        const double dt = seconds_since(t0);
        v.require(dt < 1.0, "runtime " + fmt("%.2fs", dt));
        return "max abs error " + fmt("%.2g", worst) + ", examples " + fmt("%.5f", l1) + " " + fmt("%.5f", l2) +
               ", " + fmt("%.3fs", dt);
    });

    criterion(2, "gamma = 0 reduction", [](Verdict& v) {
        Rng rng(2);
        std::size_t mismatches = 0;
        for (int i = 0; i < 1000; ++i) {
            const auto b = random_bundle(rng);
            const double beta = 0.05 + rng.uniform();
            const auto x = losses::adpo_loss(b, {beta, 0.0});
            const auto y = losses::dpo_loss(b, beta);
            mismatches += std::memcmp(&x, &y, sizeof x) != 0;
        }
        v.require(mismatches == 0, std::to_string(mismatches) + " bundles differ");

        const auto inst = oracle::random_instance(7, {.contexts = 3, .responses = 8, .max_len = 3,
                                                      .records_per_context = 10});
        std::vector<std::string> ha;
        std::vector<std::string> hd;
        for (auto [m, out] : {std::pair{losses::Method::adpo, &ha}, std::pair{losses::Method::dpo, &hd}}) {
            train::TrainerConfig c = train::TrainerConfig::defaults(m);
            c.beta = 0.9;
            c.gamma = 0.0;
            c.epochs = 3;
            c.learning_rate = 0.3;
            c.batch_size = 4;
            train::TrainHooks hooks;
            hooks.on_step = [out](const train::StepRecord&, const policy::Policy& p) {
                out->push_back(p.param_hash());
            };
            train::train(inst.snapshot, inst.records, c, hooks);
        }
        v.require(!ha.empty() && ha == hd, "trajectories differ");
        return "1000 bundles bit-identical, " + std::to_string(ha.size()) + " training steps identical";
    });

    criterion(3, "gradient correctness", [](Verdict& v) {
        const auto t0 = Clock::now();
        double worst = 0.0;
        for (std::uint64_t seed = 1; seed <= 20; ++seed) {
            const auto inst = oracle::random_instance(
                seed, {.contexts = 1 + seed % 3, .responses = 8, .max_len = 2, .records_per_context = 3});
            std::vector<double> x(inst.snapshot->params().begin(), inst.snapshot->params().end());
            Rng rng(seed);
            for (double& p : x) p += 0.3 * rng.normal();
            for (const losses::Objective& obj : {losses::Objective{losses::Method::dpo, {0.9, 0.0}},
                                                 losses::Objective{losses::Method::adpo, {0.3, 0.2}}}) {
                const double e = oracle::relative_error(oracle::loss_gradient(inst, obj)(x),
                                                        oracle::fd_gradient(oracle::loss_function(inst, obj), x));
                worst = std::max(worst, e);
            }
        }
        const double dt = seconds_since(t0);
        v.require(worst < 1e-5, "max relative error " + fmt("%.3g", worst));
        v.require(dt < 10.0, "runtime " + fmt("%.2fs", dt));
        return "20 instances, max relative error " + fmt("%.2g", worst) + ", " + fmt("%.2fs", dt);
    });

    criterion(4, "optimizer agreement", [](Verdict& v) {
        const auto t0 = Clock::now();
        double worst = 0.0;
        for (std::uint64_t seed = 1; seed <= 10; ++seed) {
            auto inst = oracle::cyclic_instance(seed, 2, 6, 4);
            oracle::reweight(inst, seed);
            const auto cfg = sgd_config(losses::Method::adpo, 0.3, 0.2, 4000, 2.0);
            const auto r = train::train(inst.snapshot, inst.records, cfg);
            const double trainer = losses::batch_loss(*r.trained, *inst.snapshot, inst.records, cfg.objective());
            const std::vector<double> x0(inst.snapshot->params().begin(), inst.snapshot->params().end());
            const auto o = oracle::independent_minimize(oracle::loss_function(inst, cfg.objective()),
                                                        oracle::loss_gradient(inst, cfg.objective()), x0);
            worst = std::max(worst, std::abs(trainer - o.loss));
        }
        const double dt = seconds_since(t0);
        v.require(worst <= 1e-4, "max gap " + fmt("%.3g", worst));
        v.require(dt < 60.0, "runtime " + fmt("%.1fs", dt));
        return "10 instances, max gap " + fmt("%.2g", worst) + ", " + fmt("%.1fs", dt);
    });

    criterion(5, "sign semantics", [](Verdict& v) {
        std::size_t bad = 0;
        for (std::uint64_t seed = 1; seed <= 100; ++seed) {
            const auto inst = oracle::direction_instance(seed);
            const auto d = oracle::direction_check(*inst.snapshot, inst.records[0], {0.3, 0.2});
            bad += !(d.d_toxic < 0.0 && d.d_chosen > 0.0 && d.d_rejected < 0.0);
        }
        v.require(bad == 0, std::to_string(bad) + " of 100 instances move the wrong way");
        Rng rng(5);
        double worst = 0.0;
        for (int i = 0; i < 1000; ++i) {
            const auto s = losses::sign_discrepancy(random_bundle(rng), {0.3, 0.2});
            worst = std::max(worst, std::abs((s.main_argument - s.appendix_argument) - 2.0 * s.r_gamma));
        }
        v.require(worst <= 1e-12, "discrepancy off by " + fmt("%.3g", worst));
        return "100/100 instances (-, +, -), main - appendix = 2 r_gamma within " + fmt("%.1g", worst);
    });

    criterion(6, "control-token mechanism", [](Verdict& v) {
        corpus::CorpusSpec spec;
        spec.normal_count = 50;
        spec.toxic_count = 20;
        spec.seed = 42;
        const auto c = corpus::generate_synthetic_corpus(spec);
        const auto vocab = std::make_shared<const corpus::Vocabulary>(c.world.vocab);
        const policy::NeuralPolicy init(vocab, 6, {}, derive_seed(42, "init"));
        sft::SftConfig cfg;
        cfg.seed = 42;
        const auto r = sft::train_sft(init, c.normal, c.toxic, cfg);
        const policy::Policy& snap = *r.snapshot;
        std::vector<Context> xs;
        for (const auto& d : c.toxic) xs.push_back(corpus::final_context(*vocab, d));
        for (const auto& d : c.normal) xs.push_back(corpus::final_context(*vocab, d));
        std::size_t tox = 0;
        std::size_t plain = 0;
        for (std::size_t i = 0; i < 500; ++i) {
            const Context& x = xs[i % xs.size()];
            tox += corpus::count_lexicon(*vocab, policy::sample(snap, policy::Role::tox, x, {}, derive_seed(1, i)).tokens) > 0;
            plain += corpus::count_lexicon(*vocab, policy::sample(snap, policy::Role::theta, x, {}, derive_seed(2, i)).tokens) > 0;
        }
        v.require(tox > plain, "TOX " + std::to_string(tox) + " vs plain " + std::to_string(plain));
        // Mean over every lexicon-bearing corpus response, so no single example is picked.
        std::size_t higher = 0;
        double mean_tox = 0.0;
        double mean_plain = 0.0;
        for (const auto& d : c.toxic) {
            const Context x = corpus::final_context(*vocab, d);
            const Response y = corpus::response_of(*vocab, d.turns.back());
            const double lt = policy::log_prob(snap, policy::Role::tox, x, y);
            const double lp = policy::log_prob(snap, policy::Role::theta, x, y);
            mean_tox += lt / static_cast<double>(c.toxic.size());
            mean_plain += lp / static_cast<double>(c.toxic.size());
            higher += lt > lp;
        }
        v.require(mean_tox > mean_plain, "mean log_prob TOX " + fmt("%.3f", mean_tox) + " vs plain " +
                                             fmt("%.3f", mean_plain));
        return "lexicon responses in 500 samples: TOX " + std::to_string(tox) + ", plain " + std::to_string(plain) +
               "; mean log_prob TOX " + fmt("%.3f", mean_tox) + " vs plain " + fmt("%.3f", mean_plain) +
               " (higher for " + std::to_string(higher) + "/" + std::to_string(c.toxic.size()) + ")";
    });

    // Shared by criteria 7 to 9.
    const fs::path run_a = kRoot / "run_a";
    const fs::path run_b = kRoot / "run_b";
    double pipeline_seconds = 0.0;
    std::string pipeline_error;
    try {
        fs::remove_all(kRoot);
        auto cfg = pipeline::RunConfig::defaults();
        cfg.seed = 42;
        cfg.out = run_a;
        const auto t0 = Clock::now();
        pipeline::run_pipeline(cfg, pipeline::all_stages());
        pipeline_seconds = seconds_since(t0);
        cfg.out = run_b;
        pipeline::run_pipeline(cfg, pipeline::all_stages());
    } catch (const std::exception& e) {
        pipeline_error = e.what();
    }

    criterion(7, "end-to-end direction", [&](Verdict& v) {
        if (!pipeline_error.empty()) throw std::runtime_error(pipeline_error);
        const auto cfg = pipeline::RunConfig::defaults();
        for (const auto& r : cfg.runs) {
            const auto& t = r.trainer;
            const bool paper = t.method == losses::Method::dpo ? (t.beta == 0.9 && t.epochs == 2)
                                                               : (t.beta == 0.3 && t.gamma == 0.2 && t.epochs == 4);
            v.require(paper, "run " + r.name + " does not use the paper hyperparameters");
        }
        const auto m = [&](const char* model) { return eval::read_report(run_a / "eval" / model / "report.json"); };
        const auto adpo = m("adpo");
        const auto dpo = m("dpo");
        const auto base_adpo = m("sft_toxic");
        const auto base_dpo = m("sft_nontoxic");
        v.require(adpo.toxicity() < base_adpo.toxicity(),
                  "toxicity adpo " + fmt("%.3f", adpo.toxicity()) + " vs base " + fmt("%.3f", base_adpo.toxicity()));
        const double g_dpo = dpo.evasiveness() - base_dpo.evasiveness();
        const double g_adpo = adpo.evasiveness() - base_adpo.evasiveness();
        v.require(g_dpo > g_adpo, "evasiveness growth dpo " + fmt("%+.3f", g_dpo) + " not above adpo " +
                                      fmt("%+.3f", g_adpo));
        v.require(pipeline_seconds < 300.0, "runtime " + fmt("%.1fs", pipeline_seconds));
        return "toxicity adpo " + fmt("%.3f", adpo.toxicity()) + " vs base " + fmt("%.3f", base_adpo.toxicity()) +
               "; evasiveness growth dpo " + fmt("%+.3f", g_dpo) + ", adpo " + fmt("%+.3f", g_adpo) +
               "; pipeline " + fmt("%.1fs", pipeline_seconds);
    });

    criterion(8, "KL diagnostics", [&](Verdict& v) {
        const auto inst = oracle::random_instance(8, {.contexts = 3, .responses = 8, .max_len = 3});
        auto theta = inst.snapshot->thaw();
        v.require(train::kl_trace_step(*theta, *inst.snapshot, inst.records).chosen_kl == 0.0, "chosen_kl not 0");
        auto& tab = dynamic_cast<policy::TabularPolicy&>(*theta);
        auto p = tab.mutable_params();
        for (std::size_t k = 0; k < tab.keys().size(); ++k) {
            for (std::size_t pos = 0; pos < tab.max_response_len(); ++pos) {
                const std::size_t plain = tab.row_offset(k, false, pos);
                const std::size_t ctrl = tab.row_offset(k, true, pos);
                for (std::size_t r = 0; r < tab.num_response_tokens(); ++r) p[plain + r] += p[ctrl + r];
            }
        }
        v.require(train::kl_trace_step(*theta, *inst.snapshot, inst.records).toxic_kl == 0.0, "toxic_kl not 0");
        v.require(train::range_check(0.06) == train::RangeStatus::in, "0.06 not in range");
        v.require(train::range_check(-2.5) == train::RangeStatus::out, "-2.5 not out of range");
        v.require(train::range_check(-2.0) == train::RangeStatus::in, "-2.0 not in range");

        if (!pipeline_error.empty()) throw std::runtime_error(pipeline_error);
        std::string info;
        for (const char* run : {"dpo", "adpo"}) {
            const auto trace = pipeline::read_trace_jsonl(run_a / "train" / run / "kl_trace.jsonl");
            const auto summary = nlohmann::json::parse(slurp(run_a / "train" / run / "summary.json"));
            v.require(trace.size() == summary.at("steps").get<std::size_t>() && !trace.empty(),
                      std::string(run) + " trace misses steps");
            bool finite = true;
            for (std::size_t i = 0; i < trace.size(); ++i) {
                finite &= trace[i].step == i && std::isfinite(trace[i].chosen_kl) && std::isfinite(trace[i].toxic_kl);
            }
            v.require(finite, std::string(run) + " trace has non-finite or out-of-order entries");
            info += std::string(run) + " " + std::to_string(trace.size()) + " steps, final chosen_kl " +
                    fmt("%.3f", trace.back().chosen_kl) + "; ";
        }
        return info + "exact zeros and range checks hold";
    });

    criterion(9, "determinism", [&](Verdict& v) {
        if (!pipeline_error.empty()) throw std::runtime_error(pipeline_error);
        std::size_t compared = 0;
        for (const auto& e : fs::recursive_directory_iterator(run_a)) {
            if (!e.is_regular_file()) continue;
            const fs::path rel = fs::relative(e.path(), run_a);
            const std::string name = e.path().filename().string();
            const bool wanted = name == "report.json" || name == "kl_trace.jsonl" || name == "policy.json" ||
                                name == "best.json";
            if (!wanted) continue;
            ++compared;
            v.require(fs::exists(run_b / rel) && slurp(e.path()) == slurp(run_b / rel),
                      rel.generic_string() + " differs");
        }
        const auto ha = pipeline::hash_artifacts(run_a);
        const auto hb = pipeline::hash_artifacts(run_b);
        v.require(ha == hb, "artifact hashes differ");
        v.require(compared > 0, "nothing compared");
        return std::to_string(compared) + " metric/trace/snapshot files byte-identical, " +
               std::to_string(ha.size()) + " artifacts hash-identical";
    });

    std::printf("%d of 9 criteria failed\n", failures);
    return failures;
}
