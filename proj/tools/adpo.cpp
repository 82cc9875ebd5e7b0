// Command-line driver for the ADPO lab.
//
//   adpo pipeline --config run.json [--seed N] [--stages a,b] [--method m]
//                 [--beta B] [--gamma G] [--out DIR]
//   adpo sft | gen-prefs | train | eval | diagnose  (same flags, one stage)
//   adpo compare RUN_A RUN_B [--json]
//
// Exit status: 0 ok, 1 other failure, 2 invalid config, 3 missing upstream
// artifact, 4 non-finite training loss.

#include "adpo/pipeline.hpp"

#include "CLI11.hpp"

#include <iostream>
#include <sstream>

namespace pl = adpo::pipeline;

namespace {

struct CommonFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string stages;
    std::optional<std::string> method;
    std::optional<double> beta;
    std::optional<double> gamma;
    std::optional<std::string> out;
};

void add_common(CLI::App* app, CommonFlags& f, bool with_stages) {
    app->add_option("--config", f.config, "run configuration JSON (defaults apply when omitted)");
    app->add_option("--seed", f.seed, "global seed");
    if (with_stages) {
        app->add_option("--stages", f.stages, "comma-separated subset of corpus,sft,prefs,train,eval,diagnose");
    }
    app->add_option("--method", f.method, "restrict to runs using dpo or adpo");
    app->add_option("--beta", f.beta, "override beta of every run");
    app->add_option("--gamma", f.gamma, "override gamma of adpo runs");
    app->add_option("--out", f.out, "run directory");
}

std::vector<pl::Stage> parse_stages(const std::string& s) {
    std::vector<pl::Stage> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(pl::stage_from_string(item));
    }
    return out;
}

int run(const CommonFlags& f, std::vector<pl::Stage> stages) {
    pl::RunConfig cfg = f.config.empty() ? pl::RunConfig::defaults() : pl::RunConfig::load(f.config);
    pl::Overrides o;
    o.seed = f.seed;
    if (f.out) o.out = *f.out;
    o.method = f.method;
    o.beta = f.beta;
    o.gamma = f.gamma;
    pl::apply_overrides(cfg, o);
    if (!f.stages.empty()) stages = parse_stages(f.stages);
    pl::StageLog log{[](const std::string& m) { std::cerr << m << '\n'; }};
    pl::run_pipeline(cfg, stages, log);
    std::cerr << "run directory: " << cfg.out.string() << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"ADPO lab: control-token SFT, preference generation, DPO/ADPO training and evaluation"};
    app.require_subcommand(1);

    CommonFlags f;
    auto* pipeline = app.add_subcommand("pipeline", "run the full pipeline or a stage subset");
    add_common(pipeline, f, true);

    struct Single {
        const char* name;
        const char* help;
        std::vector<pl::Stage> stages;
    };
    const std::vector<Single> singles{
        {"sft", "generate the corpus and run supervised fine-tuning", {pl::Stage::corpus, pl::Stage::sft}},
        {"gen-prefs", "sample candidates and build preference datasets", {pl::Stage::prefs}},
        {"train", "DPO/ADPO preference optimisation", {pl::Stage::train}},
        {"eval", "evaluate SFT and trained policies", {pl::Stage::eval}},
        {"diagnose", "summarise KL traces and metric shifts", {pl::Stage::diagnose}},
    };
    std::vector<CLI::App*> single_apps;
    for (const auto& s : singles) {
        auto* sub = app.add_subcommand(s.name, s.help);
        add_common(sub, f, false);
        single_apps.push_back(sub);
    }

    std::string run_a;
    std::string run_b;
    bool as_json = false;
    auto* compare = app.add_subcommand("compare", "metric deltas and KL summaries between two runs");
    compare->add_option("run_a", run_a, "first run directory")->required();
    compare->add_option("run_b", run_b, "second run directory")->required();
    compare->add_flag("--json", as_json, "print JSON instead of a table");

    CLI11_PARSE(app, argc, argv);

    try {
        if (compare->parsed()) {
            const pl::Comparison c = pl::compare_runs(run_a, run_b);
            std::cout << (as_json ? c.to_json().dump(2) + "\n" : c.to_table());
            return 0;
        }
        if (pipeline->parsed()) {
            return run(f, pl::all_stages());
        }
        for (std::size_t i = 0; i < singles.size(); ++i) {
            if (single_apps[i]->parsed()) return run(f, singles[i].stages);
        }
    } catch (const pl::ConfigError& e) {
        std::cerr << "invalid config: " << e.what() << '\n';
        return 2;
    } catch (const adpo::InvalidArgument& e) {
        std::cerr << "invalid config: " << e.what() << '\n';
        return 2;
    } catch (const pl::MissingUpstream& e) {
        std::cerr << "missing upstream artifact: " << e.what() << '\n';
        return 3;
    } catch (const adpo::NonFiniteError& e) {
        std::cerr << "non-finite loss: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
