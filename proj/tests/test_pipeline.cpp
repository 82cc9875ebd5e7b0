#include "adpo/hashing.hpp"
#include "adpo/pipeline.hpp"

#include "doctest.h"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace adpo;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "adpo_pipeline_test";

struct Run {
    int status = -1;
    std::string output;
};

// Runs the CLI with stdout and stderr captured together.
Run cli(const std::string& args) {
    fs::create_directories(kRoot);
    const fs::path log = kRoot / "cli.log";
    const std::string cmd = std::string(ADPO_CLI) + " " + args + " > " + log.string() + " 2>&1";
    const int raw = std::system(cmd.c_str());
    Run r;
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    r.output = ss.str();
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path fresh(const std::string& name) {
    const fs::path p = kRoot / name;
    fs::remove_all(p);
    return p;
}

fs::path write_config(const std::string& name, const nlohmann::json& j) {
    fs::create_directories(kRoot);
    const fs::path p = kRoot / name;
    std::ofstream(p) << j.dump(2);
    return p;
}

// Run directory produced once and shared by the read-only checks below.
const fs::path& reference_run() {
    static const fs::path dir = [] {
        const fs::path d = fresh("ref");
        const Run r = cli("pipeline --seed 42 --out " + d.string());
        REQUIRE_MESSAGE(r.status == 0, r.output);
        return d;
    }();
    return dir;
}

} // namespace

TEST_CASE("identical invocations give identical artifacts") {
    const fs::path a = reference_run();
    const fs::path b = fresh("again");
    REQUIRE(cli("pipeline --seed 42 --out " + b.string()).status == 0);
    const auto ha = pipeline::hash_artifacts(a);
    const auto hb = pipeline::hash_artifacts(b);
    CHECK(ha == hb);
    for (const char* f : {"eval/adpo/report.json", "eval/dpo/report.json", "train/adpo/kl_trace.jsonl",
                          "train/dpo/policy.json", "sft/toxic/policy.json"}) {
        REQUIRE(fs::exists(a / f));
        CHECK(slurp(a / f) == slurp(b / f));
    }
}

TEST_CASE("manifest covers every artifact") {
    const fs::path dir = reference_run();
    const auto manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
    CHECK(manifest.at("version") == pipeline::kToolVersion);
    CHECK(manifest.contains("config"));
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (!e.is_regular_file() || e.path().filename() == "manifest.json") continue;
        ++files;
        const std::string rel = fs::relative(e.path(), dir).generic_string();
        REQUIRE_MESSAGE(manifest.at("artifacts").contains(rel), rel);
        CHECK(manifest.at("artifacts").at(rel) == sha256_file(e.path()));
    }
    CHECK(files == manifest.at("artifacts").size());
    for (const char* sub : {"corpus", "sft", "prefs", "train", "eval", "diagnose"}) CHECK(fs::is_directory(dir / sub));
}

TEST_CASE("rerunning a later stage reproduces its outputs") {
    const fs::path dir = fresh("rerun");
    REQUIRE(cli("pipeline --out " + dir.string()).status == 0);
    const std::string before = slurp(dir / "eval/adpo/report.json");
    const std::string trace = slurp(dir / "train/adpo/kl_trace.jsonl");
    REQUIRE(cli("pipeline --stages train,eval --out " + dir.string()).status == 0);
    CHECK(slurp(dir / "eval/adpo/report.json") == before);
    CHECK(slurp(dir / "train/adpo/kl_trace.jsonl") == trace);
    // the manifest still matches the directory
    const auto manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
    CHECK(manifest.at("artifacts").size() == pipeline::hash_artifacts(dir).size());
}

TEST_CASE("unknown method name is a config error naming the field") {
    auto j = pipeline::RunConfig::defaults().to_json();
    j["train"]["adpo"]["method"] = "ppo";
    const fs::path cfg = write_config("bad_method.json", j);
    const Run r = cli("pipeline --config " + cfg.string() + " --out " + fresh("bad").string());
    CHECK(r.status == 2);
    CHECK(r.output.find("method") != std::string::npos);
    CHECK(r.output.find("ppo") != std::string::npos);

    CHECK_THROWS_AS(pipeline::RunConfig::from_json(j), pipeline::ConfigError);
    CHECK(cli("pipeline --stages nonsense --out " + fresh("bad2").string()).status == 2);
    CHECK(cli("pipeline --config /nonexistent/run.json").status != 0);
}

TEST_CASE("missing upstream artifacts") {
    const fs::path dir = fresh("upstream");
    const Run r = cli("pipeline --stages train,eval --out " + dir.string());
    CHECK(r.status == 3);
    CHECK(r.output.find("missing upstream") != std::string::npos);
    CHECK(cli("eval --out " + dir.string()).status == 3);

    // corpus and sft present, prefs absent
    REQUIRE(cli("sft --out " + dir.string()).status == 0);
    const Run p = cli("pipeline --stages train,eval --out " + dir.string());
    CHECK(p.status == 3);
    CHECK(p.output.find("prefs") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "train"));
}

TEST_CASE("stage subcommands chain") {
    const fs::path dir = fresh("chain");
    REQUIRE(cli("sft --out " + dir.string()).status == 0);
    CHECK(fs::exists(dir / "sft/toxic/policy.json"));
    REQUIRE(cli("gen-prefs --out " + dir.string()).status == 0);
    CHECK(fs::exists(dir / "prefs/toxic/preferences.jsonl"));
    REQUIRE(cli("train --method adpo --out " + dir.string()).status == 0);
    CHECK(fs::exists(dir / "train/adpo/policy.json"));
    CHECK_FALSE(fs::exists(dir / "train/dpo"));
    CHECK(cli("eval --out " + dir.string()).status == 3);  // the dpo run was never trained
    REQUIRE(cli("eval --method adpo --out " + dir.string()).status == 0);
    REQUIRE(cli("diagnose --method adpo --out " + dir.string()).status == 0);
    CHECK(fs::exists(dir / "diagnose/summary.json"));
    // the staged run matches the adpo half of a full run
    CHECK(slurp(dir / "eval/adpo/report.json") == slurp(reference_run() / "eval/adpo/report.json"));
}

TEST_CASE("flag overrides") {
    pipeline::RunConfig c = pipeline::RunConfig::defaults();
    pipeline::Overrides o;
    o.method = "dpo";
    o.beta = 0.5;
    o.seed = 7;
    pipeline::apply_overrides(c, o);
    REQUIRE(c.runs.size() == 1);
    CHECK(c.runs[0].trainer.method == losses::Method::dpo);
    CHECK(c.runs[0].trainer.beta == 0.5);
    CHECK(c.seed == 7);
    CHECK(c.bases() == std::vector<std::string>{"nontoxic"});

    pipeline::RunConfig d = pipeline::RunConfig::defaults();
    pipeline::Overrides g;
    g.gamma = 0.0;
    pipeline::apply_overrides(d, g);
    for (const auto& r : d.runs) CHECK(r.trainer.gamma == 0.0);

    const auto defaults = pipeline::RunConfig::defaults();
    CHECK(pipeline::RunConfig::from_json(defaults.to_json()).to_json() == defaults.to_json());
}

TEST_CASE("compare runs") {
    const fs::path a = reference_run();
    const auto same = pipeline::compare_runs(a, a);
    REQUIRE_FALSE(same.deltas.empty());
    for (const auto& d : same.deltas) {
        CHECK(d.d_coherence == 0.0);
        CHECK(d.d_evasiveness == 0.0);
        CHECK(d.d_toxicity == 0.0);
    }

    // one run per method, compared across runs
    const fs::path dpo = fresh("only_dpo");
    const fs::path adpo = fresh("only_adpo");
    REQUIRE(cli("pipeline --method dpo --out " + dpo.string()).status == 0);
    REQUIRE(cli("pipeline --method adpo --out " + adpo.string()).status == 0);
    const Run r = cli("compare " + dpo.string() + " " + adpo.string() + " --json");
    REQUIRE_MESSAGE(r.status == 0, r.output);
    const auto j = nlohmann::json::parse(r.output);
    bool found = false;
    for (const auto& d : j.at("deltas")) {
        if (d.at("a") != "dpo" || d.at("b") != "adpo") continue;
        found = true;
        for (const char* m : {"coherence", "evasiveness", "toxicity"}) {
            const double expect = d.at("metrics_b").at(m).get<double>() - d.at("metrics_a").at(m).get<double>();
            CHECK(d.at("delta").at(m).get<double>() == doctest::Approx(expect).epsilon(1e-12));
        }
    }
    CHECK(found);
    CHECK(j.at("kl_a").size() == 1);
    CHECK(j.at("kl_b").size() == 1);

    const fs::path empty = fresh("no_eval");
    fs::create_directories(empty);
    const Run bad = cli("compare " + a.string() + " " + empty.string());
    CHECK(bad.status == 3);
    CHECK(bad.output.find(empty.string()) != std::string::npos);
    CHECK_THROWS_AS(pipeline::compare_runs(empty, a), pipeline::MissingUpstream);
}

TEST_CASE("stage names and seeds") {
    CHECK(pipeline::stage_from_string("gen-prefs") == pipeline::Stage::prefs);
    CHECK(pipeline::stage_from_string("prefs") == pipeline::Stage::prefs);
    CHECK_THROWS(pipeline::stage_from_string("deploy"));
    CHECK(pipeline::all_stages().size() == 6);
    CHECK(derive_seed(42, "sft") == derive_seed(42, "sft"));
    CHECK(derive_seed(42, "sft") != derive_seed(42, "prefs"));
    CHECK(derive_seed(42, "sft") != derive_seed(43, "sft"));
}
