#include "adpo/pipeline.hpp"

#include "adpo/hashing.hpp"
#include "adpo/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace adpo::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* const kStageNames[] = {"corpus", "sft", "prefs", "train", "eval", "diagnose"};

void say(const StageLog& log, const std::string& msg) {
    if (log.info) log.info(msg);
}

template <class F>
auto in_section(const std::string& section, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const ConfigError&) {
        throw;
    } catch (const json::exception& e) {
        throw ConfigError(section + ": " + e.what());
    } catch (const Error& e) {
        throw ConfigError(section + ": " + e.what());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << text;
}

void write_json(const fs::path& path, const json& j) {
    write_text(path, j.dump(2) + "\n");
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    try {
        json j;
        in >> j;
        return j;
    } catch (const json::exception& e) {
        throw SchemaError(path.string() + ": " + e.what());
    }
}

void require(const fs::path& path, Stage stage, const char* producer) {
    if (!fs::exists(path)) {
        throw MissingUpstream(std::string("stage '") + to_string(stage) + "' needs " + path.string() +
                              "; run the " + producer + " stage first");
    }
}

void write_contexts_jsonl(const fs::path& path, const corpus::Vocabulary& vocab, std::span<const Context> xs) {
    std::ostringstream out;
    for (const auto& x : xs) {
        out << json{{"context", corpus::detokenize(vocab, x.tokens)}}.dump() << '\n';
    }
    write_text(path, out.str());
}

std::vector<Context> read_contexts_jsonl(const fs::path& path, const corpus::Vocabulary& vocab) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::vector<Context> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(corpus::context_from_text(vocab, json::parse(line).at("context").get<std::string>()));
        } catch (const std::exception& e) {
            throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

std::vector<corpus::Dialogue> read_dialogues(const fs::path& path, const corpus::Vocabulary& vocab) {
    return corpus::ingest_dialogue_jsonl(path, corpus::IngestKind::bad_dialogue, &vocab).dialogues;
}

std::vector<Context> final_contexts(const corpus::Vocabulary& vocab, std::span<const corpus::Dialogue> ds) {
    std::vector<Context> out;
    out.reserve(ds.size());
    for (const auto& d : ds) out.push_back(corpus::final_context(vocab, d));
    return out;
}

// Everything a policy can be asked about in this run; tabular policies
// need one key per distinct final human turn.
std::vector<Context> every_context(const corpus::Vocabulary& vocab, const fs::path& corpus_dir) {
    std::vector<Context> out;
    for (const char* f : {"normal.jsonl", "toxic.jsonl"}) {
        for (const auto& d : read_dialogues(corpus_dir / f, vocab)) {
            for (std::size_t i = 1; i < d.turns.size(); i += 2) {
                out.push_back(corpus::context_before(vocab, d, i));
            }
        }
    }
    for (const char* f : {"pref_contexts.jsonl", "eval_prompts.jsonl"}) {
        auto xs = read_contexts_jsonl(corpus_dir / f, vocab);
        out.insert(out.end(), xs.begin(), xs.end());
    }
    return out;
}

struct Loaded {
    std::shared_ptr<const corpus::Vocabulary> vocab;
    corpus::TemplateTables tables;
};

Loaded load_corpus_meta(const fs::path& run, Stage stage) {
    const fs::path dir = run / "corpus";
    require(dir / "vocab.json", stage, "corpus");
    require(dir / "tables.json", stage, "corpus");
    Loaded l;
    l.vocab = std::make_shared<const corpus::Vocabulary>(corpus::Vocabulary::from_json(read_json(dir / "vocab.json")));
    l.tables = corpus::TemplateTables::from_json(*l.vocab, read_json(dir / "tables.json"));
    return l;
}

std::shared_ptr<const policy::Policy> load_frozen(const fs::path& path, Stage stage, const char* producer,
                                                  const std::shared_ptr<const corpus::Vocabulary>& vocab) {
    require(path, stage, producer);
    return policy::load_snapshot(path, vocab)->freeze();
}

// ------------------------------------------------------------------ stages

void stage_corpus(const RunConfig& c, const StageLog& log) {
    const fs::path dir = c.out / "corpus";
    fs::create_directories(dir);
    corpus::CorpusSpec spec = c.corpus;
    spec.seed = derive_seed(c.seed, "corpus");
    const corpus::SyntheticCorpus sc = corpus::generate_synthetic_corpus(spec);
    const auto& vocab = sc.world.vocab;

    // Seeded 40/60-style split of the normal dialogues.
    std::vector<corpus::Dialogue> shuffled = sc.normal;
    Rng split_rng(derive_seed(spec.seed, "sft-pref-split"));
    split_rng.shuffle(std::span<corpus::Dialogue>(shuffled));
    const auto n_sft =
        static_cast<std::size_t>(std::floor(c.sft_fraction * static_cast<double>(shuffled.size()) + 1e-9));
    const std::vector<corpus::Dialogue> sft_normal(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_sft));
    const std::vector<corpus::Dialogue> pref_dialogues(shuffled.begin() + static_cast<std::ptrdiff_t>(n_sft),
                                                       shuffled.end());
    std::vector<corpus::Dialogue> eval_dialogues;
    if (c.eval_prompts == "provocative" || c.eval_prompts == "benign") {
        const auto kind =
            c.eval_prompts == "provocative" ? corpus::DialogueKind::toxic : corpus::DialogueKind::benign;
        eval_dialogues = corpus::generate_dialogues(sc.world, spec, kind, c.eval_prompt_count,
                                                    derive_seed(spec.seed, "eval-prompts"));
    } else {
        eval_dialogues = read_dialogues(c.eval_prompts, vocab);
    }

    write_json(dir / "spec.json", spec.to_json());
    write_json(dir / "vocab.json", vocab.to_json());
    write_json(dir / "tables.json", sc.world.tables.to_json(vocab));
    corpus::write_dialogues_jsonl(dir / "normal.jsonl", vocab, sft_normal);
    corpus::write_dialogues_jsonl(dir / "pref_source.jsonl", vocab, pref_dialogues);
    corpus::write_dialogues_jsonl(dir / "toxic.jsonl", vocab, sc.toxic);
    write_contexts_jsonl(dir / "pref_contexts.jsonl", vocab, final_contexts(vocab, pref_dialogues));
    write_contexts_jsonl(dir / "eval_prompts.jsonl", vocab, final_contexts(vocab, eval_dialogues));
    say(log, "corpus: " + std::to_string(sft_normal.size()) + " normal (sft), " + std::to_string(sc.toxic.size()) +
                 " toxic, " + std::to_string(pref_dialogues.size()) + " preference contexts, " +
                 std::to_string(eval_dialogues.size()) + " eval prompts");
}

std::unique_ptr<policy::Policy> make_policy(const RunConfig& c, std::shared_ptr<const corpus::Vocabulary> vocab,
                                            const fs::path& corpus_dir) {
    if (c.policy.backend == policy::Backend::tabular) {
        const auto xs = every_context(*vocab, corpus_dir);
        return std::make_unique<policy::TabularPolicy>(vocab, policy::TabularPolicy::keys_for(*vocab, xs),
                                                       c.policy.max_response_len);
    }
    return std::make_unique<policy::NeuralPolicy>(vocab, c.policy.max_response_len, c.policy.shape,
                                                  derive_seed(c.seed, "init"), c.policy.init_scale);
}

void stage_sft(const RunConfig& c, const StageLog& log) {
    const Loaded meta = load_corpus_meta(c.out, Stage::sft);
    const fs::path cdir = c.out / "corpus";
    require(cdir / "normal.jsonl", Stage::sft, "corpus");
    require(cdir / "toxic.jsonl", Stage::sft, "corpus");
    const auto normal = read_dialogues(cdir / "normal.jsonl", *meta.vocab);
    const auto toxic = read_dialogues(cdir / "toxic.jsonl", *meta.vocab);
    const auto init = make_policy(c, meta.vocab, cdir);
    sft::SftConfig cfg = c.sft;
    cfg.seed = derive_seed(c.seed, "sft");
    for (const auto& base : c.bases()) {
        const std::span<const corpus::Dialogue> tox =
            base == "toxic" ? std::span<const corpus::Dialogue>(toxic) : std::span<const corpus::Dialogue>();
        const sft::SftResult r = sft::train_sft(*init, normal, tox, cfg);
        const fs::path dir = c.out / "sft" / base;
        fs::create_directories(dir);
        policy::save_snapshot(dir / "policy.json", *r.snapshot);
        std::ostringstream m;
        m << sft::EpochMetrics{0, r.initial_train_nll, r.initial_val_nll}.to_json().dump() << '\n';
        for (const auto& e : r.epochs) m << e.to_json().dump() << '\n';
        write_text(dir / "metrics.jsonl", m.str());
        say(log, "sft[" + base + "]: train nll " + std::to_string(r.initial_train_nll) + " -> " +
                     std::to_string(r.epochs.back().train_nll));
    }
}

void stage_prefs(const RunConfig& c, const StageLog& log) {
    const Loaded meta = load_corpus_meta(c.out, Stage::prefs);
    require(c.out / "corpus" / "pref_contexts.jsonl", Stage::prefs, "corpus");
    const auto contexts = read_contexts_jsonl(c.out / "corpus" / "pref_contexts.jsonl", *meta.vocab);
    for (const auto& base : c.bases()) {
        const auto snapshot = load_frozen(c.out / "sft" / base / "policy.json", Stage::prefs, "sft", meta.vocab);
        std::unique_ptr<prefgen::Judge> judge;
        if (c.judge_command) {
            judge = std::make_unique<prefgen::ExternalProcessJudge>(meta.vocab, *c.judge_command);
        } else {
            judge = std::make_unique<prefgen::RuleJudge>(meta.vocab, meta.tables, c.judge);
        }
        prefgen::DatasetStats stats;
        const auto records = prefgen::build_preference_dataset(*snapshot, contexts, derive_seed(c.seed, "prefs"),
                                                               *judge, c.candidates, &stats);
        const fs::path dir = c.out / "prefs" / base;
        fs::create_directories(dir);
        prefgen::write_preferences_jsonl(dir / "preferences.jsonl", *meta.vocab, records);
        write_json(dir / "stats.json", stats.to_json());
        say(log, "prefs[" + base + "]: " + std::to_string(records.size()) + " records, " +
                     std::to_string(stats.passed) + " PASS");
    }
}

void stage_train(const RunConfig& c, const StageLog& log) {
    const Loaded meta = load_corpus_meta(c.out, Stage::train);
    for (const auto& run : c.runs) {
        const fs::path prefs = c.out / "prefs" / run.base / "preferences.jsonl";
        require(prefs, Stage::train, "prefs");
        const auto snapshot =
            load_frozen(c.out / "sft" / run.base / "policy.json", Stage::train, "sft", meta.vocab);
        const auto records = prefgen::read_preferences_jsonl(prefs, *meta.vocab);
        train::TrainerConfig cfg = run.trainer;
        cfg.seed = derive_seed(c.seed, "train");
        const fs::path dir = c.out / "train" / run.name;
        fs::create_directories(dir);
        train::TrainHooks hooks;
        hooks.dump_dir = dir;
        const train::TrainResult r = train::train(snapshot, records, cfg, hooks);
        policy::save_snapshot(dir / "policy.json", *r.trained);
        policy::save_snapshot(dir / "best.json", *r.best);
        train::write_trace_jsonl(dir / "kl_trace.jsonl", r.trace);
        std::ostringstream ep;
        for (const auto& e : r.epochs) ep << e.to_json().dump() << '\n';
        write_text(dir / "epochs.jsonl", ep.str());
        write_json(dir / "summary.json", {{"config", cfg.to_json()},
                                          {"base", run.base},
                                          {"n_train", r.n_train},
                                          {"n_val", r.n_val},
                                          {"steps", r.trace.size()},
                                          {"best_epoch", r.best_epoch},
                                          {"best_val_loss", r.best_val_loss}});
        say(log, "train[" + run.name + "]: " + std::to_string(r.trace.size()) + " steps, loss " +
                     std::to_string(r.trace.front().train_loss) + " -> " +
                     std::to_string(r.trace.back().train_loss));
    }
}

void stage_eval(const RunConfig& c, const StageLog& log) {
    const Loaded meta = load_corpus_meta(c.out, Stage::eval);
    require(c.out / "corpus" / "eval_prompts.jsonl", Stage::eval, "corpus");
    const auto prompts = read_contexts_jsonl(c.out / "corpus" / "eval_prompts.jsonl", *meta.vocab);
    std::vector<std::pair<std::string, fs::path>> models;
    for (const auto& base : c.bases()) {
        models.emplace_back("sft_" + base, c.out / "sft" / base / "policy.json");
    }
    for (const auto& run : c.runs) {
        models.emplace_back(run.name, c.out / "train" / run.name / "policy.json");
    }
    eval::EvalConfig cfg = c.eval;
    cfg.seed = derive_seed(c.seed, "eval");
    json summary = json::object();
    for (const auto& [name, path] : models) {
        const auto p = load_frozen(path, Stage::eval, name.rfind("sft_", 0) == 0 ? "sft" : "train", meta.vocab);
        const eval::EvalResult r = eval::evaluate(*p, meta.tables, prompts, cfg);
        const fs::path dir = c.out / "eval" / name;
        fs::create_directories(dir);
        eval::write_report(dir / "report.json", r.metrics);
        eval::write_audit_jsonl(dir / "audit.jsonl", *meta.vocab, r.audit);
        summary[name] = r.metrics.to_json();
        char buf[160];
        std::snprintf(buf, sizeof buf, "eval[%s]: coherence %.3f evasiveness %.3f toxicity %.3f", name.c_str(),
                      r.metrics.coherence(), r.metrics.evasiveness(), r.metrics.toxicity());
        say(log, buf);
    }
    write_json(c.out / "eval" / "summary.json", summary);
}

void stage_diagnose(const RunConfig& c, const StageLog& log) {
    json out = json::object();
    for (const auto& run : c.runs) {
        const fs::path trace_path = c.out / "train" / run.name / "kl_trace.jsonl";
        require(trace_path, Stage::diagnose, "train");
        const auto trace = read_trace_jsonl(trace_path);
        const KlSummary s = summarize_trace(run.name, trace);
        json j = s.to_json();
        j["final_in_range"] = train::range_check(s.final_chosen_kl) == train::RangeStatus::in;
        const fs::path run_report = c.out / "eval" / run.name / "report.json";
        const fs::path base_report = c.out / "eval" / ("sft_" + run.base) / "report.json";
        if (fs::exists(run_report) && fs::exists(base_report)) {
            const auto m = eval::read_report(run_report);
            const auto b = eval::read_report(base_report);
            j["vs_base"] = {{"base", "sft_" + run.base},
                            {"coherence", m.coherence() - b.coherence()},
                            {"evasiveness", m.evasiveness() - b.evasiveness()},
                            {"toxicity", m.toxicity() - b.toxicity()}};
        }
        out[run.name] = j;
        say(log, "diagnose[" + run.name + "]: final chosen_kl " + std::to_string(s.final_chosen_kl) +
                     (j["final_in_range"].get<bool>() ? " (in range)" : " (out of range)"));
    }
    write_json(c.out / "diagnose" / "summary.json", out);
}

} // namespace

const char* to_string(Stage s) {
    return kStageNames[static_cast<int>(s)];
}

Stage stage_from_string(const std::string& s) {
    for (Stage st : all_stages()) {
        if (s == to_string(st)) return st;
    }
    if (s == "gen-prefs") return Stage::prefs;
    throw ConfigError("unknown stage '" + s + "'");
}

const std::vector<Stage>& all_stages() {
    static const std::vector<Stage> v{Stage::corpus, Stage::sft,  Stage::prefs,
                                      Stage::train,  Stage::eval, Stage::diagnose};
    return v;
}

// ------------------------------------------------------------------ config

MethodRun default_run(losses::Method m) {
    MethodRun r{losses::to_string(m), m == losses::Method::dpo ? "nontoxic" : "toxic",
                train::TrainerConfig::defaults(m)};
    r.trainer.learning_rate = kPipelineLearningRate;
    return r;
}

RunConfig RunConfig::defaults() {
    RunConfig c;
    c.runs.push_back(default_run(losses::Method::dpo));
    c.runs.push_back(default_run(losses::Method::adpo));
    return c;
}

RunConfig RunConfig::from_json(const json& j) {
    if (!j.is_object()) {
        throw ConfigError("config must be a JSON object");
    }
    RunConfig c = defaults();
    in_section("seed", [&] { c.seed = j.value("seed", c.seed); });
    in_section("out", [&] {
        if (j.contains("out")) c.out = j.at("out").get<std::string>();
    });
    if (j.contains("policy")) {
        in_section("policy", [&] {
            const json& p = j.at("policy");
            if (p.contains("backend")) c.policy.backend = policy::backend_from_string(p.at("backend").get<std::string>());
            c.policy.max_response_len = p.value("max_response_len", c.policy.max_response_len);
            c.policy.shape.embed_dim = p.value("embed_dim", c.policy.shape.embed_dim);
            c.policy.shape.hidden_dim = p.value("hidden_dim", c.policy.shape.hidden_dim);
            c.policy.init_scale = p.value("init_scale", c.policy.init_scale);
        });
    }
    if (j.contains("corpus")) {
        in_section("corpus", [&] { c.corpus = corpus::CorpusSpec::from_json(j.at("corpus")); });
    }
    in_section("sft_fraction", [&] { c.sft_fraction = j.value("sft_fraction", c.sft_fraction); });
    in_section("eval_prompts", [&] { c.eval_prompts = j.value("eval_prompts", c.eval_prompts); });
    in_section("eval_prompt_count", [&] { c.eval_prompt_count = j.value("eval_prompt_count", c.eval_prompt_count); });
    if (j.contains("sft")) {
        in_section("sft", [&] { c.sft = sft::SftConfig::from_json(j.at("sft")); });
    }
    if (j.contains("prefgen")) {
        in_section("prefgen", [&] {
            const json& p = j.at("prefgen");
            if (p.contains("judge")) c.judge = prefgen::RuleJudgeConfig::from_json(p.at("judge"));
            if (p.contains("judge_command")) c.judge_command = p.at("judge_command").get<std::string>();
            c.candidates.temperature_a = p.value("temperature_a", c.candidates.temperature_a);
            c.candidates.temperature_b = p.value("temperature_b", c.candidates.temperature_b);
            c.candidates.temperature_toxic = p.value("temperature_toxic", c.candidates.temperature_toxic);
        });
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        if (!t.is_object() || t.empty()) {
            throw ConfigError("train: expected an object mapping run names to trainer configs");
        }
        c.runs.clear();
        for (const auto& [name, body] : t.items()) {
            const std::string section = "train." + name;
            MethodRun run;
            run.name = name;
            in_section(section, [&] {
                json tj = body;
                if (!tj.is_object()) throw ConfigError(section + ": expected an object");
                if (!tj.contains("method")) {
                    if (name != "dpo" && name != "adpo") {
                        throw ConfigError(section + ".method: missing (expected dpo or adpo)");
                    }
                    tj["method"] = name;
                }
                try {
                    losses::method_from_string(tj.at("method").get<std::string>());
                } catch (const Error& e) {
                    throw ConfigError(section + ".method: " + e.what());
                }
                const bool is_dpo = losses::method_from_string(tj.at("method").get<std::string>()) ==
                                    losses::Method::dpo;
                run.base = tj.value("base", std::string(is_dpo ? "nontoxic" : "toxic"));
                tj.erase("base");
                if (!tj.contains("learning_rate")) tj["learning_rate"] = kPipelineLearningRate;
                run.trainer = train::TrainerConfig::from_json(tj);
            });
            c.runs.push_back(std::move(run));
        }
    }
    if (j.contains("eval")) {
        in_section("eval", [&] { c.eval = eval::EvalConfig::from_json(j.at("eval")); });
    }
    c.validate();
    return c;
}

RunConfig RunConfig::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot read config " + path.string());
    }
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return from_json(j);
}

json RunConfig::to_json() const {
    json train = json::object();
    for (const auto& r : runs) {
        json t = r.trainer.to_json();
        t.erase("seed");
        t["base"] = r.base;
        train[r.name] = t;
    }
    json sft_j = sft.to_json();
    sft_j.erase("seed");
    json corpus_j = corpus.to_json();
    corpus_j.erase("seed");
    json eval_j = eval.to_json();
    eval_j.erase("seed");
    json prefgen_j{{"judge", judge.to_json()},
                   {"temperature_a", candidates.temperature_a},
                   {"temperature_b", candidates.temperature_b},
                   {"temperature_toxic", candidates.temperature_toxic}};
    if (judge_command) prefgen_j["judge_command"] = *judge_command;
    return {{"seed", seed},
            {"out", out.string()},
            {"policy",
             {{"backend", policy::to_string(policy.backend)},
              {"max_response_len", policy.max_response_len},
              {"embed_dim", policy.shape.embed_dim},
              {"hidden_dim", policy.shape.hidden_dim},
              {"init_scale", policy.init_scale}}},
            {"corpus", corpus_j},
            {"sft_fraction", sft_fraction},
            {"eval_prompts", eval_prompts},
            {"eval_prompt_count", eval_prompt_count},
            {"sft", sft_j},
            {"prefgen", prefgen_j},
            {"train", train},
            {"eval", eval_j}};
}

void RunConfig::validate() const {
    in_section("corpus", [&] { corpus.validate(); });
    in_section("sft", [&] { sft.validate(); });
    in_section("eval", [&] { eval.validate(); });
    if (policy.max_response_len == 0) throw ConfigError("policy.max_response_len must be positive");
    if (policy.shape.embed_dim == 0 || policy.shape.hidden_dim == 0) {
        throw ConfigError("policy: embed_dim and hidden_dim must be positive");
    }
    if (!(sft_fraction > 0.0 && sft_fraction < 1.0)) throw ConfigError("sft_fraction must lie in (0, 1)");
    if (eval_prompt_count == 0) throw ConfigError("eval_prompt_count must be positive");
    if (runs.empty()) throw ConfigError("train: no runs configured");
    for (double t : {candidates.temperature_a, candidates.temperature_b, candidates.temperature_toxic}) {
        if (!(t > 0.0)) throw ConfigError("prefgen: temperatures must be positive");
    }
    std::set<std::string> names;
    for (const auto& r : runs) {
        if (r.base != "toxic" && r.base != "nontoxic") {
            throw ConfigError("train." + r.name + ".base: expected 'toxic' or 'nontoxic', got '" + r.base + "'");
        }
        if (r.name.empty() || r.name.rfind("sft_", 0) == 0 || r.name.find('/') != std::string::npos) {
            throw ConfigError("train: invalid run name '" + r.name + "'");
        }
        in_section("train." + r.name, [&] { r.trainer.validate(); });
        names.insert(r.name);
    }
}

std::vector<std::string> RunConfig::bases() const {
    std::set<std::string> s;
    for (const auto& r : runs) s.insert(r.base);
    return {s.begin(), s.end()};
}

void apply_overrides(RunConfig& c, const Overrides& o) {
    if (o.seed) c.seed = *o.seed;
    if (o.out) c.out = *o.out;
    if (o.method) {
        const losses::Method m = in_section("--method", [&] { return losses::method_from_string(*o.method); });
        std::erase_if(c.runs, [&](const MethodRun& r) { return r.trainer.method != m; });
        if (c.runs.empty()) {
            c.runs.push_back(default_run(m));
        }
    }
    for (auto& r : c.runs) {
        if (o.beta) r.trainer.beta = *o.beta;
        if (o.gamma && r.trainer.method == losses::Method::adpo) r.trainer.gamma = *o.gamma;
    }
    c.validate();
}

// --------------------------------------------------------------- pipeline

std::map<std::string, std::string> hash_artifacts(const fs::path& run_dir) {
    std::map<std::string, std::string> out;
    if (!fs::exists(run_dir)) return out;
    for (const auto& e : fs::recursive_directory_iterator(run_dir)) {
        if (!e.is_regular_file()) continue;
        const std::string rel = fs::relative(e.path(), run_dir).generic_string();
        if (rel == "manifest.json") continue;
        out[rel] = sha256_file(e.path());
    }
    return out;
}

void run_pipeline(const RunConfig& config, const std::vector<Stage>& stages, const StageLog& log) {
    config.validate();
    std::set<Stage> wanted(stages.begin(), stages.end());
    if (wanted.empty()) {
        throw ConfigError("no stages requested");
    }
    fs::create_directories(config.out);
    json ran = json::array();
    for (Stage s : all_stages()) {
        if (!wanted.count(s)) continue;
        switch (s) {
        case Stage::corpus:
            stage_corpus(config, log);
            break;
        case Stage::sft:
            stage_sft(config, log);
            break;
        case Stage::prefs:
            stage_prefs(config, log);
            break;
        case Stage::train:
            stage_train(config, log);
            break;
        case Stage::eval:
            stage_eval(config, log);
            break;
        case Stage::diagnose:
            stage_diagnose(config, log);
            break;
        }
        ran.push_back(to_string(s));
    }
    json manifest{{"tool", kToolName},
                  {"version", kToolVersion},
                  {"config", config.to_json()},
                  {"stages", ran},
                  {"artifacts", hash_artifacts(config.out)}};
    write_json(config.out / "manifest.json", manifest);
}

// ----------------------------------------------------------------- compare

json KlSummary::to_json() const {
    return {{"run", run},
            {"steps", steps},
            {"final_chosen_kl", final_chosen_kl},
            {"final_toxic_kl", final_toxic_kl},
            {"mean_chosen_kl", mean_chosen_kl},
            {"mean_toxic_kl", mean_toxic_kl},
            {"in_range_fraction", in_range_fraction}};
}

KlSummary summarize_trace(const std::string& run, const std::vector<train::StepRecord>& trace) {
    KlSummary s;
    s.run = run;
    s.steps = trace.size();
    if (trace.empty()) return s;
    std::size_t in = 0;
    for (const auto& r : trace) {
        s.mean_chosen_kl += r.chosen_kl;
        s.mean_toxic_kl += r.toxic_kl;
        in += train::range_check(r.chosen_kl) == train::RangeStatus::in;
    }
    const double n = static_cast<double>(trace.size());
    s.mean_chosen_kl /= n;
    s.mean_toxic_kl /= n;
    s.in_range_fraction = static_cast<double>(in) / n;
    s.final_chosen_kl = trace.back().chosen_kl;
    s.final_toxic_kl = trace.back().toxic_kl;
    return s;
}

std::vector<train::StepRecord> read_trace_jsonl(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::vector<train::StepRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const json j = json::parse(line);
            out.push_back({j.at("step").get<std::size_t>(), j.at("chosen_kl").get<double>(),
                           j.at("toxic_kl").get<double>(), j.at("train_loss").get<double>(),
                           j.at("val_loss").get<double>()});
        } catch (const json::exception& e) {
            throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

namespace {

struct RunView {
    std::map<std::string, eval::EvalMetrics> models;
    std::vector<std::string> trained;
    std::vector<KlSummary> kl;
};

RunView read_run(const fs::path& run) {
    const fs::path eval_dir = run / "eval";
    if (!fs::is_directory(eval_dir)) {
        throw MissingUpstream("run directory " + run.string() + " has no eval/ reports");
    }
    RunView v;
    for (const auto& e : fs::directory_iterator(eval_dir)) {
        if (e.is_directory() && fs::exists(e.path() / "report.json")) {
            v.models[e.path().filename().string()] = eval::read_report(e.path() / "report.json");
        }
    }
    if (v.models.empty()) {
        throw MissingUpstream("run directory " + run.string() + " has no eval/ reports");
    }
    for (const auto& [name, m] : v.models) {
        if (name.rfind("sft_", 0) != 0) v.trained.push_back(name);
        const fs::path trace = run / "train" / name / "kl_trace.jsonl";
        if (fs::exists(trace)) v.kl.push_back(summarize_trace(name, read_trace_jsonl(trace)));
    }
    return v;
}

ModelDelta delta(const std::string& na, const eval::EvalMetrics& a, const std::string& nb,
                 const eval::EvalMetrics& b) {
    return {na, nb, a, b, b.coherence() - a.coherence(), b.evasiveness() - a.evasiveness(),
            b.toxicity() - a.toxicity()};
}

} // namespace

Comparison compare_runs(const fs::path& run_a, const fs::path& run_b) {
    const RunView a = read_run(run_a);
    const RunView b = read_run(run_b);
    Comparison c;
    for (const auto& [name, m] : a.models) {
        auto it = b.models.find(name);
        if (it != b.models.end()) c.deltas.push_back(delta(name, m, name, it->second));
    }
    if (a.trained.size() == 1 && b.trained.size() == 1 && a.trained[0] != b.trained[0]) {
        c.deltas.push_back(delta(a.trained[0], a.models.at(a.trained[0]), b.trained[0], b.models.at(b.trained[0])));
    }
    c.kl_a = a.kl;
    c.kl_b = b.kl;
    return c;
}

json Comparison::to_json() const {
    json d = json::array();
    for (const auto& x : deltas) {
        d.push_back({{"a", x.model_a},
                     {"b", x.model_b},
                     {"metrics_a", x.a.to_json()},
                     {"metrics_b", x.b.to_json()},
                     {"delta", {{"coherence", x.d_coherence}, {"evasiveness", x.d_evasiveness},
                                {"toxicity", x.d_toxicity}}}});
    }
    json ka = json::array();
    for (const auto& k : kl_a) ka.push_back(k.to_json());
    json kb = json::array();
    for (const auto& k : kl_b) kb.push_back(k.to_json());
    return {{"deltas", d}, {"kl_a", ka}, {"kl_b", kb}};
}

std::string Comparison::to_table() const {
    std::ostringstream out;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-28s %12s %12s %12s\n", "model (a -> b)", "coherence", "evasiveness",
                  "toxicity");
    out << buf;
    for (const auto& x : deltas) {
        const std::string label = x.model_a == x.model_b ? x.model_a : x.model_a + " -> " + x.model_b;
        std::snprintf(buf, sizeof buf, "%-28s %+12.4f %+12.4f %+12.4f\n", label.c_str(), x.d_coherence,
                      x.d_evasiveness, x.d_toxicity);
        out << buf;
    }
    auto kl_rows = [&](const char* side, const std::vector<KlSummary>& ks) {
        for (const auto& k : ks) {
            std::snprintf(buf, sizeof buf, "kl[%s] %-20s steps %zu final chosen %.4f toxic %.4f in-range %.2f\n",
                          side, k.run.c_str(), k.steps, k.final_chosen_kl, k.final_toxic_kl, k.in_range_fraction);
            out << buf;
        }
    };
    kl_rows("a", kl_a);
    kl_rows("b", kl_b);
    return out.str();
}

} // namespace adpo::pipeline
