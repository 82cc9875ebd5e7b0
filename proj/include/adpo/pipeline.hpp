#pragma once

#include "adpo/corpus.hpp"
#include "adpo/eval.hpp"
#include "adpo/policy.hpp"
#include "adpo/prefgen.hpp"
#include "adpo/sft.hpp"
#include "adpo/train.hpp"

#include "json.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace adpo::pipeline {

inline constexpr const char* kToolName = "adpo";
inline constexpr const char* kToolVersion = "0.1.0";

// Bad configuration: exit status 2.
class ConfigError : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};
// A stage input that no earlier stage produced: exit status 3.
class MissingUpstream : public Error {
public:
    using Error::Error;
};

enum class Stage { corpus, sft, prefs, train, eval, diagnose };
const char* to_string(Stage s);
Stage stage_from_string(const std::string& s);
const std::vector<Stage>& all_stages();

struct PolicyConfig {
    policy::Backend backend = policy::Backend::neural;
    std::size_t max_response_len = 6;
    policy::NeuralShape shape{};
    double init_scale = 0.1;
};

// One preference-optimisation run: objective plus the SFT model it starts
// from ("nontoxic" = normal dialogues only, "toxic" = normal plus
// control-token-augmented toxic dialogues).
struct MethodRun {
    std::string name;
    std::string base;
    train::TrainerConfig trainer;
};

// Preference-optimisation learning rate used by pipeline runs unless the
// config sets one. TrainerConfig itself defaults to 3e-5, which barely
// moves a policy of this size in a few dozen steps.
inline constexpr double kPipelineLearningRate = 0.01;

MethodRun default_run(losses::Method m);

struct RunConfig {
    std::uint64_t seed = 42;
    std::filesystem::path out = "runs/default";
    PolicyConfig policy{};
    corpus::CorpusSpec corpus{};
    // Share of normal dialogues used for SFT; the rest provide the
    // preference-generation contexts (final assistant turn removed).
    double sft_fraction = 0.4;
    // "provocative", "benign" or a path to a dialogue JSONL file whose
    // final contexts become the prompts.
    std::string eval_prompts = "provocative";
    std::size_t eval_prompt_count = 400;
    sft::SftConfig sft{};
    prefgen::RuleJudgeConfig judge{};
    std::optional<std::string> judge_command;
    prefgen::CandidateOptions candidates{};
    std::vector<MethodRun> runs;
    eval::EvalConfig eval{};

    // Defaults with the dpo (nontoxic base) and adpo (toxic base) runs.
    static RunConfig defaults();
    // Throws ConfigError naming the offending field.
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::filesystem::path& path);
    nlohmann::json to_json() const;
    void validate() const;

    // SFT bases needed by the configured runs, sorted.
    std::vector<std::string> bases() const;
};

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::filesystem::path> out;
    std::optional<std::string> method;  // keep only runs using this method
    std::optional<double> beta;
    std::optional<double> gamma;
};
void apply_overrides(RunConfig& config, const Overrides& o);

struct StageLog {
    std::function<void(const std::string&)> info;
};

// Runs the requested stages in pipeline order and rewrites manifest.json.
void run_pipeline(const RunConfig& config, const std::vector<Stage>& stages, const StageLog& log = {});

// Hashes every file below `run_dir` except the manifest itself.
std::map<std::string, std::string> hash_artifacts(const std::filesystem::path& run_dir);

struct ModelDelta {
    std::string model_a;
    std::string model_b;
    eval::EvalMetrics a;
    eval::EvalMetrics b;
    double d_coherence = 0.0;
    double d_evasiveness = 0.0;
    double d_toxicity = 0.0;
};

struct KlSummary {
    std::string run;
    std::size_t steps = 0;
    double final_chosen_kl = 0.0;
    double final_toxic_kl = 0.0;
    double mean_chosen_kl = 0.0;
    double mean_toxic_kl = 0.0;
    double in_range_fraction = 0.0;
    nlohmann::json to_json() const;
};
KlSummary summarize_trace(const std::string& run, const std::vector<train::StepRecord>& trace);
std::vector<train::StepRecord> read_trace_jsonl(const std::filesystem::path& path);

struct Comparison {
    std::vector<ModelDelta> deltas;  // b - a
    std::vector<KlSummary> kl_a;
    std::vector<KlSummary> kl_b;
    nlohmann::json to_json() const;
    std::string to_table() const;
};

// Pairs models of equal name; when each run trained exactly one policy
// under different names, those two are paired as well.
Comparison compare_runs(const std::filesystem::path& run_a, const std::filesystem::path& run_b);

} // namespace adpo::pipeline
