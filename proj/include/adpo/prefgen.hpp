#pragma once

#include "adpo/corpus.hpp"
#include "adpo/policy.hpp"
#include "adpo/types.hpp"

#include "json.hpp"

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace adpo::prefgen {

struct CandidateSet {
    Context context;
    Response resp_a;  // plain conditioning, temperature_a
    Response resp_b;  // plain conditioning, temperature_b
    Response toxic;   // control-token conditioning, temperature_toxic
};

struct CandidateOptions {
    double temperature_a = 1.0;
    double temperature_b = 1.5;
    double temperature_toxic = 1.5;
};

CandidateSet generate_candidates(const policy::Policy& snapshot, const Context& x, std::uint64_t seed,
                                 const CandidateOptions& opts = {});

enum class Verdict { a, b, pass };
const char* to_string(Verdict v);

struct JudgeVerdict {
    Verdict verdict = Verdict::pass;
    std::string rationale;
};

class Judge {
public:
    virtual ~Judge() = default;
    virtual JudgeVerdict judge(const Context& x, const Response& a, const Response& b) = 0;
};

struct RuleJudgeConfig {
    double toxic_penalty = 1.0;    // per lexicon token
    double evasive_penalty = 0.5;  // per evasive template occurrence
    double floor = -0.5;           // PASS when both scores are strictly below

    nlohmann::json to_json() const;
    static RuleJudgeConfig from_json(const nlohmann::json& j);
};

// Deterministic stand-in for an LLM annotator.
// score = coherence proxy - toxic_penalty * lexicon tokens
//         - evasive_penalty * template matches.
// A clean response always beats one carrying lexicon tokens; otherwise
// the higher score wins. Exact ties and pairs that both fall below the
// floor are PASS.
class RuleJudge final : public Judge {
public:
    RuleJudge(std::shared_ptr<const corpus::Vocabulary> vocab, corpus::TemplateTables tables,
              RuleJudgeConfig config = {});

    double score(const Context& x, const Response& y) const;
    JudgeVerdict judge(const Context& x, const Response& a, const Response& b) override;

private:
    std::shared_ptr<const corpus::Vocabulary> vocab_;
    corpus::TemplateTables tables_;
    RuleJudgeConfig config_;
};

// Line protocol for external judges: one request object per line,
// {"context","a","b"}, answered by one line {"verdict","rationale"} where
// verdict is "A", "B", "(A)", "(B)" or "PASS".
nlohmann::json judge_request(const corpus::Vocabulary& vocab, const Context& x, const Response& a,
                             const Response& b);
JudgeVerdict parse_judge_reply(const std::string& line);

// Runs `command` through /bin/sh and talks the line protocol over its
// stdin/stdout. The process lives as long as this object.
class ExternalProcessJudge final : public Judge {
public:
    ExternalProcessJudge(std::shared_ptr<const corpus::Vocabulary> vocab, const std::string& command);
    ~ExternalProcessJudge() override;
    ExternalProcessJudge(const ExternalProcessJudge&) = delete;
    ExternalProcessJudge& operator=(const ExternalProcessJudge&) = delete;

    JudgeVerdict judge(const Context& x, const Response& a, const Response& b) override;

private:
    std::shared_ptr<const corpus::Vocabulary> vocab_;
    int pid_ = -1;
    int to_child_ = -1;
    int from_child_ = -1;
    std::string buffer_;
};

struct DatasetStats {
    std::size_t contexts = 0;
    std::size_t chose_a = 0;
    std::size_t chose_b = 0;
    std::size_t passed = 0;
    nlohmann::json to_json() const;
};

// One record per non-PASS context, in context order. Throws EmptyDataset
// for an empty context list or when every context is PASS.
std::vector<PreferenceRecord> build_preference_dataset(const policy::Policy& snapshot,
                                                       std::span<const Context> contexts, std::uint64_t seed,
                                                       Judge& judge, const CandidateOptions& opts = {},
                                                       DatasetStats* stats = nullptr);

nlohmann::json record_to_json(const corpus::Vocabulary& vocab, const PreferenceRecord& r);
PreferenceRecord record_from_json(const corpus::Vocabulary& vocab, const nlohmann::json& j);
void write_preferences_jsonl(const std::filesystem::path& path, const corpus::Vocabulary& vocab,
                             std::span<const PreferenceRecord> records);
std::vector<PreferenceRecord> read_preferences_jsonl(const std::filesystem::path& path,
                                                     const corpus::Vocabulary& vocab);

} // namespace adpo::prefgen
