#pragma once

#include "adpo/corpus.hpp"
#include "adpo/policy.hpp"
#include "adpo/types.hpp"

#include "json.hpp"

#include <filesystem>
#include <span>
#include <vector>

namespace adpo::eval {

struct Flags {
    bool coherent = false;
    bool evasive = false;
    bool toxic = false;
};

struct Classifier {
    const corpus::Vocabulary& vocab;
    const corpus::TemplateTables& tables;
    double coherence_threshold = 0.5;
};

// toxic: any lexicon token; evasive: at least one template match;
// coherent: coherence proxy >= threshold. Throws on an empty response.
Flags classify_response(const Classifier& c, const Context& x, const Response& y);

struct EvalMetrics {
    std::size_t n = 0;
    std::size_t coherent = 0;
    std::size_t evasive = 0;
    std::size_t toxic = 0;

    double coherence() const;
    double evasiveness() const;
    double toxicity() const;
    nlohmann::json to_json() const;
    static EvalMetrics from_json(const nlohmann::json& j);
};

// Rates over already generated responses; pairs must line up.
EvalMetrics score_responses(const Classifier& c, std::span<const Context> prompts,
                            std::span<const Response> responses);

struct EvalConfig {
    double temperature = 1.2;
    double coherence_threshold = 0.5;
    std::uint64_t seed = 42;

    void validate() const;
    nlohmann::json to_json() const;
    static EvalConfig from_json(const nlohmann::json& j);
};

struct AuditEntry {
    std::size_t index = 0;
    Context context;
    Response response;
    Flags flags;
};

struct EvalResult {
    EvalMetrics metrics;
    std::vector<AuditEntry> audit;
};

// One plain-conditioned sample per prompt, prompt i seeded with
// derive_seed(seed, i).
EvalResult evaluate(const policy::Policy& policy, const corpus::TemplateTables& tables,
                    std::span<const Context> prompts, const EvalConfig& config);

void write_report(const std::filesystem::path& path, const EvalMetrics& m);
EvalMetrics read_report(const std::filesystem::path& path);
void write_audit_jsonl(const std::filesystem::path& path, const corpus::Vocabulary& vocab,
                       std::span<const AuditEntry> audit);

} // namespace adpo::eval
