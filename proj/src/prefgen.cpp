#include "adpo/prefgen.hpp"

#include "adpo/rng.hpp"

#include <cstdio>
#include <fstream>

namespace adpo::prefgen {

using nlohmann::json;
using policy::Role;

CandidateSet generate_candidates(const policy::Policy& snapshot, const Context& x, std::uint64_t seed,
                                 const CandidateOptions& opts) {
    corpus::parse_context(snapshot.vocab(), x);
    CandidateSet c;
    c.context = x;
    c.resp_a = policy::sample(snapshot, Role::ref, x, {opts.temperature_a, false}, derive_seed(seed, "resp_a"));
    c.resp_b = policy::sample(snapshot, Role::ref, x, {opts.temperature_b, false}, derive_seed(seed, "resp_b"));
    c.toxic = policy::sample(snapshot, Role::tox, x, {opts.temperature_toxic, false}, derive_seed(seed, "toxic"));
    return c;
}

const char* to_string(Verdict v) {
    switch (v) {
    case Verdict::a:
        return "A";
    case Verdict::b:
        return "B";
    case Verdict::pass:
        return "PASS";
    }
    return "?";
}

json RuleJudgeConfig::to_json() const {
    return {{"toxic_penalty", toxic_penalty}, {"evasive_penalty", evasive_penalty}, {"floor", floor}};
}

RuleJudgeConfig RuleJudgeConfig::from_json(const json& j) {
    RuleJudgeConfig c;
    c.toxic_penalty = j.value("toxic_penalty", c.toxic_penalty);
    c.evasive_penalty = j.value("evasive_penalty", c.evasive_penalty);
    c.floor = j.value("floor", c.floor);
    return c;
}

RuleJudge::RuleJudge(std::shared_ptr<const corpus::Vocabulary> vocab, corpus::TemplateTables tables,
                     RuleJudgeConfig config)
    : vocab_(std::move(vocab)), tables_(std::move(tables)), config_(config) {}

double RuleJudge::score(const Context& x, const Response& y) const {
    if (y.tokens.empty()) {
        throw InvalidArgument("judge: empty response");
    }
    return corpus::coherence_proxy(*vocab_, tables_, x, y) -
           config_.toxic_penalty * static_cast<double>(corpus::count_lexicon(*vocab_, y.tokens)) -
           config_.evasive_penalty * static_cast<double>(corpus::count_evasive(tables_, y.tokens));
}

JudgeVerdict RuleJudge::judge(const Context& x, const Response& a, const Response& b) {
    const double sa = score(x, a);
    const double sb = score(x, b);
    const bool ta = corpus::count_lexicon(*vocab_, a.tokens) > 0;
    const bool tb = corpus::count_lexicon(*vocab_, b.tokens) > 0;
    char buf[128];
    std::snprintf(buf, sizeof buf, "score A=%.4f B=%.4f", sa, sb);
    JudgeVerdict v;
    v.rationale = buf;
    if (ta != tb) {
        v.verdict = ta ? Verdict::b : Verdict::a;
        v.rationale += "; only one response is toxic";
    } else if (sa < config_.floor && sb < config_.floor) {
        v.verdict = Verdict::pass;
        v.rationale += "; both below floor";
    } else if (sa == sb) {
        v.verdict = Verdict::pass;
        v.rationale += "; tie";
    } else {
        v.verdict = sa > sb ? Verdict::a : Verdict::b;
    }
    return v;
}

json judge_request(const corpus::Vocabulary& vocab, const Context& x, const Response& a, const Response& b) {
    return {{"context", corpus::detokenize(vocab, x.tokens)},
            {"a", corpus::detokenize(vocab, a.tokens)},
            {"b", corpus::detokenize(vocab, b.tokens)}};
}

JudgeVerdict parse_judge_reply(const std::string& line) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        throw SchemaError(std::string("judge reply is not JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("verdict") || !j.at("verdict").is_string()) {
        throw SchemaError("judge reply lacks a string \"verdict\"");
    }
    const std::string v = j.at("verdict").get<std::string>();
    JudgeVerdict out;
    if (v == "A" || v == "(A)") {
        out.verdict = Verdict::a;
    } else if (v == "B" || v == "(B)") {
        out.verdict = Verdict::b;
    } else if (v == "PASS") {
        out.verdict = Verdict::pass;
    } else {
        throw SchemaError("judge verdict must be A, B or PASS, got \"" + v + "\"");
    }
    if (j.contains("rationale") && j.at("rationale").is_string()) {
        out.rationale = j.at("rationale").get<std::string>();
    }
    return out;
}

json DatasetStats::to_json() const {
    return {{"contexts", contexts}, {"chose_a", chose_a}, {"chose_b", chose_b}, {"pass", passed}};
}

std::vector<PreferenceRecord> build_preference_dataset(const policy::Policy& snapshot,
                                                       std::span<const Context> contexts, std::uint64_t seed,
                                                       Judge& judge, const CandidateOptions& opts,
                                                       DatasetStats* stats) {
    if (contexts.empty()) {
        throw EmptyDataset("preference generation needs at least one context");
    }
    DatasetStats local;
    std::vector<PreferenceRecord> out;
    for (std::size_t i = 0; i < contexts.size(); ++i) {
        const CandidateSet c = generate_candidates(snapshot, contexts[i], derive_seed(seed, i), opts);
        const JudgeVerdict v = judge.judge(c.context, c.resp_a, c.resp_b);
        ++local.contexts;
        if (v.verdict == Verdict::pass || c.resp_a == c.resp_b) {
            ++local.passed;
            continue;
        }
        const bool a_wins = v.verdict == Verdict::a;
        (a_wins ? local.chose_a : local.chose_b)++;
        out.push_back({c.context, a_wins ? c.resp_a : c.resp_b, a_wins ? c.resp_b : c.resp_a, c.toxic});
    }
    if (stats != nullptr) {
        *stats = local;
    }
    if (out.empty()) {
        throw EmptyDataset("every context was judged PASS; no preference records");
    }
    return out;
}

json record_to_json(const corpus::Vocabulary& vocab, const PreferenceRecord& r) {
    return {{"context", corpus::detokenize(vocab, r.context.tokens)},
            {"chosen", corpus::detokenize(vocab, r.chosen.tokens)},
            {"rejected", corpus::detokenize(vocab, r.rejected.tokens)},
            {"toxic", corpus::detokenize(vocab, r.toxic.tokens)}};
}

PreferenceRecord record_from_json(const corpus::Vocabulary& vocab, const json& j) {
    auto text = [&](const char* field) {
        if (!j.contains(field) || !j.at(field).is_string()) {
            throw SchemaError(std::string("preference record lacks string field \"") + field + "\"");
        }
        return j.at(field).get<std::string>();
    };
    PreferenceRecord r;
    r.context = corpus::context_from_text(vocab, text("context"));
    r.chosen.tokens = corpus::tokenize(vocab, text("chosen"));
    r.rejected.tokens = corpus::tokenize(vocab, text("rejected"));
    r.toxic.tokens = corpus::tokenize(vocab, text("toxic"));
    if (r.chosen.tokens.empty() || r.rejected.tokens.empty() || r.toxic.tokens.empty()) {
        throw SchemaError("preference record has an empty response");
    }
    return r;
}

void write_preferences_jsonl(const std::filesystem::path& path, const corpus::Vocabulary& vocab,
                             std::span<const PreferenceRecord> records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    for (const auto& r : records) {
        out << record_to_json(vocab, r).dump() << '\n';
    }
}

std::vector<PreferenceRecord> read_preferences_jsonl(const std::filesystem::path& path,
                                                     const corpus::Vocabulary& vocab) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::vector<PreferenceRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(record_from_json(vocab, json::parse(line)));
        } catch (const json::exception& e) {
            throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        } catch (const Error& e) {
            throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

} // namespace adpo::prefgen
