#include "adpo/eval.hpp"

#include "adpo/rng.hpp"

#include <cmath>
#include <fstream>

namespace adpo::eval {

using nlohmann::json;

Flags classify_response(const Classifier& c, const Context& x, const Response& y) {
    if (y.tokens.empty()) {
        throw InvalidArgument("classify_response: empty response");
    }
    Flags f;
    f.toxic = corpus::count_lexicon(c.vocab, y.tokens) > 0;
    f.evasive = corpus::count_evasive(c.tables, y.tokens) > 0;
    f.coherent = corpus::coherence_proxy(c.vocab, c.tables, x, y) >= c.coherence_threshold;
    return f;
}

namespace {
double ratio(std::size_t k, std::size_t n) {
    if (n == 0) {
        throw EmptyDataset("metrics over zero responses");
    }
    return static_cast<double>(k) / static_cast<double>(n);
}
} // namespace

double EvalMetrics::coherence() const { return ratio(coherent, n); }
double EvalMetrics::evasiveness() const { return ratio(evasive, n); }
double EvalMetrics::toxicity() const { return ratio(toxic, n); }

json EvalMetrics::to_json() const {
    return {{"coherence", coherence()},
            {"evasiveness", evasiveness()},
            {"toxicity", toxicity()},
            {"n", n},
            {"counts", {{"coherent", coherent}, {"evasive", evasive}, {"toxic", toxic}}}};
}

EvalMetrics EvalMetrics::from_json(const json& j) {
    try {
        EvalMetrics m;
        m.n = j.at("n").get<std::size_t>();
        if (j.contains("counts")) {
            const auto& c = j.at("counts");
            m.coherent = c.at("coherent").get<std::size_t>();
            m.evasive = c.at("evasive").get<std::size_t>();
            m.toxic = c.at("toxic").get<std::size_t>();
        } else {
            auto back = [&](const char* k) {
                return static_cast<std::size_t>(std::llround(j.at(k).get<double>() * static_cast<double>(m.n)));
            };
            m.coherent = back("coherence");
            m.evasive = back("evasiveness");
            m.toxic = back("toxicity");
        }
        if (m.n == 0 || m.coherent > m.n || m.evasive > m.n || m.toxic > m.n) {
            throw SchemaError("eval report counts are inconsistent");
        }
        return m;
    } catch (const json::exception& e) {
        throw SchemaError(std::string("malformed eval report: ") + e.what());
    }
}

EvalMetrics score_responses(const Classifier& c, std::span<const Context> prompts,
                            std::span<const Response> responses) {
    if (prompts.size() != responses.size()) {
        throw InvalidArgument("score_responses: prompt/response count mismatch");
    }
    if (prompts.empty()) {
        throw EmptyDataset("score_responses: no responses");
    }
    EvalMetrics m;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        const Flags f = classify_response(c, prompts[i], responses[i]);
        ++m.n;
        m.coherent += f.coherent;
        m.evasive += f.evasive;
        m.toxic += f.toxic;
    }
    return m;
}

void EvalConfig::validate() const {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
        throw InvalidArgument("eval: temperature must be positive");
    }
    if (!std::isfinite(coherence_threshold)) {
        throw InvalidArgument("eval: coherence threshold must be finite");
    }
}

json EvalConfig::to_json() const {
    return {{"temperature", temperature}, {"coherence_threshold", coherence_threshold}, {"seed", seed}};
}

EvalConfig EvalConfig::from_json(const json& j) {
    EvalConfig c;
    try {
        c.temperature = j.value("temperature", c.temperature);
        c.coherence_threshold = j.value("coherence_threshold", c.coherence_threshold);
        c.seed = j.value("seed", c.seed);
    } catch (const json::exception& e) {
        throw InvalidArgument(std::string("eval config: ") + e.what());
    }
    c.validate();
    return c;
}

EvalResult evaluate(const policy::Policy& policy, const corpus::TemplateTables& tables,
                    std::span<const Context> prompts, const EvalConfig& config) {
    config.validate();
    if (prompts.empty()) {
        throw EmptyDataset("evaluate: empty prompt list");
    }
    const Classifier c{policy.vocab(), tables, config.coherence_threshold};
    EvalResult r;
    r.audit.reserve(prompts.size());
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        AuditEntry e;
        e.index = i;
        e.context = prompts[i];
        e.response = policy::sample(policy, policy::Role::theta, prompts[i], {config.temperature, false},
                                    derive_seed(config.seed, i));
        e.flags = classify_response(c, e.context, e.response);
        ++r.metrics.n;
        r.metrics.coherent += e.flags.coherent;
        r.metrics.evasive += e.flags.evasive;
        r.metrics.toxic += e.flags.toxic;
        r.audit.push_back(std::move(e));
    }
    return r;
}

void write_report(const std::filesystem::path& path, const EvalMetrics& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << m.to_json().dump(2) << '\n';
}

EvalMetrics read_report(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw SchemaError(path.string() + ": " + e.what());
    }
    return EvalMetrics::from_json(j);
}

void write_audit_jsonl(const std::filesystem::path& path, const corpus::Vocabulary& vocab,
                       std::span<const AuditEntry> audit) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    for (const auto& e : audit) {
        out << json{{"index", e.index},
                    {"context", corpus::detokenize(vocab, e.context.tokens)},
                    {"response", corpus::detokenize(vocab, e.response.tokens)},
                    {"coherent", e.flags.coherent},
                    {"evasive", e.flags.evasive},
                    {"toxic", e.flags.toxic}}
                   .dump()
            << '\n';
    }
}

} // namespace adpo::eval
