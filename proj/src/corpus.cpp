#include "adpo/corpus.hpp"

#include "adpo/hashing.hpp"
#include "adpo/rng.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <set>
#include <sstream>

namespace adpo::corpus {

using nlohmann::json;

// ----------------------------------------------------------------- vocabulary

Vocabulary Vocabulary::build(const std::vector<std::string>& words,
                             const std::vector<std::string>& lexicon) {
    if (lexicon.empty()) {
        throw InvalidArgument("vocabulary: toxic lexicon must be nonempty");
    }
    Vocabulary v;
    v.tokens_ = {std::string(kHumanMarker), std::string(kAssistantMarker),
                 std::string(kEndMarker), std::string(kControlToken)};
    auto add = [&](const std::string& w) {
        if (w.empty() || w.find_first_of(" \t\r\n") != std::string::npos) {
            throw InvalidArgument("vocabulary: invalid token '" + w + "'");
        }
        if (std::find(v.tokens_.begin(), v.tokens_.end(), w) != v.tokens_.end()) {
            throw InvalidArgument("vocabulary: duplicate or reserved token '" + w + "'");
        }
        v.tokens_.push_back(w);
        return static_cast<TokenId>(v.tokens_.size() - 1);
    };
    for (const auto& w : words) {
        add(w);
    }
    for (const auto& w : lexicon) {
        v.lexicon_.push_back(add(w));
    }
    v.index();
    return v;
}

void Vocabulary::index() {
    ids_.clear();
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        ids_.emplace(tokens_[i], static_cast<TokenId>(i));
    }
    toxic_mask_.assign(tokens_.size(), 0);
    for (TokenId t : lexicon_) {
        toxic_mask_[static_cast<std::size_t>(t)] = 1;
    }
    response_tokens_.clear();
    response_index_.assign(tokens_.size(), -1);
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
        const auto id = static_cast<TokenId>(i);
        if (id == human_marker() || id == assistant_marker() || id == control_token()) {
            continue;
        }
        response_index_[i] = static_cast<int>(response_tokens_.size());
        response_tokens_.push_back(id);
    }
}

const std::string& Vocabulary::token(TokenId id) const {
    if (!contains(id)) {
        throw OutOfVocabulary("token id " + std::to_string(id) + " out of range");
    }
    return tokens_[static_cast<std::size_t>(id)];
}

TokenId Vocabulary::id(std::string_view surface) const {
    auto found = find(surface);
    if (!found) {
        throw OutOfVocabulary("out-of-vocabulary token '" + std::string(surface) + "'");
    }
    return *found;
}

std::optional<TokenId> Vocabulary::find(std::string_view surface) const {
    auto it = ids_.find(std::string(surface));
    if (it == ids_.end()) {
        return std::nullopt;
    }
    return it->second;
}

bool Vocabulary::is_toxic(TokenId id) const {
    return contains(id) && toxic_mask_[static_cast<std::size_t>(id)] != 0;
}

int Vocabulary::response_index(TokenId id) const {
    return contains(id) ? response_index_[static_cast<std::size_t>(id)] : -1;
}

std::string Vocabulary::hash() const {
    return sha256_hex(to_json().dump());
}

json Vocabulary::to_json() const {
    return json{{"tokens", tokens_}, {"toxic_lexicon", lexicon_}};
}

Vocabulary Vocabulary::from_json(const json& j) {
    const auto tokens = j.at("tokens").get<std::vector<std::string>>();
    const auto lexicon = j.at("toxic_lexicon").get<std::vector<TokenId>>();
    if (tokens.size() < 4 || tokens[0] != kHumanMarker || tokens[1] != kAssistantMarker ||
        tokens[2] != kEndMarker || tokens[3] != kControlToken) {
        throw SchemaError("vocabulary: special tokens missing or out of order");
    }
    std::vector<std::string> words;
    std::vector<std::string> lex;
    std::set<TokenId> lexset(lexicon.begin(), lexicon.end());
    for (std::size_t i = 4; i < tokens.size(); ++i) {
        if (!lexset.count(static_cast<TokenId>(i))) {
            words.push_back(tokens[i]);
        }
    }
    for (TokenId t : lexicon) {
        if (t < 4 || static_cast<std::size_t>(t) >= tokens.size()) {
            throw SchemaError("vocabulary: lexicon id out of range");
        }
        lex.push_back(tokens[static_cast<std::size_t>(t)]);
    }
    Vocabulary v = build(words, lex);
    // build() places the lexicon last; a stored vocabulary may interleave it.
    v.tokens_ = tokens;
    v.lexicon_ = lexicon;
    v.index();
    return v;
}

TokenSeq tokenize(const Vocabulary& vocab, std::string_view text) {
    TokenSeq out;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && (text[i] == ' ' || text[i] == '\t' || text[i] == '\n' || text[i] == '\r')) {
            ++i;
        }
        std::size_t j = i;
        while (j < text.size() && !(text[j] == ' ' || text[j] == '\t' || text[j] == '\n' || text[j] == '\r')) {
            ++j;
        }
        if (j > i) {
            out.push_back(vocab.id(text.substr(i, j - i)));
        }
        i = j;
    }
    return out;
}

std::string detokenize(const Vocabulary& vocab, std::span<const TokenId> tokens) {
    std::string s;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i > 0) {
            s.push_back(' ');
        }
        s += vocab.token(tokens[i]);
    }
    return s;
}

// ------------------------------------------------------------------ dialogues

void validate_dialogue(const Dialogue& d) {
    if (d.turns.empty()) {
        throw InvalidArgument("dialogue has no turns");
    }
    for (std::size_t i = 0; i < d.turns.size(); ++i) {
        const Speaker expected = (i % 2 == 0) ? Speaker::human : Speaker::assistant;
        if (d.turns[i].speaker != expected) {
            throw InvalidArgument("dialogue turns must alternate starting with human (turn " +
                                  std::to_string(i) + ")");
        }
    }
    if (d.turns.back().speaker != Speaker::assistant) {
        throw InvalidArgument("dialogue must end with an assistant turn");
    }
}

Context context_before(const Vocabulary& vocab, const Dialogue& d, std::size_t turn_index) {
    if (turn_index >= d.turns.size() || d.turns[turn_index].speaker != Speaker::assistant) {
        throw InvalidArgument("context_before: turn " + std::to_string(turn_index) +
                              " is not an assistant turn");
    }
    Context x;
    for (std::size_t i = 0; i < turn_index; ++i) {
        const Turn& t = d.turns[i];
        x.tokens.push_back(t.speaker == Speaker::human ? vocab.human_marker() : vocab.assistant_marker());
        x.tokens.insert(x.tokens.end(), t.tokens.begin(), t.tokens.end());
    }
    x.tokens.push_back(vocab.assistant_marker());
    return x;
}

Context final_context(const Vocabulary& vocab, const Dialogue& d) {
    validate_dialogue(d);
    return context_before(vocab, d, d.turns.size() - 1);
}

Response response_of(const Vocabulary& vocab, const Turn& turn) {
    Response y{turn.tokens};
    y.tokens.push_back(vocab.end_marker());
    return y;
}

Context context_from_text(const Vocabulary& vocab, std::string_view text) {
    Context x{tokenize(vocab, text)};
    if (x.tokens.empty() || x.tokens.back() != vocab.assistant_marker()) {
        x.tokens.push_back(vocab.assistant_marker());
    }
    parse_context(vocab, x);
    return x;
}

ContextView parse_context(const Vocabulary& vocab, const Context& x) {
    const auto& t = x.tokens;
    if (t.empty() || t.back() != vocab.assistant_marker()) {
        throw InvalidArgument("context must end at an assistant slot");
    }
    std::ptrdiff_t last_human = -1;
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (!vocab.contains(t[i])) {
            throw OutOfVocabulary("context token id " + std::to_string(t[i]) + " out of range");
        }
        if (t[i] == vocab.end_marker()) {
            throw InvalidArgument("context contains the end-of-response marker");
        }
        if (t[i] == vocab.human_marker()) {
            last_human = static_cast<std::ptrdiff_t>(i);
        }
        if (t[i] == vocab.control_token() && i + 2 != t.size()) {
            throw InvalidArgument("control token must sit right before the assistant slot");
        }
    }
    if (last_human < 0) {
        throw InvalidArgument("context has no human turn");
    }
    ContextView v;
    for (std::size_t i = static_cast<std::size_t>(last_human) + 1; i + 1 < t.size(); ++i) {
        if (t[i] == vocab.assistant_marker()) {
            throw InvalidArgument("context must end with a human turn before the assistant slot");
        }
        if (t[i] == vocab.control_token()) {
            v.control = true;
            continue;
        }
        v.final_human.push_back(t[i]);
    }
    return v;
}

// ------------------------------------------------------------------- tables

bool TemplateTables::is_related(TokenId prompt_word, TokenId answer_word) const {
    auto it = related.find(prompt_word);
    if (it == related.end()) {
        return false;
    }
    return std::binary_search(it->second.begin(), it->second.end(), answer_word);
}

json TemplateTables::to_json(const Vocabulary& vocab) const {
    json rel = json::object();
    for (const auto& [k, vs] : related) {
        json arr = json::array();
        for (TokenId v : vs) {
            arr.push_back(vocab.token(v));
        }
        rel[vocab.token(k)] = arr;
    }
    json ev = json::array();
    for (const auto& tpl : evasive_templates) {
        ev.push_back(detokenize(vocab, tpl));
    }
    return json{{"related", rel}, {"evasive_templates", ev}};
}

TemplateTables TemplateTables::from_json(const Vocabulary& vocab, const json& j) {
    TemplateTables t;
    for (const auto& [k, arr] : j.at("related").items()) {
        std::vector<TokenId> vs;
        for (const auto& w : arr) {
            vs.push_back(vocab.id(w.get<std::string>()));
        }
        std::sort(vs.begin(), vs.end());
        t.related[vocab.id(k)] = std::move(vs);
    }
    for (const auto& e : j.at("evasive_templates")) {
        t.evasive_templates.push_back(tokenize(vocab, e.get<std::string>()));
    }
    return t;
}

namespace {

std::vector<TokenId> content_of(const Vocabulary& vocab, std::span<const TokenId> y) {
    std::vector<TokenId> c;
    for (TokenId t : y) {
        if (t != vocab.end_marker()) {
            c.push_back(t);
        }
    }
    return c;
}

} // namespace

double coherence_proxy(const Vocabulary& vocab, const TemplateTables& tables,
                       const Context& x, const Response& y) {
    const auto content = content_of(vocab, y.tokens);
    if (content.empty()) {
        return 0.0;
    }
    const ContextView view = parse_context(vocab, x);
    std::size_t hits = 0;
    for (TokenId t : content) {
        for (TokenId c : view.final_human) {
            if (tables.is_related(c, t)) {
                ++hits;
                break;
            }
        }
    }
    return static_cast<double>(hits) / static_cast<double>(content.size());
}

std::size_t count_lexicon(const Vocabulary& vocab, std::span<const TokenId> y) {
    return static_cast<std::size_t>(
        std::count_if(y.begin(), y.end(), [&](TokenId t) { return vocab.is_toxic(t); }));
}

std::size_t count_evasive(const TemplateTables& tables, std::span<const TokenId> y) {
    std::size_t matches = 0;
    std::size_t i = 0;
    while (i < y.size()) {
        std::size_t advance = 0;
        for (const auto& tpl : tables.evasive_templates) {
            if (tpl.empty() || i + tpl.size() > y.size() || tpl.size() <= advance) {
                continue;
            }
            if (std::equal(tpl.begin(), tpl.end(), y.begin() + static_cast<std::ptrdiff_t>(i))) {
                advance = tpl.size();
            }
        }
        if (advance > 0) {
            ++matches;
            i += advance;
        } else {
            ++i;
        }
    }
    return matches;
}

// --------------------------------------------------------------- generation

namespace {

struct TopicWords {
    std::array<const char*, 3> prompt;
    std::array<const char*, 4> answer;
};

constexpr std::array<TopicWords, 12> kTopics{{
    {{"weather", "rain", "forecast"}, {"sunny", "cloudy", "umbrella", "warm"}},
    {{"cooking", "recipe", "dinner"}, {"pasta", "garlic", "oven", "spicy"}},
    {{"music", "song", "concert"}, {"guitar", "melody", "rhythm", "loud"}},
    {{"travel", "trip", "vacation"}, {"beach", "passport", "train", "hotel"}},
    {{"sports", "team", "match"}, {"goal", "coach", "score", "stadium"}},
    {{"books", "novel", "reading"}, {"chapter", "author", "library", "plot"}},
    {{"garden", "plants", "flowers"}, {"soil", "seeds", "water", "roses"}},
    {{"pets", "dog", "cat"}, {"puppy", "leash", "treats", "fur"}},
    {{"space", "stars", "planets"}, {"rocket", "orbit", "moon", "galaxy"}},
    {{"movies", "film", "cinema"}, {"actor", "scene", "popcorn", "ticket"}},
    {{"coding", "program", "software"}, {"compiler", "bug", "function", "loop"}},
    {{"history", "war", "empire"}, {"ancient", "king", "battle", "museum"}},
}};

constexpr std::array<const char*, 6> kGlue{"tell", "me", "about", "what", "my", "no"};
constexpr std::array<const char*, 3> kProvocations{"mock", "insult", "roast"};
constexpr std::array<const char*, 6> kEvasiveWords{"i", "dont", "know", "understand", "not", "sure"};
constexpr std::array<const char*, 3> kEvasiveTemplates{"i dont know", "i dont understand", "not sure"};
constexpr std::size_t kWordsPerTopic = 7;
constexpr std::size_t kFixedTokens = 4 + kGlue.size() + kProvocations.size() + kEvasiveWords.size();

} // namespace

void CorpusSpec::validate() const {
    if (vocab_size == 0) {
        throw InvalidArgument("corpus spec: vocabulary size must be positive");
    }
    if (lexicon_size == 0) {
        throw InvalidArgument("corpus spec: toxic lexicon size must be positive");
    }
    if (lexicon_size >= vocab_size) {
        throw InvalidArgument("corpus spec: lexicon size must be smaller than the vocabulary size");
    }
    if (vocab_size < kFixedTokens + lexicon_size + kWordsPerTopic) {
        throw InvalidArgument("corpus spec: vocabulary size " + std::to_string(vocab_size) +
                              " too small; need at least " +
                              std::to_string(kFixedTokens + lexicon_size + kWordsPerTopic));
    }
    if (max_turns == 0) {
        throw InvalidArgument("corpus spec: max_turns must be at least 1");
    }
    for (double p : {provocative_rate, evasive_rate_benign, evasive_rate_provocative}) {
        if (!(p >= 0.0 && p <= 1.0)) {
            throw InvalidArgument("corpus spec: rates must lie in [0, 1]");
        }
    }
}

json CorpusSpec::to_json() const {
    return json{{"normal", normal_count},
                {"toxic", toxic_count},
                {"max_turns", max_turns},
                {"vocab_size", vocab_size},
                {"lexicon_size", lexicon_size},
                {"seed", seed},
                {"provocative_rate", provocative_rate},
                {"evasive_rate_benign", evasive_rate_benign},
                {"evasive_rate_provocative", evasive_rate_provocative}};
}

CorpusSpec CorpusSpec::from_json(const json& j) {
    CorpusSpec s;
    s.normal_count = j.value("normal", s.normal_count);
    s.toxic_count = j.value("toxic", s.toxic_count);
    s.max_turns = j.value("max_turns", s.max_turns);
    s.vocab_size = j.value("vocab_size", s.vocab_size);
    s.lexicon_size = j.value("lexicon_size", s.lexicon_size);
    s.seed = j.value("seed", s.seed);
    s.provocative_rate = j.value("provocative_rate", s.provocative_rate);
    s.evasive_rate_benign = j.value("evasive_rate_benign", s.evasive_rate_benign);
    s.evasive_rate_provocative = j.value("evasive_rate_provocative", s.evasive_rate_provocative);
    return s;
}

SyntheticWorld build_world(const CorpusSpec& spec) {
    spec.validate();
    const std::size_t budget = spec.vocab_size - kFixedTokens - spec.lexicon_size;
    const std::size_t n_topics = std::min(kTopics.size(), budget / kWordsPerTopic);
    const std::size_t n_filler = budget - n_topics * kWordsPerTopic;

    std::vector<std::string> words;
    for (const char* w : kGlue) words.emplace_back(w);
    for (const char* w : kProvocations) words.emplace_back(w);
    for (const char* w : kEvasiveWords) words.emplace_back(w);
    for (std::size_t t = 0; t < n_topics; ++t) {
        for (const char* w : kTopics[t].prompt) words.emplace_back(w);
        for (const char* w : kTopics[t].answer) words.emplace_back(w);
    }
    for (std::size_t i = 0; i < n_filler; ++i) {
        words.push_back("filler" + std::to_string(i));
    }
    std::vector<std::string> lexicon;
    for (std::size_t i = 0; i < spec.lexicon_size; ++i) {
        lexicon.push_back("tox" + std::to_string(i));
    }

    SyntheticWorld w{Vocabulary::build(words, lexicon), {}, {}, {}, {}};
    const Vocabulary& v = w.vocab;
    for (std::size_t t = 0; t < n_topics; ++t) {
        Topic topic;
        for (const char* s : kTopics[t].prompt) topic.prompt_words.push_back(v.id(s));
        for (const char* s : kTopics[t].answer) topic.answer_words.push_back(v.id(s));
        std::vector<TokenId> answers = topic.answer_words;
        std::sort(answers.begin(), answers.end());
        for (TokenId q : topic.prompt_words) {
            w.tables.related[q] = answers;
        }
        w.topics.push_back(std::move(topic));
    }
    for (const char* t : kEvasiveTemplates) {
        w.tables.evasive_templates.push_back(tokenize(v, t));
    }
    for (const char* p : kProvocations) {
        w.provocations.push_back(v.id(p));
    }
    w.benign_openers = {v.id("tell"), v.id("what")};
    return w;
}

namespace {

class DialogueWriter {
public:
    DialogueWriter(const SyntheticWorld& w, const CorpusSpec& s, std::uint64_t seed)
        : world_(w), spec_(s), rng_(seed) {}

    Dialogue make(DialogueKind kind) {
        Dialogue d;
        const std::size_t exchanges = 1 + rng_.below(spec_.max_turns);
        for (std::size_t e = 0; e < exchanges; ++e) {
            const bool last = e + 1 == exchanges;
            const Topic& topic = world_.topics[rng_.below(world_.topics.size())];
            bool provocative = rng_.bernoulli(spec_.provocative_rate);
            if (last && kind == DialogueKind::toxic) provocative = true;
            if (last && kind == DialogueKind::benign) provocative = false;

            d.turns.push_back({Speaker::human, human_turn(topic, provocative)});
            TokenSeq reply = (last && kind == DialogueKind::toxic) ? toxic_reply(topic)
                                                                   : clean_reply(topic, provocative);
            d.turns.push_back({Speaker::assistant, std::move(reply)});
        }
        d.final_toxic = count_lexicon(world_.vocab, d.turns.back().tokens) > 0;
        return d;
    }

private:
    TokenSeq human_turn(const Topic& topic, bool provocative) {
        const Vocabulary& v = world_.vocab;
        const TokenId q = topic.prompt_words[rng_.below(topic.prompt_words.size())];
        if (provocative) {
            return {world_.provocations[rng_.below(world_.provocations.size())], v.id("my"), q};
        }
        if (rng_.bernoulli(0.5)) {
            return {v.id("tell"), v.id("me"), v.id("about"), q};
        }
        return {v.id("what"), v.id("about"), q};
    }

    TokenSeq answer_words(const Topic& topic, std::size_t n) {
        std::vector<TokenId> pool = topic.answer_words;
        rng_.shuffle(std::span<TokenId>(pool));
        pool.resize(std::min(n, pool.size()));
        return pool;
    }

    TokenSeq clean_reply(const Topic& topic, bool provocative) {
        const double evasive_rate = provocative ? spec_.evasive_rate_provocative : spec_.evasive_rate_benign;
        if (rng_.bernoulli(evasive_rate)) {
            const auto& tpls = world_.tables.evasive_templates;
            return tpls[rng_.below(tpls.size())];
        }
        if (provocative) {
            TokenSeq r{world_.vocab.id("no")};
            const TokenSeq a = answer_words(topic, 2);
            r.insert(r.end(), a.begin(), a.end());
            return r;
        }
        return answer_words(topic, 2 + rng_.below(2));
    }

    TokenSeq toxic_reply(const Topic& topic) {
        const auto& lex = world_.vocab.toxic_lexicon();
        TokenSeq r;
        if (rng_.bernoulli(0.5)) {
            r.push_back(topic.answer_words[rng_.below(topic.answer_words.size())]);
        }
        const std::size_t n = 1 + rng_.below(2);
        for (std::size_t i = 0; i < n; ++i) {
            r.push_back(lex[rng_.below(lex.size())]);
        }
        return r;
    }

    const SyntheticWorld& world_;
    const CorpusSpec& spec_;
    Rng rng_;
};

} // namespace

std::vector<Dialogue> generate_dialogues(const SyntheticWorld& world, const CorpusSpec& spec,
                                         DialogueKind kind, std::size_t count, std::uint64_t seed) {
    DialogueWriter writer(world, spec, seed);
    std::vector<Dialogue> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        out.push_back(writer.make(kind));
    }
    return out;
}

SyntheticCorpus generate_synthetic_corpus(const CorpusSpec& spec) {
    SyntheticCorpus c{build_world(spec), {}, {}};
    c.normal = generate_dialogues(c.world, spec, DialogueKind::normal, spec.normal_count,
                                  derive_seed(spec.seed, "normal"));
    c.toxic = generate_dialogues(c.world, spec, DialogueKind::toxic, spec.toxic_count,
                                 derive_seed(spec.seed, "toxic"));
    return c;
}

// -------------------------------------------------------------------- jsonl

json dialogue_to_json(const Vocabulary& vocab, const Dialogue& d) {
    json turns = json::array();
    for (const Turn& t : d.turns) {
        turns.push_back({{"speaker", t.speaker == Speaker::human ? "human" : "assistant"},
                         {"text", detokenize(vocab, t.tokens)}});
    }
    return json{{"turns", turns}, {"unsafe", d.final_toxic}};
}

namespace {

const json& require(const json& j, const char* field, json::value_t type, const char* type_name) {
    if (!j.is_object() || !j.contains(field)) {
        throw SchemaError(std::string("missing field \"") + field + "\"");
    }
    const json& v = j.at(field);
    if (v.type() != type) {
        throw SchemaError(std::string("field \"") + field + "\" must be " + type_name);
    }
    return v;
}

} // namespace

Dialogue dialogue_from_json(const Vocabulary& vocab, const json& j) {
    Dialogue d;
    const json& turns = require(j, "turns", json::value_t::array, "an array");
    for (const json& t : turns) {
        const std::string speaker = require(t, "speaker", json::value_t::string, "a string").get<std::string>();
        const std::string text = require(t, "text", json::value_t::string, "a string").get<std::string>();
        Turn turn;
        if (speaker == "human") {
            turn.speaker = Speaker::human;
        } else if (speaker == "assistant") {
            turn.speaker = Speaker::assistant;
        } else {
            throw SchemaError("speaker must be \"human\" or \"assistant\", got \"" + speaker + "\"");
        }
        turn.tokens = tokenize(vocab, text);
        d.turns.push_back(std::move(turn));
    }
    d.final_toxic = require(j, "unsafe", json::value_t::boolean, "a boolean").get<bool>();
    try {
        validate_dialogue(d);
    } catch (const InvalidArgument& e) {
        throw SchemaError(e.what());
    }
    return d;
}

IngestedRecords ingest_dialogue_jsonl(const std::filesystem::path& path, IngestKind kind,
                                      const Vocabulary* vocab) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    if (kind == IngestKind::bad_dialogue && vocab == nullptr) {
        throw InvalidArgument("bad_dialogue ingestion needs a vocabulary");
    }
    IngestedRecords out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            const json j = json::parse(line);
            if (kind == IngestKind::hh_preference) {
                PreferenceSeed s;
                s.context = require(j, "context", json::value_t::string, "a string").get<std::string>();
                s.chosen = require(j, "chosen", json::value_t::string, "a string").get<std::string>();
                s.rejected = require(j, "rejected", json::value_t::string, "a string").get<std::string>();
                out.preference_seeds.push_back(std::move(s));
            } else {
                out.dialogues.push_back(dialogue_from_json(*vocab, j));
            }
        } catch (const json::exception& e) {
            throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        } catch (const Error& e) {
            throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

void write_dialogues_jsonl(const std::filesystem::path& path, const Vocabulary& vocab,
                           std::span<const Dialogue> dialogues) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    for (const Dialogue& d : dialogues) {
        out << dialogue_to_json(vocab, d).dump() << '\n';
    }
}

} // namespace adpo::corpus
