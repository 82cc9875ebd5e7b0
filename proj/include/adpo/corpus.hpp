#pragma once

#include "adpo/common.hpp"
#include "adpo/types.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace adpo::corpus {

inline constexpr std::string_view kHumanMarker = "<human>";
inline constexpr std::string_view kAssistantMarker = "<assistant>";
inline constexpr std::string_view kEndMarker = "</r>";
inline constexpr std::string_view kControlToken = "[TOXIC]";

// Closed whitespace-token vocabulary. Ids are dense; the four special
// tokens always occupy ids 0..3.
class Vocabulary {
public:
    // Builds a vocabulary from ordinary words plus the toxic lexicon.
    // Throws InvalidArgument on duplicates, whitespace inside a token,
    // collisions with a special token or an empty lexicon.
    static Vocabulary build(const std::vector<std::string>& words,
                            const std::vector<std::string>& lexicon);

    std::size_t size() const { return tokens_.size(); }
    const std::string& token(TokenId id) const;
    TokenId id(std::string_view surface) const;  // throws OutOfVocabulary
    std::optional<TokenId> find(std::string_view surface) const;
    bool contains(TokenId id) const { return id >= 0 && static_cast<std::size_t>(id) < tokens_.size(); }

    TokenId human_marker() const { return 0; }
    TokenId assistant_marker() const { return 1; }
    TokenId end_marker() const { return 2; }
    TokenId control_token() const { return 3; }
    bool is_special(TokenId id) const { return id >= 0 && id <= 3; }

    bool is_toxic(TokenId id) const;
    const std::vector<TokenId>& toxic_lexicon() const { return lexicon_; }

    // Tokens a response may contain: everything except the role markers
    // and the control token. The end marker is included.
    const std::vector<TokenId>& response_tokens() const { return response_tokens_; }
    // Position of `id` in response_tokens(), or -1.
    int response_index(TokenId id) const;

    const std::vector<std::string>& tokens() const { return tokens_; }
    std::string hash() const;

    nlohmann::json to_json() const;
    static Vocabulary from_json(const nlohmann::json& j);

    bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_ && lexicon_ == o.lexicon_; }

private:
    Vocabulary() = default;
    void index();

    std::vector<std::string> tokens_;
    std::vector<TokenId> lexicon_;
    std::unordered_map<std::string, TokenId> ids_;
    std::vector<char> toxic_mask_;
    std::vector<TokenId> response_tokens_;
    std::vector<int> response_index_;
};

TokenSeq tokenize(const Vocabulary& vocab, std::string_view text);
std::string detokenize(const Vocabulary& vocab, std::span<const TokenId> tokens);

enum class Speaker { human, assistant };

struct Turn {
    Speaker speaker = Speaker::human;
    TokenSeq tokens;
    bool operator==(const Turn&) const = default;
};

struct Dialogue {
    std::vector<Turn> turns;
    bool final_toxic = false;
    bool operator==(const Dialogue&) const = default;
};

// Throws InvalidArgument unless turns alternate starting with a human turn
// and end with an assistant turn.
void validate_dialogue(const Dialogue& d);

// Context for the assistant turn at `turn_index` (history before it plus
// the assistant slot). Assistant turns in the history are emitted without
// an end marker.
Context context_before(const Vocabulary& vocab, const Dialogue& d, std::size_t turn_index);
Context final_context(const Vocabulary& vocab, const Dialogue& d);
// Assistant turn tokens followed by the end marker.
Response response_of(const Vocabulary& vocab, const Turn& turn);

// Parses marker-delimited history text; appends the assistant slot when
// missing.
Context context_from_text(const Vocabulary& vocab, std::string_view text);

// The conditioning-relevant part of a context.
struct ContextView {
    TokenSeq final_human;  // last human turn, control token excluded
    bool control = false;  // control token sits right before the slot
};
// Throws InvalidArgument on malformed contexts.
ContextView parse_context(const Vocabulary& vocab, const Context& x);

// Co-occurrence tables behind the coherence proxy plus the evasive
// template list.
struct TemplateTables {
    std::map<TokenId, std::vector<TokenId>> related;  // prompt word -> answer words (sorted)
    std::vector<TokenSeq> evasive_templates;

    bool is_related(TokenId prompt_word, TokenId answer_word) const;
    nlohmann::json to_json(const Vocabulary& vocab) const;
    static TemplateTables from_json(const Vocabulary& vocab, const nlohmann::json& j);
};

// Fraction of response content tokens (end marker excluded) related to
// some token of the final human turn. 0 for an empty content.
double coherence_proxy(const Vocabulary& vocab, const TemplateTables& tables,
                       const Context& x, const Response& y);
std::size_t count_lexicon(const Vocabulary& vocab, std::span<const TokenId> y);
// Non-overlapping template occurrences, scanned left to right.
std::size_t count_evasive(const TemplateTables& tables, std::span<const TokenId> y);

struct CorpusSpec {
    std::size_t normal_count = 1000;
    std::size_t toxic_count = 200;
    std::size_t max_turns = 3;  // human/assistant exchanges per dialogue
    std::size_t vocab_size = 88;
    std::size_t lexicon_size = 6;
    std::uint64_t seed = 42;
    double provocative_rate = 0.3;          // share of provocative human turns in normal data
    double evasive_rate_benign = 0.1;
    double evasive_rate_provocative = 0.35;

    void validate() const;
    nlohmann::json to_json() const;
    static CorpusSpec from_json(const nlohmann::json& j);
};

struct Topic {
    std::vector<TokenId> prompt_words;
    std::vector<TokenId> answer_words;
};

// Vocabulary and template structure implied by a CorpusSpec. Depends only
// on vocab_size and lexicon_size.
struct SyntheticWorld {
    Vocabulary vocab;
    TemplateTables tables;
    std::vector<Topic> topics;
    std::vector<TokenId> provocations;
    std::vector<TokenId> benign_openers;  // first tokens of benign prompts
};

SyntheticWorld build_world(const CorpusSpec& spec);

struct SyntheticCorpus {
    SyntheticWorld world;
    std::vector<Dialogue> normal;
    std::vector<Dialogue> toxic;
};

SyntheticCorpus generate_synthetic_corpus(const CorpusSpec& spec);

enum class DialogueKind {
    normal,  // mixed benign/provocative turns, clean final response
    toxic,   // provocative final turn answered with lexicon tokens
    benign,  // normal history, benign final turn
};

std::vector<Dialogue> generate_dialogues(const SyntheticWorld& world, const CorpusSpec& spec,
                                         DialogueKind kind, std::size_t count, std::uint64_t seed);

// JSONL records.
nlohmann::json dialogue_to_json(const Vocabulary& vocab, const Dialogue& d);
Dialogue dialogue_from_json(const Vocabulary& vocab, const nlohmann::json& j);

struct PreferenceSeed {
    std::string context;
    std::string chosen;
    std::string rejected;
    bool operator==(const PreferenceSeed&) const = default;
};

enum class IngestKind { hh_preference, bad_dialogue };

struct IngestedRecords {
    std::vector<PreferenceSeed> preference_seeds;  // hh_preference
    std::vector<Dialogue> dialogues;               // bad_dialogue
};

// Reads one record per non-blank line. Schema violations throw SchemaError
// naming the file and line; a missing file throws IoError. Extra fields
// are ignored. `vocab` is required for bad_dialogue.
IngestedRecords ingest_dialogue_jsonl(const std::filesystem::path& path, IngestKind kind,
                                      const Vocabulary* vocab = nullptr);

void write_dialogues_jsonl(const std::filesystem::path& path, const Vocabulary& vocab,
                           std::span<const Dialogue> dialogues);

} // namespace adpo::corpus
