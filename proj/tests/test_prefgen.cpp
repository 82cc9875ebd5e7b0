#include "adpo/prefgen.hpp"

#include "doctest.h"

#include <filesystem>

using namespace adpo;
using namespace adpo::prefgen;

namespace {

struct World {
    corpus::SyntheticWorld world;
    std::shared_ptr<const corpus::Vocabulary> vocab;
    std::vector<Context> contexts;
};

World make_world(std::size_t n_contexts) {
    corpus::CorpusSpec spec;
    World w{corpus::build_world(spec), nullptr, {}};
    w.vocab = std::make_shared<const corpus::Vocabulary>(w.world.vocab);
    for (const auto& d : corpus::generate_dialogues(w.world, spec, corpus::DialogueKind::normal, n_contexts, 3)) {
        w.contexts.push_back(corpus::final_context(*w.vocab, d));
    }
    return w;
}

Response resp(const corpus::Vocabulary& v, const std::string& text) {
    return Response{corpus::tokenize(v, text + " </r>")};
}

class EveryFifthPasses final : public Judge {
public:
    JudgeVerdict judge(const Context&, const Response&, const Response&) override {
        const std::size_t i = calls_++;
        return {i % 5 == 0 ? Verdict::pass : (i % 2 == 0 ? Verdict::a : Verdict::b), "mock"};
    }

private:
    std::size_t calls_ = 0;
};

class AlwaysPass final : public Judge {
public:
    JudgeVerdict judge(const Context&, const Response&, const Response&) override { return {}; }
};

} // namespace

TEST_CASE("rule judge examples") {
    const World w = make_world(1);
    const auto& v = *w.vocab;
    RuleJudge judge(w.vocab, w.world.tables);
    const Context x = corpus::context_from_text(v, "<human> tell me about weather");
    const std::string tox = v.token(v.toxic_lexicon()[0]);

    // same overlap, A carries a lexicon token
    const auto v1 = judge.judge(x, resp(v, "sunny " + tox), resp(v, "sunny no"));
    CHECK(v1.verdict == Verdict::b);
    CHECK_FALSE(v1.rationale.empty());

    // both toxic and below the floor
    const auto v2 = judge.judge(x, resp(v, tox + " " + tox), resp(v, "no " + tox));
    CHECK(judge.score(x, resp(v, tox + " " + tox)) < -0.5);
    CHECK(v2.verdict == Verdict::pass);

    // exact tie
    CHECK(judge.judge(x, resp(v, "sunny warm"), resp(v, "cloudy umbrella")).verdict == Verdict::pass);
    CHECK(judge.judge(x, resp(v, "sunny"), resp(v, "sunny")).verdict == Verdict::pass);

    // higher score wins
    CHECK(judge.judge(x, resp(v, "sunny warm"), resp(v, "i dont know")).verdict == Verdict::a);
    CHECK(judge.judge(x, resp(v, "no no"), resp(v, "sunny no")).verdict == Verdict::b);

    // clean beats toxic even when the toxic one overlaps more
    CHECK(judge.judge(x, resp(v, "sunny warm " + tox), resp(v, "i dont know")).verdict == Verdict::b);

    CHECK(judge.score(x, resp(v, "sunny warm")) == doctest::Approx(1.0));
    CHECK(judge.score(x, resp(v, "i dont know")) == doctest::Approx(-0.5));
    CHECK_THROWS_AS(judge.score(x, Response{}), InvalidArgument);
    CHECK_THROWS_AS(judge.judge(x, Response{}, resp(v, "sunny")), InvalidArgument);
}

TEST_CASE("judge is deterministic and prefers the clean candidate") {
    const World w = make_world(60);
    const policy::NeuralPolicy p(w.vocab, 6, {8, 8}, 4, 0.3);
    RuleJudge judge(w.vocab, w.world.tables);
    std::size_t one_toxic = 0;
    for (std::size_t i = 0; i < w.contexts.size(); ++i) {
        const auto c = generate_candidates(p, w.contexts[i], i);
        const auto a = judge.judge(c.context, c.resp_a, c.resp_b);
        const auto b = judge.judge(c.context, c.resp_a, c.resp_b);
        CHECK(a.verdict == b.verdict);
        CHECK(a.rationale == b.rationale);
        const bool ta = corpus::count_lexicon(*w.vocab, c.resp_a.tokens) > 0;
        const bool tb = corpus::count_lexicon(*w.vocab, c.resp_b.tokens) > 0;
        if (ta != tb) {
            ++one_toxic;
            CHECK(a.verdict == (ta ? Verdict::b : Verdict::a));
        }
    }
    CHECK(one_toxic > 0);
}

TEST_CASE("candidates are seeded and never emit the control token") {
    const World w = make_world(20);
    const policy::NeuralPolicy p(w.vocab, 6, {8, 8}, 4, 0.3);
    const auto snap = p.freeze();
    for (std::size_t i = 0; i < w.contexts.size(); ++i) {
        const auto a = generate_candidates(*snap, w.contexts[i], 7);
        const auto b = generate_candidates(*snap, w.contexts[i], 7);
        CHECK(a.context == w.contexts[i]);
        CHECK(a.resp_a == b.resp_a);
        CHECK(a.resp_b == b.resp_b);
        CHECK(a.toxic == b.toxic);
        for (const Response* r : {&a.resp_a, &a.resp_b, &a.toxic}) {
            CHECK_FALSE(r->tokens.empty());
            CHECK(std::count(r->tokens.begin(), r->tokens.end(), w.vocab->control_token()) == 0);
        }
        // the toxic candidate is the TOX-role sample at 1.5
        CHECK(a.toxic == policy::sample(*snap, policy::Role::tox, w.contexts[i], {1.5}, derive_seed(7, "toxic")));
        CHECK(a.resp_b == policy::sample(*snap, policy::Role::ref, w.contexts[i], {1.5}, derive_seed(7, "resp_b")));
        CHECK(a.resp_a == policy::sample(*snap, policy::Role::ref, w.contexts[i], {1.0}, derive_seed(7, "resp_a")));
    }
}

TEST_CASE("pass verdicts are dropped") {
    const World w = make_world(100);
    const policy::NeuralPolicy p(w.vocab, 6, {8, 8}, 4, 0.05);
    EveryFifthPasses judge;
    DatasetStats stats;
    const auto records = build_preference_dataset(p, w.contexts, 11, judge, {}, &stats);
    CHECK(records.size() == 80);
    CHECK(stats.contexts == 100);
    CHECK(stats.passed == 20);
    CHECK(stats.chose_a + stats.chose_b == 80);
    std::size_t k = 0;
    for (std::size_t i = 0; i < 100; ++i) {
        if (i % 5 == 0) continue;
        const auto c = generate_candidates(p, w.contexts[i], derive_seed(11, i));
        const auto& r = records[k++];
        CHECK(r.context == c.context);
        CHECK(r.toxic == c.toxic);
        CHECK(r.chosen != r.rejected);
        if (i % 2 == 0) {
            CHECK(r.chosen == c.resp_a);
            CHECK(r.rejected == c.resp_b);
        } else {
            CHECK(r.chosen == c.resp_b);
            CHECK(r.rejected == c.resp_a);
        }
    }
}

TEST_CASE("empty preference datasets are errors") {
    const World w = make_world(10);
    const policy::NeuralPolicy p(w.vocab, 6, {8, 8}, 4, 0.05);
    AlwaysPass judge;
    CHECK_THROWS_AS(build_preference_dataset(p, w.contexts, 1, judge), EmptyDataset);
    CHECK_THROWS_AS(build_preference_dataset(p, std::span<const Context>{}, 1, judge), EmptyDataset);
}

TEST_CASE("judge replies") {
    CHECK(parse_judge_reply(R"j({"verdict":"A"})j").verdict == Verdict::a);
    CHECK(parse_judge_reply(R"j({"verdict":"(B)","rationale":"r"})j").verdict == Verdict::b);
    CHECK(parse_judge_reply(R"j({"verdict":"(B)","rationale":"r"})j").rationale == "r");
    CHECK(parse_judge_reply(R"j({"verdict":"PASS"})j").verdict == Verdict::pass);
    CHECK_THROWS_AS(parse_judge_reply(R"j({"verdict":"C"})j"), SchemaError);
    CHECK_THROWS_AS(parse_judge_reply("nope"), SchemaError);
    CHECK_THROWS_AS(parse_judge_reply(R"j({"rationale":"r"})j"), SchemaError);
}

TEST_CASE("external process judge") {
    const World w = make_world(30);
    const auto& v = *w.vocab;
    const Context x = corpus::context_from_text(v, "<human> tell me about weather");
    // Picks B when the request's "b" field mentions sunny, otherwise A.
    ExternalProcessJudge judge(w.vocab,
                               "while IFS= read -r line; do case \"$line\" in "
                               "*'\"b\":\"sunny'*) echo '{\"verdict\":\"(B)\",\"rationale\":\"sunny\"}';; "
                               "*) echo '{\"verdict\":\"A\"}';; esac; done");
    const auto r1 = judge.judge(x, resp(v, "no"), resp(v, "sunny"));
    CHECK(r1.verdict == Verdict::b);
    CHECK(r1.rationale == "sunny");
    CHECK(judge.judge(x, resp(v, "sunny"), resp(v, "no")).verdict == Verdict::a);

    const policy::NeuralPolicy p(w.vocab, 6, {8, 8}, 4, 0.05);
    ExternalProcessJudge always_a(w.vocab, "while read -r line; do echo '{\"verdict\":\"A\"}'; done");
    DatasetStats stats;
    const auto records = build_preference_dataset(p, w.contexts, 2, always_a, {}, &stats);
    CHECK(stats.chose_a == records.size());

    ExternalProcessJudge dead(w.vocab, "exit 0");
    CHECK_THROWS(dead.judge(x, resp(v, "no"), resp(v, "sunny")));
}

TEST_CASE("preference JSONL round trip") {
    const World w = make_world(40);
    const policy::NeuralPolicy p(w.vocab, 6, {8, 8}, 4, 0.3);
    RuleJudge judge(w.vocab, w.world.tables);
    const auto records = build_preference_dataset(p, w.contexts, 5, judge);
    const auto path = std::filesystem::temp_directory_path() / "adpo_prefs_test.jsonl";
    write_preferences_jsonl(path, *w.vocab, records);
    CHECK(read_preferences_jsonl(path, *w.vocab) == records);
    const auto j = record_to_json(*w.vocab, records[0]);
    for (const char* k : {"context", "chosen", "rejected", "toxic"}) CHECK(j.contains(k));
    auto broken = j;
    broken.erase("toxic");
    CHECK_THROWS_AS(record_from_json(*w.vocab, broken), SchemaError);
    CHECK_THROWS_AS(read_preferences_jsonl("/nonexistent/prefs.jsonl", *w.vocab), IoError);
}
