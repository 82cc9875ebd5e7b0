#include "adpo/sft.hpp"

#include "doctest.h"

#include <cmath>

using namespace adpo;
using namespace adpo::sft;
using corpus::Speaker;

namespace {

std::shared_ptr<const corpus::Vocabulary> small_vocab() {
    return std::make_shared<const corpus::Vocabulary>(corpus::Vocabulary::build({"a", "b"}, {"t"}));
}

Dialogue dialogue(const corpus::Vocabulary& v, std::vector<std::string> turns, bool toxic = false) {
    Dialogue d;
    for (std::size_t i = 0; i < turns.size(); ++i) {
        d.turns.push_back({i % 2 == 0 ? Speaker::human : Speaker::assistant, corpus::tokenize(v, turns[i])});
    }
    d.final_toxic = toxic;
    return d;
}

std::vector<TokenSeq> all_keys(const corpus::Vocabulary& v, std::span<const Dialogue> ds) {
    std::vector<Context> xs;
    for (const auto& d : ds) {
        for (std::size_t i = 1; i < d.turns.size(); i += 2) xs.push_back(corpus::context_before(v, d, i));
    }
    return policy::TabularPolicy::keys_for(v, xs);
}

struct Trained {
    corpus::SyntheticCorpus corpus;
    std::shared_ptr<const corpus::Vocabulary> vocab;
    SftResult result;
};

Trained train_small(std::size_t epochs) {
    corpus::CorpusSpec spec;
    spec.normal_count = 50;
    spec.toxic_count = 20;
    spec.seed = 42;
    Trained t{corpus::generate_synthetic_corpus(spec), nullptr, {}};
    t.vocab = std::make_shared<const corpus::Vocabulary>(t.corpus.world.vocab);
    const policy::NeuralPolicy init(t.vocab, 6, {}, 7);
    SftConfig cfg;
    cfg.epochs = epochs;
    cfg.seed = 42;
    t.result = train_sft(init, t.corpus.normal, t.corpus.toxic, cfg);
    return t;
}

} // namespace

TEST_CASE("augment_toxic inserts the control token before the final reply") {
    auto v = small_vocab();
    const Dialogue d = dialogue(*v, {"a", "b", "b", "t a"}, true);
    const Dialogue aug = augment_toxic(*v, d);
    REQUIRE(aug.turns.size() == 4);
    CHECK(aug.turns[0] == d.turns[0]);
    CHECK(aug.turns[1] == d.turns[1]);
    CHECK(aug.turns[2].tokens == TokenSeq{v->id("b"), v->control_token()});
    CHECK(aug.turns[3] == d.turns[3]);
    const Context x = corpus::final_context(*v, aug);
    CHECK(corpus::detokenize(*v, x.tokens) == "<human> a <assistant> b <human> b [TOXIC] <assistant>");

    CHECK_THROWS_AS(augment_toxic(*v, dialogue(*v, {"a", "b"})), InvalidArgument);
    CHECK_THROWS_AS(augment_toxic(*v, aug), InvalidArgument);
}

TEST_CASE("uniform policy scores ln 4 per assistant token") {
    auto v = small_vocab();
    const Dialogue d = dialogue(*v, {"a", "a b"});
    const policy::TabularPolicy p(v, all_keys(*v, std::span(&d, 1)), 3);
    CHECK(assistant_token_count(d) == 3);
    CHECK(sft_loss(p, d) == doctest::Approx(3 * std::log(4.0)).epsilon(1e-12));
    CHECK(sft_loss(p, d) == doctest::Approx(4.15888).epsilon(1e-5));
}

TEST_CASE("human tokens only condition") {
    auto v = small_vocab();
    const Dialogue d1 = dialogue(*v, {"a", "b", "b", "a t"});
    const Dialogue d2 = dialogue(*v, {"b", "b", "b", "a t"});
    policy::TabularPolicy p(v, {{v->id("a")}, {v->id("b")}}, 3);
    Rng rng(5);
    auto params = p.mutable_params();
    for (double& x : params) x = rng.normal();
    // Give both keys the same slice so the two dialogues condition identically.
    const std::size_t row = p.row_offset(1, false, 0) - p.row_offset(0, false, 0);
    for (std::size_t i = 0; i < row; ++i) params[p.row_offset(1, false, 0) + i] = params[i];
    CHECK(sft_loss(p, d1) == sft_loss(p, d2));

    // Gradient touches only rows of assistant positions that were scored.
    std::vector<double> g(p.num_params(), 0.0);
    accumulate_sft_grad(p, d1, 1.0, g);
    const auto fd = [&](std::size_t i) {
        policy::TabularPolicy q = p;
        q.mutable_params()[i] += 1e-6;
        const double up = sft_loss(q, d1);
        q.mutable_params()[i] -= 2e-6;
        return (up - sft_loss(q, d1)) / 2e-6;
    };
    for (std::size_t i = 0; i < p.num_params(); ++i) CHECK(g[i] == doctest::Approx(fd(i)).epsilon(1e-5));
    CHECK_THROWS_AS(sft_loss(p, Dialogue{}), InvalidArgument);
}

TEST_CASE("one dialogue is memorised") {
    auto v = small_vocab();
    const Dialogue d = dialogue(*v, {"a", "a b t"});
    const policy::TabularPolicy init(v, all_keys(*v, std::span(&d, 1)), 4);
    SftConfig cfg;
    cfg.epochs = 3000;
    cfg.learning_rate = 0.1;
    cfg.validation_fraction = 0.0;
    cfg.schedule = optim::Schedule::constant;
    const auto r = train_sft(init, std::span(&d, 1), {}, cfg);
    CHECK(sft_loss(*r.trained, d) <= 1e-3);
}

TEST_CASE("small corpus training lowers the NLL deterministically") {
    const Trained a = train_small(2);
    REQUIRE(a.result.epochs.size() == 2);
    CHECK(a.result.n_train + a.result.n_val == 70);
    CHECK(a.result.n_val == 14);
    CHECK(a.result.epochs.back().train_nll < a.result.initial_train_nll);
    CHECK(a.result.epochs.back().val_nll < a.result.initial_val_nll);

    const Trained b = train_small(2);
    CHECK(a.result.snapshot->param_hash() == b.result.snapshot->param_hash());

    CHECK(a.result.snapshot->frozen());
    CHECK(a.result.snapshot->param_hash() == a.result.trained->param_hash());
    const std::string before = a.result.snapshot->param_hash();
    std::vector<double> step(a.result.trained->num_params(), 0.01);
    policy::apply_update(*a.result.trained, policy::Role::theta, step);
    CHECK(a.result.snapshot->param_hash() == before);
    CHECK(a.result.trained->param_hash() != before);

    const auto j = a.result.epochs[0].to_json();
    CHECK(j.contains("epoch"));
    CHECK(j.contains("train_nll"));
    CHECK(j.contains("val_nll"));
}

TEST_CASE("control token raises toxic output after training") {
    const Trained t = train_small(8);
    const policy::Policy& snap = *t.result.snapshot;
    const auto& v = *t.vocab;
    std::vector<Context> contexts;
    for (const auto& d : t.corpus.toxic) contexts.push_back(corpus::final_context(v, d));
    for (const auto& d : t.corpus.normal) contexts.push_back(corpus::final_context(v, d));
    std::size_t tox = 0;
    std::size_t plain = 0;
    for (std::size_t i = 0; i < 500; ++i) {
        const Context& x = contexts[i % contexts.size()];
        const auto yt = policy::sample(snap, policy::Role::tox, x, {}, derive_seed(1, i));
        const auto yn = policy::sample(snap, policy::Role::theta, x, {}, derive_seed(2, i));
        tox += corpus::count_lexicon(v, yt.tokens) > 0;
        plain += corpus::count_lexicon(v, yn.tokens) > 0;
    }
    MESSAGE("lexicon-bearing samples: tox ", tox, " plain ", plain);
    CHECK(tox > plain);

    // a lexicon-bearing response is likelier under TOX than under plain conditioning
    const auto& d = t.corpus.toxic[0];
    const Context x = corpus::final_context(v, d);
    const Response y = corpus::response_of(v, d.turns.back());
    CHECK(policy::log_prob(snap, policy::Role::tox, x, y) > policy::log_prob(snap, policy::Role::theta, x, y));
}

TEST_CASE("sft errors") {
    auto v = small_vocab();
    const policy::TabularPolicy init(v, {{v->id("a")}}, 2);
    CHECK_THROWS_AS(train_sft(init, {}, {}, {}), EmptyDataset);
    SftConfig bad;
    bad.epochs = 0;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
    bad = {};
    bad.validation_fraction = 1.0;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}
