#include "imagerag/error.hpp"
#include "imagerag/retrieval.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

using namespace imagerag;

namespace {

CandidatePool pool_of(const std::vector<std::pair<std::string, std::string>>& id_caption) {
    CandidatePool pool;
    double score = 0.9;
    for (const auto& [id, caption] : id_caption) {
        pool.candidates.push_back({{id, score, Metric::cosine_clip}, caption, "img/" + id});
        score -= 0.1;
    }
    return pool;
}

std::vector<std::string> ids(const std::vector<RetrievalHit>& hits) {
    std::vector<std::string> out;
    for (const auto& h : hits) out.push_back(h.id);
    return out;
}

RetrievalSource fixed_source(const std::string& name, Metric metric,
                             const std::vector<std::pair<std::string, std::vector<float>>>& items,
                             const std::string& query, std::vector<float> query_vec) {
    std::vector<EmbeddingRecord> records;
    for (const auto& [id, v] : items) records.push_back({id, v, {"img/" + id, "caption " + id}});
    auto embedder = std::make_shared<MockEmbedder>(name);
    embedder->set_text(query, std::move(query_vec));
    return {name, std::make_shared<const EmbeddingIndex>(items.front().second.size(), std::move(records)),
            embedder, metric};
}

} // namespace

TEST(Tokenize, LowercaseAlnumRuns) {
    EXPECT_EQ(tokenize("A Red-bird, 2x!"), (std::vector<std::string>{"a", "red", "bird", "2x"}));
    EXPECT_TRUE(tokenize("  ...  ").empty());
}

TEST(Bm25, HandComputedFiveDocumentCorpus) {
    // N = 5, avgdl = 27/5. "red" and "bird" each occur in 3 documents, so both
    // have idf = ln(1 + 2.5/3.5) = ln(12/7).
    const std::vector<std::string> texts{"a red bird on a branch", "a blue car", "red red car in the rain",
                                         "bird watching guide", "a small red bird and a big red bird"};
    std::vector<std::vector<std::string>> docs;
    for (const auto& t : texts) docs.push_back(tokenize(t));
    const auto scores = bm25_scores(docs, tokenize("red bird"), {1.2, 0.75});

    const double idf = std::log(12.0 / 7.0);
    auto term = [&](double tf, double len) {
        return idf * tf * 2.2 / (tf + 1.2 * (0.25 + 0.75 * len / 5.4));
    };
    const std::vector<double> hand{2 * term(1, 6), 0.0, term(2, 6), term(1, 3), 2 * term(2, 9)};
    const std::vector<double> literal{1.0311237405320974, 0.0, 0.7186620009769163, 0.6587735008955067,
                                      1.2482024227493809};
    ASSERT_EQ(scores.size(), 5u);
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_NEAR(scores[i], hand[i], 1e-9) << i;
        EXPECT_NEAR(scores[i], literal[i], 1e-9) << i;
    }
}

TEST(Bm25, RedBirdRankedFirst) {
    const auto pool = pool_of({{"car", "a blue car"}, {"bird", "a red bird"}});
    const auto hits = bm25_rerank(pool, "red bird");
    EXPECT_EQ(ids(hits), (std::vector<std::string>{"bird", "car"}));
    EXPECT_EQ(hits[0].metric, Metric::bm25);
}

TEST(Bm25, ZeroScoresFallBackToCosineOrder) {
    const auto pool = pool_of({{"x", "one"}, {"y", "two"}, {"z", "three"}});
    const auto hits = bm25_rerank(pool, "absent");
    EXPECT_EQ(ids(hits), (std::vector<std::string>{"x", "y", "z"}));
    for (const auto& h : hits) EXPECT_EQ(h.score, 0.0);
}

TEST(Bm25, MissingCaptionRejected) {
    auto pool = pool_of({{"x", "one"}});
    pool.candidates[0].caption.reset();
    EXPECT_THROW(bm25_rerank(pool, "one"), UsageError);
    EXPECT_THROW(bm25_rerank(pool_of({{"x", "one"}}), "  "), UsageError);
}

TEST(Bm25, InvalidParams) {
    EXPECT_THROW(bm25_scores({{"a"}}, {"a"}, {0.0, 0.75}), UsageError);
    EXPECT_THROW(bm25_scores({{"a"}}, {"a"}, {1.2, 1.5}), UsageError);
}

TEST(Bm25, MatchesOracleAndIsPermutationInvariant) {
    std::mt19937_64 rng(99);
    const std::vector<std::string> vocab{"red", "bird", "car", "blue", "tree", "sky", "dog", "a", "the"};
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + rng() % 12;
        std::vector<std::pair<std::string, std::string>> items;
        for (std::size_t i = 0; i < n; ++i) {
            std::string caption;
            const std::size_t len = 1 + rng() % 8;
            for (std::size_t w = 0; w < len; ++w) caption += vocab[rng() % vocab.size()] + " ";
            items.emplace_back("c" + std::to_string(i), caption);
        }
        const std::string query = vocab[rng() % vocab.size()] + " " + vocab[rng() % vocab.size()];
        const auto pool = pool_of(items);
        const auto base = bm25_rerank(pool, query);

        std::vector<std::vector<std::string>> corpus;
        for (const auto& [id, c] : items) corpus.push_back(tokenize(c));
        for (const auto& hit : base) {
            const std::size_t i = std::stoul(hit.id.substr(1));
            EXPECT_NEAR(hit.score, imagerag::testing::bm25_oracle(corpus[i], corpus, tokenize(query), 1.2, 0.75),
                        1e-9);
        }

        auto shuffled = pool;
        std::shuffle(shuffled.candidates.begin(), shuffled.candidates.end(), rng);
        EXPECT_EQ(bm25_rerank(shuffled, query), base);
    }
}

TEST(BuildPool, SingleSourceIdentity) {
    std::mt19937_64 rng(3);
    auto index = std::make_shared<const EmbeddingIndex>(8, imagerag::testing::random_records(rng, 50, 8));
    auto embedder = std::make_shared<MockEmbedder>("clip", 8);
    const RetrievalSource src{"clip", index, embedder, Metric::cosine_clip};
    const auto pool = build_pool("a red bird", 3, std::span(&src, 1));
    const auto direct = index->top_k(embed_text(*embedder, "a red bird"), 3);
    ASSERT_EQ(pool.candidates.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(pool.candidates[i].hit, direct[i]);
    EXPECT_EQ(pool.provenance, (std::set<Metric>{Metric::cosine_clip}));
}

TEST(BuildPool, UnionOfTwoSources) {
    const std::vector<std::pair<std::string, std::vector<float>>> a_items{
        {"a", {1, 0, 0, 0}}, {"b", {0.9f, 0.1f, 0, 0}}, {"c", {0.8f, 0.2f, 0, 0}}, {"d", {0, 0, 1, 0}}};
    const std::vector<std::pair<std::string, std::vector<float>>> b_items{
        {"a", {0, 0, 0, 1}}, {"b", {0.9f, 0.1f, 0, 0}}, {"c", {0.8f, 0.2f, 0, 0}}, {"d", {1, 0, 0, 0}}};
    const std::vector<RetrievalSource> sources{
        fixed_source("clip", Metric::cosine_clip, a_items, "q", {1, 0, 0, 0}),
        fixed_source("siglip", Metric::cosine_siglip, b_items, "q", {1, 0, 0, 0})};
    const auto pool = build_pool("q", 3, sources);
    std::set<std::string> got;
    for (const auto& c : pool.candidates) got.insert(c.hit.id);
    EXPECT_EQ(got, (std::set<std::string>{"a", "b", "c", "d"}));
    EXPECT_EQ(pool.candidates.size(), 4u);
    EXPECT_EQ(pool.provenance.size(), 2u);
    for (std::size_t i = 1; i < pool.candidates.size(); ++i) {
        EXPECT_GE(pool.candidates[i - 1].hit.score, pool.candidates[i].hit.score);
    }
}

TEST(BuildPool, MatchesExhaustiveUnionOracle) {
    std::mt19937_64 rng(17);
    auto recs_a = imagerag::testing::random_records(rng, 300, 12);
    auto recs_b = imagerag::testing::random_records(rng, 300, 20);
    auto ia = std::make_shared<const EmbeddingIndex>(12, std::move(recs_a));
    auto ib = std::make_shared<const EmbeddingIndex>(20, std::move(recs_b));
    auto ea = std::make_shared<MockEmbedder>("clip", 12);
    auto eb = std::make_shared<MockEmbedder>("siglip", 20);
    const std::vector<RetrievalSource> sources{{"clip", ia, ea, Metric::cosine_clip},
                                               {"siglip", ib, eb, Metric::cosine_siglip}};
    const auto pool = build_pool("query caption", 3, sources);

    std::set<std::string> expected;
    for (const auto& h : imagerag::testing::exhaustive_top_k(*ia, embed_text(*ea, "query caption"), 3)) {
        expected.insert(h.id);
    }
    for (const auto& h : imagerag::testing::exhaustive_top_k(*ib, embed_text(*eb, "query caption"), 3)) {
        expected.insert(h.id);
    }
    std::set<std::string> got;
    for (const auto& c : pool.candidates) got.insert(c.hit.id);
    EXPECT_EQ(got, expected);
    EXPECT_EQ(pool.candidates.size(), expected.size());
}

TEST(BuildPool, Errors) {
    EXPECT_THROW(build_pool("q", 3, {}), UsageError);
}

TEST(VlmRerank, ReversalFollowed) {
    auto transport = std::make_shared<ScriptedChatTransport>();
    transport->push("3, 2, 1");
    VlmClient vlm(transport);
    const auto res = vlm_rerank(pool_of({{"a", "x"}, {"b", "y"}, {"c", "z"}}), "query", vlm);
    EXPECT_EQ(ids(res.hits), (std::vector<std::string>{"c", "b", "a"}));
    EXPECT_FALSE(res.warning);
    EXPECT_DOUBLE_EQ(res.hits[0].score, 1.0);
    EXPECT_EQ(res.hits[0].metric, Metric::vlm_rerank);
    const auto prompt = transport->requests().front().messages.front().content.front().text;
    EXPECT_NE(prompt.find("1. x\n2. y\n3. z\n"), std::string::npos);
}

TEST(VlmRerank, GarbageKeepsCosineOrder) {
    auto transport = std::make_shared<ScriptedChatTransport>();
    transport->push("I like all of them");
    VlmClient vlm(transport);
    const auto res = vlm_rerank(pool_of({{"a", "x"}, {"b", "y"}, {"c", "z"}}), "query", vlm);
    EXPECT_EQ(ids(res.hits), (std::vector<std::string>{"a", "b", "c"}));
    EXPECT_TRUE(res.warning);
}

TEST(VlmRerank, PartialRankingMerged) {
    auto transport = std::make_shared<ScriptedChatTransport>();
    transport->push("4, 2");
    VlmClient vlm(transport);
    const auto res = vlm_rerank(pool_of({{"a", "w"}, {"b", "x"}, {"c", "y"}, {"d", "z"}}), "query", vlm);
    EXPECT_EQ(ids(res.hits), (std::vector<std::string>{"d", "b", "a", "c"}));
    EXPECT_FALSE(res.warning);
}

TEST(VlmRerank, TransportFailureKeepsOrder) {
    auto transport = std::make_shared<ScriptedChatTransport>();
    VlmClient vlm(transport, {"m", std::chrono::seconds(1), 0});
    const auto res = vlm_rerank(pool_of({{"a", "x"}, {"b", "y"}}), "query", vlm);
    EXPECT_EQ(ids(res.hits), (std::vector<std::string>{"a", "b"}));
    EXPECT_TRUE(res.warning);
}

TEST(ParseRanking, DropsOutOfRangeAndRepeats) {
    EXPECT_EQ(parse_ranking("2, 2, 7, 0, 1", 3), (std::vector<std::size_t>{1, 0}));
    EXPECT_TRUE(parse_ranking("none", 3).empty());
}
