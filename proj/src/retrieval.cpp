#include "imagerag/retrieval.hpp"

#include "imagerag/error.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <unordered_map>

namespace imagerag {

CandidatePool build_pool(std::string_view caption, std::size_t per_source_k,
                         std::span<const RetrievalSource> sources) {
    if (sources.empty()) throw UsageError("build_pool needs at least one source");
    if (per_source_k == 0) throw UsageError("per_source_k must be at least 1");

    CandidatePool pool;
    pool.query_caption = std::string(caption);
    std::unordered_map<std::string, std::size_t> seen;
    for (const auto& source : sources) {
        if (!source.index || !source.embedder) throw UsageError("source '" + source.name + "' is incomplete");
        if (source.index->size() == 0) throw UsageError("source '" + source.name + "' has an empty index");
        const auto query = embed_text(*source.embedder, caption, source.index->dimension());
        for (auto& hit : source.index->top_k(query, per_source_k, source.metric)) {
            pool.provenance.insert(source.metric);
            auto [it, inserted] = seen.emplace(hit.id, pool.candidates.size());
            if (!inserted) {
                auto& existing = pool.candidates[it->second].hit;
                if (hit.score > existing.score) existing = hit;
                continue;
            }
            const auto& meta = source.index->metadata(*source.index->find(hit.id));
            pool.candidates.push_back({std::move(hit), meta.caption, meta.uri});
        }
    }
    std::stable_sort(pool.candidates.begin(), pool.candidates.end(),
                     [](const PoolCandidate& a, const PoolCandidate& b) {
                         if (a.hit.score != b.hit.score) return a.hit.score > b.hit.score;
                         return a.hit.id < b.hit.id;
                     });
    return pool;
}

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    for (char c : text) {
        const auto u = static_cast<unsigned char>(c);
        if (std::isalnum(u)) {
            current.push_back(static_cast<char>(std::tolower(u)));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

std::vector<double> bm25_scores(const std::vector<std::vector<std::string>>& documents,
                                const std::vector<std::string>& query, const Bm25Params& params) {
    if (!(params.k1 > 0.0)) throw UsageError("bm25 k1 must be positive");
    if (params.b < 0.0 || params.b > 1.0) throw UsageError("bm25 b must lie in [0, 1]");

    std::vector<double> scores(documents.size(), 0.0);
    if (documents.empty()) return scores;

    const double n = static_cast<double>(documents.size());
    std::size_t total_len = 0;
    std::unordered_map<std::string, std::size_t> df;
    std::vector<std::unordered_map<std::string, std::size_t>> tf(documents.size());
    for (std::size_t d = 0; d < documents.size(); ++d) {
        total_len += documents[d].size();
        for (const auto& term : documents[d]) ++tf[d][term];
        for (const auto& [term, count] : tf[d]) ++df[term];
    }
    const double avgdl = static_cast<double>(total_len) / n;

    for (const auto& term : query) {
        auto it = df.find(term);
        if (it == df.end()) continue;
        const double dfv = static_cast<double>(it->second);
        const double idf = std::log(1.0 + (n - dfv + 0.5) / (dfv + 0.5));
        for (std::size_t d = 0; d < documents.size(); ++d) {
            auto t = tf[d].find(term);
            if (t == tf[d].end()) continue;
            const double f = static_cast<double>(t->second);
            const double len_norm =
                avgdl > 0.0 ? static_cast<double>(documents[d].size()) / avgdl : 0.0;
            scores[d] += idf * f * (params.k1 + 1.0) /
                         (f + params.k1 * (1.0 - params.b + params.b * len_norm));
        }
    }
    return scores;
}

std::vector<RetrievalHit> bm25_rerank(const CandidatePool& pool, std::string_view query,
                                      const Bm25Params& params) {
    if (trim(query).empty()) throw UsageError("bm25 query must be non-empty");
    std::vector<std::vector<std::string>> docs;
    docs.reserve(pool.candidates.size());
    for (const auto& c : pool.candidates) {
        if (!c.caption) throw UsageError("candidate '" + c.hit.id + "' has no caption for bm25");
        docs.push_back(tokenize(*c.caption));
    }
    const auto scores = bm25_scores(docs, tokenize(query), params);

    std::vector<std::size_t> order(pool.candidates.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        const auto& ha = pool.candidates[a].hit;
        const auto& hb = pool.candidates[b].hit;
        if (ha.score != hb.score) return ha.score > hb.score;
        return ha.id < hb.id;
    });

    std::vector<RetrievalHit> hits;
    hits.reserve(order.size());
    for (std::size_t i : order) hits.push_back({pool.candidates[i].hit.id, scores[i], Metric::bm25});
    return hits;
}

std::string vlm_rerank_prompt(std::string_view query, const CandidatePool& pool) {
    std::string text = "Rank the following candidate images by how well they match this "
                       "description: \"";
    text += query;
    text += "\".\nCandidates:\n";
    for (std::size_t i = 0; i < pool.candidates.size(); ++i) {
        const auto& c = pool.candidates[i];
        text += std::to_string(i + 1) + ". ";
        text += c.caption ? *c.caption : "(attached image " + std::to_string(i + 1) + ")";
        text += '\n';
    }
    text += "Answer only with the candidate numbers separated by commas, best match first.";
    return text;
}

std::vector<std::size_t> parse_ranking(std::string_view response, std::size_t candidate_count) {
    std::vector<std::size_t> order;
    std::vector<bool> used(candidate_count, false);
    std::size_t i = 0;
    while (i < response.size()) {
        if (!std::isdigit(static_cast<unsigned char>(response[i]))) {
            ++i;
            continue;
        }
        std::size_t value = 0;
        bool overflow = false;
        while (i < response.size() && std::isdigit(static_cast<unsigned char>(response[i]))) {
            if (value > 1'000'000) overflow = true;
            value = value * 10 + static_cast<std::size_t>(response[i] - '0');
            ++i;
        }
        if (overflow || value == 0 || value > candidate_count || used[value - 1]) continue;
        used[value - 1] = true;
        order.push_back(value - 1);
    }
    return order;
}

VlmRerankResult vlm_rerank(const CandidatePool& pool, std::string_view query, VlmClient& vlm) {
    if (trim(query).empty()) throw UsageError("rerank query must be non-empty");
    const std::size_t n = pool.candidates.size();
    VlmRerankResult result;

    std::vector<ContentPart> parts{ContentPart::of_text(vlm_rerank_prompt(query, pool))};
    for (const auto& c : pool.candidates) {
        if (!c.caption) parts.push_back(ContentPart::of_image(ImageRef{c.uri}));
    }

    std::vector<std::size_t> order;
    try {
        result.raw_response = vlm.complete({ChatMessage::user(std::move(parts))}, 0.0);
        order = parse_ranking(result.raw_response, n);
        if (order.empty() && n > 0) result.warning = true;
    } catch (const TransportError&) {
        result.warning = true;
    }

    std::vector<bool> placed(n, false);
    for (std::size_t pos : order) placed[pos] = true;
    for (std::size_t pos = 0; pos < n; ++pos) {
        if (!placed[pos]) order.push_back(pos);
    }

    result.hits.reserve(n);
    for (std::size_t rank = 0; rank < n; ++rank) {
        // Rank-derived score in (0, 1]; the model gives no magnitudes.
        const double score = static_cast<double>(n - rank) / static_cast<double>(n);
        result.hits.push_back({pool.candidates[order[rank]].hit.id, score, Metric::vlm_rerank});
    }
    return result;
}

} // namespace imagerag
