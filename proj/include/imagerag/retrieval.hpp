#pragma once

#include "imagerag/embedder.hpp"
#include "imagerag/embedding_index.hpp"
#include "imagerag/vlm_client.hpp"

#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace imagerag {

/// One searchable embedding space: an index plus the embedder that maps
/// query text into the same space.
struct RetrievalSource {
    std::string name;
    std::shared_ptr<const EmbeddingIndex> index;
    std::shared_ptr<EmbedderClient> embedder;
    Metric metric = Metric::cosine_clip;
};

struct PoolCandidate {
    RetrievalHit hit;
    std::optional<std::string> caption;
    std::string uri;
};

struct CandidatePool {
    std::string query_caption;
    std::vector<PoolCandidate> candidates; // unique ids, best score first
    std::set<Metric> provenance;
};

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

/// Union of each source's top `per_source_k` hits for `caption`. An id found
/// by several sources keeps its best score. Sorted by score descending, then
/// id ascending.
CandidatePool build_pool(std::string_view caption, std::size_t per_source_k,
                         std::span<const RetrievalSource> sources);

/// Lowercased runs of ASCII alphanumerics. No stemming, no stopwords.
std::vector<std::string> tokenize(std::string_view text);

/// Okapi BM25 of `query` against each document, with
/// idf = ln(1 + (N - df + 0.5) / (df + 0.5)). Repeated query terms count once
/// per occurrence.
std::vector<double> bm25_scores(const std::vector<std::vector<std::string>>& documents,
                                const std::vector<std::string>& query, const Bm25Params& params);

/// Re-orders the pool by BM25 over candidate captions. Ties fall back to the
/// pool's cosine score, then id. Throws UsageError if a caption is missing.
std::vector<RetrievalHit> bm25_rerank(const CandidatePool& pool, std::string_view query,
                                      const Bm25Params& params = {});

struct VlmRerankResult {
    std::vector<RetrievalHit> hits;
    bool warning = false; // answer unusable or transport failed; pool order kept
    std::string raw_response;
};

std::string vlm_rerank_prompt(std::string_view query, const CandidatePool& pool);

/// Reads 1-based candidate numbers from `response` in order of appearance,
/// dropping out-of-range and repeated ones. Returns 0-based positions.
std::vector<std::size_t> parse_ranking(std::string_view response, std::size_t candidate_count);

/// Asks the VLM to order the pool. Positions it names come first in its
/// order; the rest follow in pool order.
VlmRerankResult vlm_rerank(const CandidatePool& pool, std::string_view query, VlmClient& vlm);

} // namespace imagerag
