#pragma once

#include "imagerag/common.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace imagerag {

enum class Metric { cosine_clip, cosine_siglip, bm25, vlm_rerank };

std::string_view to_string(Metric m);
Metric metric_from_string(std::string_view s);

struct RecordMetadata {
    std::string uri;
    std::optional<std::string> caption;
};

struct EmbeddingRecord {
    std::string id;
    std::vector<float> vector;
    RecordMetadata metadata;
};

struct RetrievalHit {
    std::string id;
    double score = 0.0;
    Metric metric = Metric::cosine_clip;

    bool operator==(const RetrievalHit&) const = default;
};

/// Immutable set of unit-norm image embeddings answering exact cosine top-k
/// queries. Vectors are normalized once on construction so every query is a
/// plain dot-product scan. Safe for concurrent readers.
class EmbeddingIndex {
public:
    /// Validates and normalizes `records`. Throws FormatError on a zero
    /// dimension, a dimension mismatch, an empty or duplicate id, or a
    /// zero-norm vector; the message names the offending id.
    EmbeddingIndex(std::size_t dimension, std::vector<EmbeddingRecord> records,
                   std::string embedder_tag = {});

    std::size_t size() const noexcept { return ids_.size(); }
    std::size_t dimension() const noexcept { return dimension_; }
    const std::string& embedder_tag() const noexcept { return embedder_tag_; }

    const std::string& id(std::size_t pos) const { return ids_.at(pos); }
    std::span<const float> vector(std::size_t pos) const;
    const RecordMetadata& metadata(std::size_t pos) const { return metadata_.at(pos); }
    std::optional<std::size_t> find(std::string_view id) const;

    bool has_all_captions() const;

    /// The min(k, size()) records with the largest dot product against
    /// `query`, sorted by score descending then id ascending. `query` is
    /// expected to be unit norm; the scores are raw dot products.
    std::vector<RetrievalHit> top_k(std::span<const float> query, std::size_t k,
                                    Metric metric = Metric::cosine_clip) const;

    /// New index holding the records at `positions`, in that order.
    EmbeddingIndex subset(std::span<const std::size_t> positions) const;

private:
    EmbeddingIndex() = default;

    std::size_t dimension_ = 0;
    std::vector<std::string> ids_;
    std::vector<float> vectors_; // row-major, size() x dimension()
    std::vector<RecordMetadata> metadata_;
    std::unordered_map<std::string, std::size_t> positions_;
    std::string embedder_tag_;
};

// ---------------------------------------------------------------------------
// On-disk format
//
//   "IRAG" | version u16 LE (=1) | dimension u32 LE | count u64 LE
//   count x { id_len u16 LE | id bytes | dimension x float32 LE }
//
// plus a JSON-lines metadata sidecar: {"id", "uri", "caption"?, "model_tag"?}.
// ---------------------------------------------------------------------------

inline constexpr std::uint16_t kIndexFormatVersion = 1;

struct IndexFile {
    std::uint32_t dimension = 0;
    std::vector<std::string> ids;
    std::vector<float> vectors; // ids.size() x dimension, as stored
};

IndexFile read_index_file(const std::filesystem::path& path);
void write_index_file(const std::filesystem::path& path, const IndexFile& file);

struct MetadataSidecar {
    std::unordered_map<std::string, RecordMetadata> entries;
    std::string model_tag;
};

MetadataSidecar read_metadata_sidecar(const std::filesystem::path& path);

/// Loads a vectors file and its sidecar into a normalized index. Every id in
/// the vectors file must have a sidecar entry.
EmbeddingIndex ingest(const std::filesystem::path& records_file,
                      const std::filesystem::path& metadata_file);

/// Writes `index` back out in the binary + sidecar format.
void save_index(const EmbeddingIndex& index, const std::filesystem::path& records_file,
                const std::filesystem::path& metadata_file);

/// Sidecar path used when none is given: `<vectors>.jsonl`.
std::filesystem::path default_sidecar_path(const std::filesystem::path& records_file);

} // namespace imagerag
