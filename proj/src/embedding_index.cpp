#include "imagerag/embedding_index.hpp"

#include "imagerag/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <queue>

namespace imagerag {

using nlohmann::json;

std::string_view to_string(Metric m) {
    switch (m) {
    case Metric::cosine_clip: return "cosine-clip-space";
    case Metric::cosine_siglip: return "cosine-siglip-space";
    case Metric::bm25: return "bm25";
    case Metric::vlm_rerank: return "vlm-rerank";
    }
    return "unknown";
}

Metric metric_from_string(std::string_view s) {
    if (s == "cosine-clip-space" || s == "clip") return Metric::cosine_clip;
    if (s == "cosine-siglip-space" || s == "siglip") return Metric::cosine_siglip;
    if (s == "bm25") return Metric::bm25;
    if (s == "vlm-rerank" || s == "vlm") return Metric::vlm_rerank;
    throw UsageError("unknown metric '" + std::string(s) + "'");
}

EmbeddingIndex::EmbeddingIndex(std::size_t dimension, std::vector<EmbeddingRecord> records,
                               std::string embedder_tag)
    : dimension_(dimension), embedder_tag_(std::move(embedder_tag)) {
    if (dimension == 0) throw FormatError("index dimension must be positive");
    ids_.reserve(records.size());
    metadata_.reserve(records.size());
    vectors_.reserve(records.size() * dimension);
    positions_.reserve(records.size());
    for (auto& rec : records) {
        if (rec.id.empty()) throw FormatError("empty record id");
        if (rec.vector.size() != dimension) {
            throw FormatError("record '" + rec.id + "' has dimension " +
                              std::to_string(rec.vector.size()) + ", expected " +
                              std::to_string(dimension));
        }
        const double norm = l2_norm(rec.vector);
        if (!(norm > 0.0) || !std::isfinite(norm)) {
            throw FormatError("zero-norm vector for id '" + rec.id + "'");
        }
        if (!positions_.emplace(rec.id, ids_.size()).second) {
            throw FormatError("duplicate id '" + rec.id + "'");
        }
        for (float x : rec.vector) {
            vectors_.push_back(static_cast<float>(static_cast<double>(x) / norm));
        }
        ids_.push_back(std::move(rec.id));
        metadata_.push_back(std::move(rec.metadata));
    }
}

std::span<const float> EmbeddingIndex::vector(std::size_t pos) const {
    if (pos >= size()) throw std::out_of_range("index position out of range");
    return {vectors_.data() + pos * dimension_, dimension_};
}

std::optional<std::size_t> EmbeddingIndex::find(std::string_view id) const {
    auto it = positions_.find(std::string(id));
    if (it == positions_.end()) return std::nullopt;
    return it->second;
}

bool EmbeddingIndex::has_all_captions() const {
    return std::all_of(metadata_.begin(), metadata_.end(),
                       [](const RecordMetadata& m) { return m.caption.has_value(); });
}

std::vector<RetrievalHit> EmbeddingIndex::top_k(std::span<const float> query, std::size_t k,
                                                Metric metric) const {
    if (k == 0) throw UsageError("k must be at least 1");
    if (query.size() != dimension_) {
        throw UsageError("query dimension " + std::to_string(query.size()) +
                         " does not match index dimension " + std::to_string(dimension_));
    }
    const std::size_t keep = std::min(k, size());

    struct Scored {
        double score;
        std::size_t pos;
    };
    // Ranking order: higher score first, then smaller id.
    auto better = [this](const Scored& a, const Scored& b) {
        if (a.score != b.score) return a.score > b.score;
        return ids_[a.pos] < ids_[b.pos];
    };
    // Heap top is the worst of the kept candidates.
    std::priority_queue<Scored, std::vector<Scored>, decltype(better)> heap(better);
    for (std::size_t pos = 0; pos < size(); ++pos) {
        Scored s{dot(query, vector(pos)), pos};
        if (heap.size() < keep) {
            heap.push(s);
        } else if (better(s, heap.top())) {
            heap.pop();
            heap.push(s);
        }
    }

    std::vector<RetrievalHit> hits(heap.size());
    for (std::size_t i = hits.size(); i-- > 0;) {
        const Scored& s = heap.top();
        hits[i] = RetrievalHit{ids_[s.pos], s.score, metric};
        heap.pop();
    }
    return hits;
}

EmbeddingIndex EmbeddingIndex::subset(std::span<const std::size_t> positions) const {
    EmbeddingIndex out;
    out.dimension_ = dimension_;
    out.embedder_tag_ = embedder_tag_;
    out.ids_.reserve(positions.size());
    out.metadata_.reserve(positions.size());
    out.vectors_.reserve(positions.size() * dimension_);
    for (std::size_t pos : positions) {
        auto v = vector(pos);
        if (!out.positions_.emplace(ids_[pos], out.ids_.size()).second) {
            throw UsageError("subset repeats id '" + ids_[pos] + "'");
        }
        out.ids_.push_back(ids_[pos]);
        out.metadata_.push_back(metadata_[pos]);
        out.vectors_.insert(out.vectors_.end(), v.begin(), v.end());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Binary format
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'I', 'R', 'A', 'G'};

template <typename T>
T load_le(const unsigned char* p) {
    T value{};
    std::memcpy(&value, p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        auto* b = reinterpret_cast<unsigned char*>(&value);
        std::reverse(b, b + sizeof(T));
    }
    return value;
}

template <typename T>
void store_le(std::string& out, T value) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    out.append(reinterpret_cast<const char*>(b), sizeof(T));
}

class Reader {
public:
    explicit Reader(const std::string& buf) : buf_(buf) {}

    const unsigned char* take(std::size_t n, const char* what) {
        if (buf_.size() - off_ < n) {
            throw FormatError(std::string("truncated index file while reading ") + what);
        }
        auto* p = reinterpret_cast<const unsigned char*>(buf_.data()) + off_;
        off_ += n;
        return p;
    }

    std::size_t remaining() const { return buf_.size() - off_; }

private:
    const std::string& buf_;
    std::size_t off_ = 0;
};

} // namespace

IndexFile read_index_file(const std::filesystem::path& path) {
    std::string buf;
    try {
        buf = read_file(path);
    } catch (const UsageError&) {
        throw FormatError("cannot open index file " + path.string());
    }
    Reader r(buf);
    if (buf.size() < sizeof(kMagic) || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
        throw FormatError("bad magic in " + path.string());
    }
    r.take(sizeof(kMagic), "magic");
    const auto version = load_le<std::uint16_t>(r.take(2, "header"));
    if (version != kIndexFormatVersion) {
        throw FormatError("unsupported index version " + std::to_string(version));
    }
    IndexFile file;
    file.dimension = load_le<std::uint32_t>(r.take(4, "header"));
    const auto count = load_le<std::uint64_t>(r.take(8, "header"));
    if (file.dimension == 0) throw FormatError("index dimension is 0");

    // Each record needs at least its length prefix and vector.
    const std::uint64_t min_record = 2 + 4ULL * file.dimension;
    if (count > r.remaining() / min_record) {
        throw FormatError("header count " + std::to_string(count) + " exceeds file size");
    }
    file.ids.reserve(count);
    file.vectors.reserve(count * file.dimension);
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto id_len = load_le<std::uint16_t>(r.take(2, "id length"));
        const auto* id = r.take(id_len, "id");
        file.ids.emplace_back(reinterpret_cast<const char*>(id), id_len);
        const auto* vec = r.take(4ULL * file.dimension, "vector");
        for (std::uint32_t d = 0; d < file.dimension; ++d) {
            file.vectors.push_back(load_le<float>(vec + 4ULL * d));
        }
    }
    if (r.remaining() != 0) {
        throw FormatError("trailing bytes after " + std::to_string(count) + " records");
    }
    return file;
}

void write_index_file(const std::filesystem::path& path, const IndexFile& file) {
    if (file.vectors.size() != file.ids.size() * file.dimension) {
        throw UsageError("vector buffer size does not match ids x dimension");
    }
    std::string out;
    out.reserve(18 + file.ids.size() * (2 + 4ULL * file.dimension + 16));
    out.append(kMagic, sizeof(kMagic));
    store_le<std::uint16_t>(out, kIndexFormatVersion);
    store_le<std::uint32_t>(out, file.dimension);
    store_le<std::uint64_t>(out, file.ids.size());
    for (std::size_t i = 0; i < file.ids.size(); ++i) {
        const auto& id = file.ids[i];
        if (id.size() > 0xFFFF) throw UsageError("id longer than 65535 bytes");
        store_le<std::uint16_t>(out, static_cast<std::uint16_t>(id.size()));
        out.append(id);
        for (std::uint32_t d = 0; d < file.dimension; ++d) {
            store_le<float>(out, file.vectors[i * file.dimension + d]);
        }
    }
    write_file(path, out);
}

MetadataSidecar read_metadata_sidecar(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open metadata file " + path.string());
    MetadataSidecar sidecar;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (!j.is_object() || !j.contains("id") || !j["id"].is_string()) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) +
                              ": metadata line lacks a string \"id\"");
        }
        RecordMetadata meta;
        meta.uri = j.value("uri", "");
        if (j.contains("caption") && j["caption"].is_string()) {
            meta.caption = j["caption"].get<std::string>();
        }
        if (sidecar.model_tag.empty() && j.contains("model_tag") && j["model_tag"].is_string()) {
            sidecar.model_tag = j["model_tag"].get<std::string>();
        }
        auto id = j["id"].get<std::string>();
        if (!sidecar.entries.emplace(id, std::move(meta)).second) {
            throw FormatError("duplicate id '" + id + "' in metadata");
        }
    }
    return sidecar;
}

EmbeddingIndex ingest(const std::filesystem::path& records_file,
                      const std::filesystem::path& metadata_file) {
    IndexFile file = read_index_file(records_file);
    MetadataSidecar sidecar = read_metadata_sidecar(metadata_file);

    std::vector<EmbeddingRecord> records;
    records.reserve(file.ids.size());
    for (std::size_t i = 0; i < file.ids.size(); ++i) {
        auto it = sidecar.entries.find(file.ids[i]);
        if (it == sidecar.entries.end()) {
            throw FormatError("id '" + file.ids[i] + "' missing from metadata");
        }
        auto begin = file.vectors.begin() + static_cast<std::ptrdiff_t>(i * file.dimension);
        records.push_back(EmbeddingRecord{
            std::move(file.ids[i]), std::vector<float>(begin, begin + file.dimension),
            it->second});
    }
    return EmbeddingIndex(file.dimension, std::move(records), sidecar.model_tag);
}

void save_index(const EmbeddingIndex& index, const std::filesystem::path& records_file,
                const std::filesystem::path& metadata_file) {
    IndexFile file;
    file.dimension = static_cast<std::uint32_t>(index.dimension());
    file.ids.reserve(index.size());
    file.vectors.reserve(index.size() * index.dimension());
    std::string sidecar;
    for (std::size_t i = 0; i < index.size(); ++i) {
        file.ids.push_back(index.id(i));
        auto v = index.vector(i);
        file.vectors.insert(file.vectors.end(), v.begin(), v.end());

        json j{{"id", index.id(i)}, {"uri", index.metadata(i).uri}};
        if (index.metadata(i).caption) j["caption"] = *index.metadata(i).caption;
        if (!index.embedder_tag().empty()) j["model_tag"] = index.embedder_tag();
        sidecar += j.dump();
        sidecar += '\n';
    }
    write_index_file(records_file, file);
    write_file(metadata_file, sidecar);
}

std::filesystem::path default_sidecar_path(const std::filesystem::path& records_file) {
    return std::filesystem::path(records_file.string() + ".jsonl");
}

} // namespace imagerag
