#pragma once

#include "imagerag/eval.hpp"
#include "imagerag/pipeline.hpp"

#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace imagerag::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir();
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

std::filesystem::path fixture_dir();

std::vector<float> random_vector(std::mt19937_64& rng, std::size_t dim);
std::vector<float> random_unit(std::mt19937_64& rng, std::size_t dim);

// Records "r00000".. with gaussian vectors and uri "img/<id>.png".
std::vector<EmbeddingRecord> random_records(std::mt19937_64& rng, std::size_t count, std::size_t dim);

struct OracleHit {
    std::string id;
    long double score;
};

// Full scan in long double followed by a complete sort; no heap, no early exit.
std::vector<OracleHit> exhaustive_top_k(const EmbeddingIndex& index, std::span<const float> query,
                                        std::size_t k);

// Textbook Okapi BM25 written out term by term.
double bm25_oracle(const std::vector<std::string>& doc, const std::vector<std::vector<std::string>>& corpus,
                   const std::vector<std::string>& query, double k1, double b);

BackendProfile omnigen_profile();
BackendProfile sdxl_profile();

// The two-concept scripted world: a seeded 200-record index, a VLM that
// answers "no", names two concepts and writes a caption for each, and a
// hash-deterministic T2I mock.
struct TwoConceptWorld {
    std::shared_ptr<ScriptedChatTransport> transport;
    std::shared_ptr<MockEmbedder> embedder;
    std::shared_ptr<MockT2iClient> t2i;
    PipelineClients clients;
    PipelineConfig config;
    std::vector<std::string> captions;
    std::vector<std::string> expected_ids; // top-1 per caption by exhaustive scan
};

TwoConceptWorld make_two_concept_world(const std::filesystem::path& artifacts, std::uint64_t seed = 7);

// Twenty classes whose prompts the generator misreads: its prompt embedding
// is unrelated to the evaluator's. Reference images sit near the class
// embedding, and the mock output is the mean of prompt and references.
struct ImprovementWorld {
    GridContext context;
    std::vector<EvalClass> classes;
    std::shared_ptr<ScriptedChatTransport> transport;
};

ImprovementWorld make_improvement_world(const std::filesystem::path& artifacts, std::size_t classes = 20,
                                        std::uint64_t seed = 11);

} // namespace imagerag::testing

namespace imagerag::testing {

// Stored prompt text with "{prompt}" replaced.
std::string prompt_fixture(const std::string& name, const std::string& prompt = {});

// Text parts of the last user message, as serialized on the wire.
std::vector<std::string> last_user_texts(const ChatRequest& request);

} // namespace imagerag::testing

namespace imagerag::testing {

inline ExperimentPlan make_plan(std::string name, Variant variant, std::string retrieval_set = "default") {
    ExperimentPlan plan;
    plan.name = std::move(name);
    plan.variant = variant;
    plan.retrieval_set = std::move(retrieval_set);
    return plan;
}

} // namespace imagerag::testing
