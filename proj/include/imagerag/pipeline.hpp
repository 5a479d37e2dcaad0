#pragma once

#include "imagerag/generation.hpp"
#include "imagerag/retrieval.hpp"
#include "imagerag/vlm_orchestrator.hpp"

#include <json.hpp>

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace imagerag {

enum class RerankMode { none, bm25, vlm };

std::string_view to_string(RerankMode mode);
RerankMode rerank_mode_from_string(std::string_view s);

/// What drives retrieval. `captions` is the full method; the others are the
/// ablations that retrieve by the raw concept strings or by the prompt.
enum class QuerySource { captions, concepts, prompt };

std::string_view to_string(QuerySource source);
QuerySource query_source_from_string(std::string_view s);

struct PipelineConfig {
    // Unset means "as many as the backend allows, up to 3".
    std::optional<int> concepts_per_prompt;
    int images_per_concept = 1;
    // Unset means 3 when re-ranking, otherwise images_per_concept.
    std::optional<int> per_source_k;
    RerankMode rerank = RerankMode::none;
    bool skip_decision = false;
    QuerySource query_source = QuerySource::captions;
    RetryPolicy retry_policy;
    Bm25Params bm25;
    std::optional<std::int64_t> initial_seed;
    std::optional<std::int64_t> final_seed;

    int resolved_concepts(const BackendCapabilities& caps, bool personalized) const;
    std::size_t resolved_per_source_k() const;

    /// Throws UsageError / CapabilityError when the config cannot run on a
    /// backend with `caps`.
    void validate(const BackendCapabilities& caps, bool personalized) const;
};

nlohmann::json to_json(const PipelineConfig& config);
PipelineConfig pipeline_config_from_json(const nlohmann::json& j, PipelineConfig base = {});

/// Everything a run talks to. The sources are queried in order; without
/// re-ranking only the first is used.
struct PipelineClients {
    std::shared_ptr<VlmClient> vlm;
    std::shared_ptr<T2iClient> t2i;
    std::vector<RetrievalSource> sources;
    BackendProfile backend;
};

enum class Stage { initial_gen, decision, vlm_loop, retrieval, rerank, final_gen };

std::string_view to_string(Stage stage);
Stage stage_from_string(std::string_view s);

struct CaptionRetrieval {
    ConceptCaption caption;
    std::vector<RetrievalHit> candidates; // first-stage cosine hits / pool
    std::vector<RetrievalHit> ranked;     // after re-ranking; equals candidates without it
    std::vector<std::string> selected;    // ids attached for this caption
    bool rerank_warning = false;

    bool operator==(const CaptionRetrieval&) const = default;
};

struct StageTiming {
    Stage stage;
    double millis = 0.0;
};

struct PipelineTrace {
    std::string run_id;
    std::string prompt;
    std::optional<ImageRef> subject;
    std::string backend;
    nlohmann::json config;

    std::vector<Stage> stages;
    std::optional<GenerationResult> initial_result;
    std::optional<MatchDecision> decision; // empty when skipped or not reached
    bool decision_skipped = false;
    std::optional<CaptionGenerationResult> caption_generation;
    std::vector<CaptionRetrieval> retrievals;
    std::optional<AugmentedPrompt> final_prompt;
    std::optional<GenerationResult> final_result;
    std::optional<std::string> error;
    std::vector<StageTiming> timings;

    /// The image the run produced: the regenerated one, or the initial image
    /// when the decision accepted it.
    std::optional<ImageRef> final_image() const;
};

/// Timings are volatile; leave them out to compare runs byte for byte.
nlohmann::json to_json(const PipelineTrace& trace, bool include_timings = true);
PipelineTrace trace_from_json(const nlohmann::json& j);

/// Deterministic id from the run inputs.
std::string make_run_id(std::string_view prompt, const std::optional<ImageRef>& subject,
                        const PipelineConfig& config, std::string_view backend);

/// One pass of generate -> judge -> caption -> retrieve -> regenerate.
/// Configuration problems throw; failures inside a stage are recorded in
/// `trace.error` and end the run with the stages completed so far.
PipelineTrace run(std::string_view prompt, const PipelineConfig& config,
                  const PipelineClients& clients);

/// As run(), with `subject` reserved as the first attachment of every request.
PipelineTrace run_personalized(std::string_view prompt, const ImageRef& subject,
                               const PipelineConfig& config, const PipelineClients& clients);

struct PersistedRun {
    std::filesystem::path dir;
    std::optional<std::filesystem::path> initial;
    std::optional<std::filesystem::path> final_image;
};

/// Writes <runs_root>/<run-id>/{trace.json, initial.<ext>, final.<ext>}.
/// final.<ext> exists only when a regeneration happened.
PersistedRun persist_run(const PipelineTrace& trace, const std::filesystem::path& runs_root);

} // namespace imagerag
