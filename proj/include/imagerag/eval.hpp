#pragma once

#include "imagerag/pipeline.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace imagerag {

enum class EvalMetric { clip_t2i, siglip_t2i, dino_i2i };

std::string_view to_string(EvalMetric m);
EvalMetric eval_metric_from_string(std::string_view s);

struct ScoreSample {
    std::string class_id;
    EvalMetric metric = EvalMetric::clip_t2i;
    double value = 0.0;
};

struct AggregateCell {
    double mean = 0.0;
    double sem = 0.0; // sample sd (n - 1) / sqrt(n); 0 when n == 1
    std::size_t n = 0;
    bool degenerate = false; // n == 1
};

/// Mean and standard error of the mean. Throws UsageError on empty input.
AggregateCell aggregate(std::span<const double> values);
AggregateCell aggregate(std::span<const ScoreSample> samples);

/// Cosine of the normalized text and image embeddings.
double text_image_score(EmbedderClient& embedder, std::string_view text, const ImageRef& image);

/// Cosine of two normalized image embeddings.
double image_image_score(EmbedderClient& embedder, const ImageRef& a, const ImageRef& b);

enum class Variant { base, rephrased_prompt, retrieve_concepts, retrieve_prompt, full_method };

std::string_view to_string(Variant v);
Variant variant_from_string(std::string_view s);

struct ExperimentPlan {
    std::string name;
    Variant variant = Variant::full_method;
    std::string retrieval_set = "default";
    std::optional<std::size_t> subset_size;
    std::optional<RerankMode> rerank; // unset: the pipeline config's choice
};

nlohmann::json to_json(const ExperimentPlan& plan);
ExperimentPlan experiment_plan_from_json(const nlohmann::json& j);

struct EvalClass {
    std::string class_id;
    std::string prompt;
    std::vector<ImageRef> real_images;
};

/// JSON-lines: {"class_id", "prompt", "real_images": [uri, ...]}.
std::vector<EvalClass> load_class_list(const std::filesystem::path& path);

/// Evaluation embedders, distinct from the retrieval ones. A null entry
/// drops that metric from the report.
struct Evaluators {
    std::shared_ptr<EmbedderClient> clip;
    std::shared_ptr<EmbedderClient> siglip;
    std::shared_ptr<EmbedderClient> dino;

    std::vector<EvalMetric> metrics() const;
};

struct GridContext {
    std::shared_ptr<VlmClient> vlm;
    std::shared_ptr<T2iClient> t2i;
    BackendProfile backend;
    std::map<std::string, std::vector<RetrievalSource>> retrieval_sets;
    Evaluators evaluators;
    PipelineConfig pipeline;
    std::size_t samples_per_class = 1;
    std::size_t parallelism = 1;
    std::uint64_t subset_seed = 0;
};

struct GridCell {
    std::string plan;
    std::string class_id;
    EvalMetric metric = EvalMetric::clip_t2i;
    std::optional<AggregateCell> value;
    std::optional<std::string> error;
};

struct PlanSummary {
    std::string plan;
    EvalMetric metric = EvalMetric::clip_t2i;
    std::optional<AggregateCell> value; // over every per-image sample of the plan
};

struct Report {
    std::vector<ExperimentPlan> plans;
    std::vector<EvalMetric> metrics;
    std::vector<GridCell> cells;       // plan-major, then class, then metric
    std::vector<PlanSummary> summary;  // plan-major, then metric
};

nlohmann::json to_json(const Report& report);

/// One row per plan, mean and sem columns per metric.
std::string to_csv(const Report& report);

/// Runs each plan on each class and scores the generated images. A failing
/// (plan, class) pair is recorded in its cells and the grid moves on.
/// With a scripted VLM, keep parallelism at 1 so replies stay in order.
Report run_grid(const std::vector<ExperimentPlan>& plans, const std::vector<EvalClass>& classes,
                const GridContext& context);

/// Seeded permutation of [0, population). Prefixes of it are the nested
/// subsets used by dataset-size sweeps.
std::vector<std::size_t> seeded_permutation(std::size_t population, std::uint64_t seed);

/// One position list per size; sizes must be ascending and at most
/// `population`. Each list is a prefix of the next.
std::vector<std::vector<std::size_t>> nested_subsets(std::size_t population,
                                                     std::span<const std::size_t> sizes,
                                                     std::uint64_t seed);

/// Copies of `base` for each size, named "<base.name>@<size>".
std::vector<ExperimentPlan> sweep_plans(const ExperimentPlan& base, std::span<const std::size_t> sizes);

} // namespace imagerag
