#include "imagerag/pipeline.hpp"

#include "imagerag/error.hpp"
#include "imagerag/serialization.hpp"

#include <algorithm>
#include <chrono>
#include <set>
#include <unordered_set>

namespace imagerag {

using nlohmann::json;

std::string_view to_string(RerankMode mode) {
    switch (mode) {
    case RerankMode::none: return "none";
    case RerankMode::bm25: return "bm25";
    case RerankMode::vlm: return "vlm";
    }
    return "unknown";
}

RerankMode rerank_mode_from_string(std::string_view s) {
    if (s == "none") return RerankMode::none;
    if (s == "bm25") return RerankMode::bm25;
    if (s == "vlm") return RerankMode::vlm;
    throw UsageError("unknown rerank mode '" + std::string(s) + "' (expected none|bm25|vlm)");
}

std::string_view to_string(QuerySource source) {
    switch (source) {
    case QuerySource::captions: return "captions";
    case QuerySource::concepts: return "concepts";
    case QuerySource::prompt: return "prompt";
    }
    return "unknown";
}

QuerySource query_source_from_string(std::string_view s) {
    if (s == "captions") return QuerySource::captions;
    if (s == "concepts") return QuerySource::concepts;
    if (s == "prompt") return QuerySource::prompt;
    throw UsageError("unknown query source '" + std::string(s) + "'");
}

std::string_view to_string(Stage stage) {
    switch (stage) {
    case Stage::initial_gen: return "initial-gen";
    case Stage::decision: return "decision";
    case Stage::vlm_loop: return "vlm-loop";
    case Stage::retrieval: return "retrieval";
    case Stage::rerank: return "rerank";
    case Stage::final_gen: return "final-gen";
    }
    return "unknown";
}

Stage stage_from_string(std::string_view s) {
    for (auto st : {Stage::initial_gen, Stage::decision, Stage::vlm_loop, Stage::retrieval,
                    Stage::rerank, Stage::final_gen}) {
        if (to_string(st) == s) return st;
    }
    throw FormatError("unknown stage '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

int PipelineConfig::resolved_concepts(const BackendCapabilities& caps, bool personalized) const {
    if (concepts_per_prompt) return *concepts_per_prompt;
    const int slots = caps.max_reference_images - (personalized ? 1 : 0);
    return std::clamp(slots / std::max(images_per_concept, 1), 1, 3);
}

std::size_t PipelineConfig::resolved_per_source_k() const {
    if (per_source_k) return static_cast<std::size_t>(*per_source_k);
    return rerank == RerankMode::none ? static_cast<std::size_t>(images_per_concept) : 3;
}

void PipelineConfig::validate(const BackendCapabilities& caps, bool personalized) const {
    if (images_per_concept < 1) throw UsageError("images_per_concept must be >= 1");
    if (concepts_per_prompt && *concepts_per_prompt < 1) {
        throw UsageError("concepts_per_prompt must be >= 1");
    }
    if (per_source_k && *per_source_k < 1) throw UsageError("per_source_k must be >= 1");
    retry_policy.validate();
    if (personalized && !caps.supports_personal_subject) {
        throw CapabilityError("backend does not support a personal subject image");
    }
    const int needed =
        resolved_concepts(caps, personalized) * images_per_concept + (personalized ? 1 : 0);
    if (needed > caps.max_reference_images) {
        throw CapabilityError("config needs " + std::to_string(needed) +
                              " reference images but the backend accepts " +
                              std::to_string(caps.max_reference_images));
    }
}

json to_json(const PipelineConfig& c) {
    json j{{"images_per_concept", c.images_per_concept},
           {"rerank", to_string(c.rerank)},
           {"skip_decision", c.skip_decision},
           {"query_source", to_string(c.query_source)},
           {"retry_policy", c.retry_policy},
           {"bm25", {{"k1", c.bm25.k1}, {"b", c.bm25.b}}}};
    j["concepts_per_prompt"] = c.concepts_per_prompt ? json(*c.concepts_per_prompt) : json(nullptr);
    j["per_source_k"] = c.per_source_k ? json(*c.per_source_k) : json(nullptr);
    j["initial_seed"] = c.initial_seed ? json(*c.initial_seed) : json(nullptr);
    j["final_seed"] = c.final_seed ? json(*c.final_seed) : json(nullptr);
    return j;
}

PipelineConfig pipeline_config_from_json(const json& j, PipelineConfig c) {
    if (!j.is_object()) throw FormatError("pipeline config must be a JSON object");
    auto opt_int = [&](const char* key, std::optional<int>& out) {
        if (j.contains(key)) out = j[key].is_null() ? std::nullopt : std::optional(j[key].get<int>());
    };
    auto opt_seed = [&](const char* key, std::optional<std::int64_t>& out) {
        if (j.contains(key)) {
            out = j[key].is_null() ? std::nullopt : std::optional(j[key].get<std::int64_t>());
        }
    };
    try {
        opt_int("concepts_per_prompt", c.concepts_per_prompt);
        opt_int("per_source_k", c.per_source_k);
        c.images_per_concept = j.value("images_per_concept", c.images_per_concept);
        if (j.contains("rerank")) c.rerank = rerank_mode_from_string(j["rerank"].get<std::string>());
        c.skip_decision = j.value("skip_decision", c.skip_decision);
        if (j.contains("query_source")) {
            c.query_source = query_source_from_string(j["query_source"].get<std::string>());
        }
        if (j.contains("retry_policy")) j["retry_policy"].get_to(c.retry_policy);
        if (j.contains("bm25")) {
            c.bm25.k1 = j["bm25"].value("k1", c.bm25.k1);
            c.bm25.b = j["bm25"].value("b", c.bm25.b);
        }
        opt_seed("initial_seed", c.initial_seed);
        opt_seed("final_seed", c.final_seed);
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad pipeline config: ") + e.what());
    }
    return c;
}

// ---------------------------------------------------------------------------
// Trace
// ---------------------------------------------------------------------------

std::optional<ImageRef> PipelineTrace::final_image() const {
    if (final_result) return final_result->image;
    if (decision && decision->matches && initial_result) return initial_result->image;
    return std::nullopt;
}

namespace {

template <typename T>
json optional_json(const std::optional<T>& v) {
    return v ? json(*v) : json(nullptr);
}

template <typename T>
std::optional<T> optional_from(const json& j, const char* key) {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    return j[key].get<T>();
}

} // namespace

void to_json(json& j, const CaptionRetrieval& v) {
    j = json{{"caption", v.caption},
             {"candidates", v.candidates},
             {"ranked", v.ranked},
             {"selected", v.selected},
             {"rerank_warning", v.rerank_warning}};
}

void from_json(const json& j, CaptionRetrieval& v) {
    v.caption = j.at("caption").get<ConceptCaption>();
    v.candidates = j.at("candidates").get<std::vector<RetrievalHit>>();
    v.ranked = j.at("ranked").get<std::vector<RetrievalHit>>();
    v.selected = j.at("selected").get<std::vector<std::string>>();
    v.rerank_warning = j.at("rerank_warning").get<bool>();
}

json to_json(const PipelineTrace& t, bool include_timings) {
    json stages = json::array();
    for (auto s : t.stages) stages.push_back(to_string(s));
    json j{{"run_id", t.run_id},
           {"prompt", t.prompt},
           {"subject", optional_json(t.subject)},
           {"backend", t.backend},
           {"config", t.config},
           {"stages", std::move(stages)},
           {"initial_result", optional_json(t.initial_result)},
           {"decision", optional_json(t.decision)},
           {"decision_skipped", t.decision_skipped},
           {"caption_generation", optional_json(t.caption_generation)},
           {"retrievals", t.retrievals},
           {"final_prompt", optional_json(t.final_prompt)},
           {"final_result", optional_json(t.final_result)},
           {"error", optional_json(t.error)}};
    if (include_timings) {
        json timings = json::array();
        for (const auto& st : t.timings) {
            timings.push_back({{"stage", to_string(st.stage)}, {"millis", st.millis}});
        }
        j["timings"] = std::move(timings);
    }
    return j;
}

PipelineTrace trace_from_json(const json& j) {
    PipelineTrace t;
    try {
        t.run_id = j.at("run_id").get<std::string>();
        t.prompt = j.at("prompt").get<std::string>();
        t.subject = optional_from<ImageRef>(j, "subject");
        t.backend = j.at("backend").get<std::string>();
        t.config = j.at("config");
        for (const auto& s : j.at("stages")) t.stages.push_back(stage_from_string(s.get<std::string>()));
        t.initial_result = optional_from<GenerationResult>(j, "initial_result");
        t.decision = optional_from<MatchDecision>(j, "decision");
        t.decision_skipped = j.at("decision_skipped").get<bool>();
        t.caption_generation = optional_from<CaptionGenerationResult>(j, "caption_generation");
        t.retrievals = j.at("retrievals").get<std::vector<CaptionRetrieval>>();
        t.final_prompt = optional_from<AugmentedPrompt>(j, "final_prompt");
        t.final_result = optional_from<GenerationResult>(j, "final_result");
        t.error = optional_from<std::string>(j, "error");
        if (j.contains("timings")) {
            for (const auto& st : j["timings"]) {
                t.timings.push_back({stage_from_string(st.at("stage").get<std::string>()),
                                     st.at("millis").get<double>()});
            }
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad trace: ") + e.what());
    }
    return t;
}

std::string make_run_id(std::string_view prompt, const std::optional<ImageRef>& subject,
                        const PipelineConfig& config, std::string_view backend) {
    json key{{"prompt", prompt},
             {"subject", subject ? subject->uri : std::string()},
             {"config", to_json(config)},
             {"backend", backend}};
    return sha256_hex(key.dump()).substr(0, 16);
}

// ---------------------------------------------------------------------------
// Run
// ---------------------------------------------------------------------------

namespace {

class StageClock {
public:
    StageClock(PipelineTrace& trace, Stage stage)
        : trace_(trace), stage_(stage), start_(std::chrono::steady_clock::now()) {
        trace_.stages.push_back(stage);
    }
    ~StageClock() {
        const std::chrono::duration<double, std::milli> elapsed =
            std::chrono::steady_clock::now() - start_;
        trace_.timings.push_back({stage_, elapsed.count()});
    }
    StageClock(const StageClock&) = delete;
    StageClock& operator=(const StageClock&) = delete;

private:
    PipelineTrace& trace_;
    Stage stage_;
    std::chrono::steady_clock::time_point start_;
};

GenerationParams params_with_seed(const BackendProfile& backend, std::optional<std::int64_t> seed) {
    GenerationParams p = backend.capabilities.default_params;
    if (seed) p.seed = seed;
    return p;
}

ImageRef image_for_id(const std::vector<RetrievalSource>& sources, const std::string& id) {
    for (const auto& s : sources) {
        if (auto pos = s.index->find(id)) {
            const auto& uri = s.index->metadata(*pos).uri;
            return ImageRef{uri.empty() ? id : uri};
        }
    }
    return ImageRef{id};
}

std::vector<RetrievalHit> pool_hits(const CandidatePool& pool) {
    std::vector<RetrievalHit> hits;
    hits.reserve(pool.candidates.size());
    for (const auto& c : pool.candidates) hits.push_back(c.hit);
    return hits;
}

PipelineTrace run_impl(std::string_view prompt, const std::optional<ImageRef>& subject,
                       const PipelineConfig& config, const PipelineClients& clients) {
    if (trim(prompt).empty()) throw UsageError("prompt must be non-empty");
    const bool personalized = subject.has_value();
    const auto& caps = clients.backend.capabilities;
    config.validate(caps, personalized);
    if (!clients.t2i) throw UsageError("pipeline needs a T2I client");
    if (!clients.vlm && (!config.skip_decision || config.query_source != QuerySource::prompt ||
                         config.rerank == RerankMode::vlm)) {
        throw UsageError("pipeline needs a VLM client");
    }
    if (clients.sources.empty()) throw UsageError("pipeline needs at least one retrieval source");
    for (const auto& s : clients.sources) {
        if (!s.index || !s.embedder) throw UsageError("retrieval source '" + s.name + "' is incomplete");
        if (config.rerank == RerankMode::bm25 && !s.index->has_all_captions()) {
            throw UsageError("bm25 re-ranking needs captions for every record of '" + s.name + "'");
        }
    }

    PipelineTrace trace;
    trace.prompt = std::string(prompt);
    trace.subject = subject;
    trace.backend = clients.backend.name;
    trace.config = to_json(config);
    trace.run_id = make_run_id(prompt, subject, config, clients.backend.name);
    const auto style = clients.backend.placeholder_style;
    const auto max_images = static_cast<std::size_t>(caps.max_reference_images);

    Stage current = Stage::initial_gen;
    try {
        {
            StageClock clock(trace, current = Stage::initial_gen);
            const auto params = params_with_seed(clients.backend, config.initial_seed);
            if (personalized) {
                AugmentedPrompt req;
                req.subject = subject;
                req.images = {*subject};
                req.text = "The subject is " + placeholder(1, style) + ". " + std::string(prompt);
                trace.initial_result = generate(*clients.t2i, caps, req, params);
            } else {
                trace.initial_result = generate(*clients.t2i, caps, prompt, params);
            }
        }
        const ImageRef initial_image = trace.initial_result->image;

        std::string decision_answer = "no";
        if (config.skip_decision) {
            trace.decision_skipped = true;
        } else {
            StageClock clock(trace, current = Stage::decision);
            trace.decision = decide_match(*clients.vlm, prompt, initial_image,
                                          config.retry_policy.initial_temperature);
            decision_answer = trace.decision->raw_response;
        }
        if (trace.decision && trace.decision->matches) return trace;

        const int concepts = config.resolved_concepts(caps, personalized);
        std::vector<ConceptCaption> captions;
        if (config.query_source == QuerySource::prompt) {
            captions = {{std::string(prompt), std::string(prompt)}};
        } else {
            StageClock clock(trace, current = Stage::vlm_loop);
            CaptionGenerationOptions opts;
            opts.max_concepts = static_cast<std::size_t>(concepts);
            opts.concepts_only = config.query_source == QuerySource::concepts;
            opts.decision_answer = decision_answer;
            trace.caption_generation = retrieval_caption_generation(
                *clients.vlm, prompt, initial_image, config.retry_policy, opts);
            captions = trace.caption_generation->captions;
        }
        if (captions.size() > static_cast<std::size_t>(concepts)) captions.resize(concepts);

        const auto per_concept = static_cast<std::size_t>(config.images_per_concept);
        std::vector<CandidatePool> pools;
        {
            StageClock clock(trace, current = Stage::retrieval);
            for (std::size_t i = 0; i < captions.size(); ++i) {
                CaptionRetrieval r;
                r.caption = captions[i];
                if (config.rerank == RerankMode::none) {
                    // Extra headroom so collisions with earlier picks can be replaced.
                    const auto& src = clients.sources.front();
                    const auto query = embed_text(*src.embedder, r.caption.caption, src.index->dimension());
                    r.candidates = src.index->top_k(query, per_concept * (i + 1), src.metric);
                    r.ranked = r.candidates;
                } else {
                    pools.push_back(build_pool(r.caption.caption, config.resolved_per_source_k(),
                                               clients.sources));
                    r.candidates = pool_hits(pools.back());
                }
                trace.retrievals.push_back(std::move(r));
            }
        }

        if (config.rerank != RerankMode::none) {
            StageClock clock(trace, current = Stage::rerank);
            for (std::size_t i = 0; i < trace.retrievals.size(); ++i) {
                auto& r = trace.retrievals[i];
                if (config.rerank == RerankMode::bm25) {
                    r.ranked = bm25_rerank(pools[i], r.caption.caption, config.bm25);
                } else {
                    auto res = vlm_rerank(pools[i], r.caption.caption, *clients.vlm);
                    r.ranked = std::move(res.hits);
                    r.rerank_warning = res.warning;
                }
            }
        }

        std::unordered_set<std::string> used;
        std::vector<ReferenceGroup> groups;
        for (auto& r : trace.retrievals) {
            ReferenceGroup group{r.caption.caption, {}};
            for (const auto& hit : r.ranked) {
                if (r.selected.size() == per_concept) break;
                if (!used.insert(hit.id).second) continue;
                r.selected.push_back(hit.id);
                group.images.push_back(image_for_id(clients.sources, hit.id));
            }
            if (!group.images.empty()) groups.push_back(std::move(group));
        }
        if (groups.empty()) throw Error("retrieval produced no reference images");

        {
            StageClock clock(trace, current = Stage::final_gen);
            trace.final_prompt = personalized
                                     ? render_personalized(prompt, *subject, groups, caps, style)
                                     : render_template(prompt, groups, max_images, style);
            trace.final_result = generate(*clients.t2i, caps, *trace.final_prompt,
                                          params_with_seed(clients.backend, config.final_seed));
        }
    } catch (const Error& e) {
        trace.error = std::string(to_string(current)) + ": " + e.what();
    }
    return trace;
}

std::optional<std::filesystem::path> copy_artifact(const ImageRef& image,
                                                   const std::filesystem::path& dir,
                                                   const std::string& stem) {
    std::error_code ec;
    if (is_remote_uri(image.uri) || is_data_uri(image.uri) ||
        !std::filesystem::is_regular_file(image.uri, ec)) {
        return std::nullopt;
    }
    const auto dest = dir / (stem + std::filesystem::path(image.uri).extension().string());
    std::filesystem::copy_file(image.uri, dest, std::filesystem::copy_options::overwrite_existing);
    return dest;
}

} // namespace

PipelineTrace run(std::string_view prompt, const PipelineConfig& config,
                  const PipelineClients& clients) {
    return run_impl(prompt, std::nullopt, config, clients);
}

PipelineTrace run_personalized(std::string_view prompt, const ImageRef& subject,
                               const PipelineConfig& config, const PipelineClients& clients) {
    return run_impl(prompt, subject, config, clients);
}

PersistedRun persist_run(const PipelineTrace& trace, const std::filesystem::path& runs_root) {
    PersistedRun out;
    out.dir = runs_root / trace.run_id;
    std::filesystem::create_directories(out.dir);
    if (trace.initial_result) out.initial = copy_artifact(trace.initial_result->image, out.dir, "initial");
    if (trace.final_result) out.final_image = copy_artifact(trace.final_result->image, out.dir, "final");
    write_file(out.dir / "trace.json", to_json(trace).dump(2) + "\n");
    return out;
}

} // namespace imagerag
