#include "imagerag/serialization.hpp"

#include "imagerag/error.hpp"

namespace imagerag {

using nlohmann::json;

void to_json(json& j, const ImageRef& v) { j = v.uri; }
void from_json(const json& j, ImageRef& v) { v.uri = j.get<std::string>(); }

void to_json(json& j, const RetrievalHit& v) {
    j = json{{"id", v.id}, {"score", v.score}, {"metric", to_string(v.metric)}};
}

void from_json(const json& j, RetrievalHit& v) {
    v.id = j.at("id").get<std::string>();
    v.score = j.at("score").get<double>();
    v.metric = metric_from_string(j.at("metric").get<std::string>());
}

void to_json(json& j, const MatchDecision& v) {
    j = json{{"matches", v.matches}, {"raw_response", v.raw_response}};
}

void from_json(const json& j, MatchDecision& v) {
    v.matches = j.at("matches").get<bool>();
    v.raw_response = j.at("raw_response").get<std::string>();
}

void to_json(json& j, const ConceptCaption& v) {
    j = json{{"concept", v.concept_text}, {"caption", v.caption}};
}

void from_json(const json& j, ConceptCaption& v) {
    v.concept_text = j.at("concept").get<std::string>();
    v.caption = j.at("caption").get<std::string>();
}

AttemptOutcome attempt_outcome_from_string(std::string_view s) {
    for (auto o : {AttemptOutcome::success, AttemptOutcome::refused, AttemptOutcome::no_concepts,
                   AttemptOutcome::no_captions}) {
        if (to_string(o) == s) return o;
    }
    throw FormatError("unknown attempt outcome '" + std::string(s) + "'");
}

void to_json(json& j, const CaptionAttempt& v) {
    j = json{{"temperature", v.temperature},
             {"outcome", to_string(v.outcome)},
             {"concepts", v.concepts},
             {"concepts_response", v.concepts_response},
             {"captions_response", v.captions_response}};
}

void from_json(const json& j, CaptionAttempt& v) {
    v.temperature = j.at("temperature").get<double>();
    v.outcome = attempt_outcome_from_string(j.at("outcome").get<std::string>());
    v.concepts = j.at("concepts").get<std::vector<std::string>>();
    v.concepts_response = j.at("concepts_response").get<std::string>();
    v.captions_response = j.at("captions_response").get<std::string>();
}

void to_json(json& j, const CaptionGenerationResult& v) {
    j = json{{"captions", v.captions},
             {"fallback_used", v.fallback_used},
             {"count_mismatch", v.count_mismatch},
             {"attempts", v.attempts}};
}

void from_json(const json& j, CaptionGenerationResult& v) {
    v.captions = j.at("captions").get<std::vector<ConceptCaption>>();
    v.fallback_used = j.at("fallback_used").get<bool>();
    v.count_mismatch = j.at("count_mismatch").get<bool>();
    v.attempts = j.at("attempts").get<std::vector<CaptionAttempt>>();
}

void to_json(json& j, const RetryPolicy& v) {
    j = json{{"max_repetitions", v.max_repetitions},
             {"temperature_schedule", v.temperature_schedule},
             {"initial_temperature", v.initial_temperature}};
}

void from_json(const json& j, RetryPolicy& v) {
    v.max_repetitions = j.value("max_repetitions", v.max_repetitions);
    if (j.contains("temperature_schedule")) {
        v.temperature_schedule = j["temperature_schedule"].get<std::vector<double>>();
    }
    v.initial_temperature = j.value("initial_temperature", v.initial_temperature);
}

void to_json(json& j, const ReferenceGroup& v) {
    j = json{{"caption", v.caption}, {"images", v.images}};
}

void from_json(const json& j, ReferenceGroup& v) {
    v.caption = j.at("caption").get<std::string>();
    v.images = j.at("images").get<std::vector<ImageRef>>();
}

void to_json(json& j, const AugmentedPrompt& v) {
    j = json{{"text", v.text}, {"images", v.images}, {"groups", v.groups}};
    j["subject"] = v.subject ? json(*v.subject) : json(nullptr);
}

void from_json(const json& j, AugmentedPrompt& v) {
    v.text = j.at("text").get<std::string>();
    v.images = j.at("images").get<std::vector<ImageRef>>();
    v.groups = j.at("groups").get<std::vector<ReferenceGroup>>();
    v.subject.reset();
    if (j.contains("subject") && !j["subject"].is_null()) v.subject = j["subject"].get<ImageRef>();
}

void to_json(json& j, const GenerationResult& v) {
    j = json{{"image", v.image},
             {"backend_request", v.backend_request},
             {"params_used", to_json(v.params_used)}};
}

void from_json(const json& j, GenerationResult& v) {
    v.image = j.at("image").get<ImageRef>();
    v.backend_request = j.at("backend_request");
    v.params_used = params_from_json(j.at("params_used"));
}

} // namespace imagerag
