#pragma once

// nlohmann::json conversions for the value types recorded in run traces and
// reports. Every pair round-trips: from_json(to_json(x)) == x.

#include "imagerag/embedding_index.hpp"
#include "imagerag/generation.hpp"
#include "imagerag/vlm_orchestrator.hpp"

#include <json.hpp>

namespace imagerag {

void to_json(nlohmann::json& j, const ImageRef& v);
void from_json(const nlohmann::json& j, ImageRef& v);

void to_json(nlohmann::json& j, const RetrievalHit& v);
void from_json(const nlohmann::json& j, RetrievalHit& v);

void to_json(nlohmann::json& j, const MatchDecision& v);
void from_json(const nlohmann::json& j, MatchDecision& v);

void to_json(nlohmann::json& j, const ConceptCaption& v);
void from_json(const nlohmann::json& j, ConceptCaption& v);

void to_json(nlohmann::json& j, const CaptionAttempt& v);
void from_json(const nlohmann::json& j, CaptionAttempt& v);

void to_json(nlohmann::json& j, const CaptionGenerationResult& v);
void from_json(const nlohmann::json& j, CaptionGenerationResult& v);

void to_json(nlohmann::json& j, const RetryPolicy& v);
void from_json(const nlohmann::json& j, RetryPolicy& v);

void to_json(nlohmann::json& j, const ReferenceGroup& v);
void from_json(const nlohmann::json& j, ReferenceGroup& v);

void to_json(nlohmann::json& j, const AugmentedPrompt& v);
void from_json(const nlohmann::json& j, AugmentedPrompt& v);

void to_json(nlohmann::json& j, const GenerationResult& v);
void from_json(const nlohmann::json& j, GenerationResult& v);

AttemptOutcome attempt_outcome_from_string(std::string_view s);

} // namespace imagerag
