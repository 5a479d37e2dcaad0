#pragma once

#include "imagerag/common.hpp"
#include "imagerag/vlm_client.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace imagerag {

namespace prompts {

std::string decision(std::string_view prompt);
std::string_view missing_concepts();
std::string_view caption_generation();
std::string rephrase(std::string_view prompt);

} // namespace prompts

struct MatchDecision {
    bool matches = false;
    std::string raw_response;
};

struct ConceptCaption {
    std::string concept_text;
    std::string caption;

    bool operator==(const ConceptCaption&) const = default;
};

struct RetryPolicy {
    int max_repetitions = 3;
    std::vector<double> temperature_schedule{0.4, 0.7, 1.0};
    double initial_temperature = 0.0;

    /// Throws UsageError unless the schedule has max_repetitions entries, is
    /// strictly increasing and starts above initial_temperature.
    void validate() const;
};

/// Reads a yes/no answer from the leading token, ignoring case and trailing
/// punctuation. Empty optional when the answer is neither.
std::optional<bool> parse_yes_no(std::string_view answer);

/// Splits a multi-line answer into items: lines are trimmed of whitespace,
/// bullets ("-", "*", "•") and numbering ("1.", "2)"); blank lines dropped.
std::vector<std::string> parse_lines(std::string_view response);

/// True when the answer contains "unable to respond" (any case).
bool is_refusal(std::string_view response);

/// Asks whether `image` matches `prompt`. Throws ResponseError carrying the
/// raw answer when it is not a yes/no.
MatchDecision decide_match(VlmClient& vlm, std::string_view prompt, const ImageRef& image,
                           double temperature = 0.0);

/// First turn of every concept conversation: the image with the decision
/// question, followed by the model's answer to it.
Conversation decision_context(std::string_view prompt, const ImageRef& image,
                              std::string_view decision_answer = "no");

struct ConceptsReply {
    std::vector<std::string> concepts;
    std::string raw_response;
    bool refused = false; // empty list or an explicit refusal
};

/// Appends the missing-concepts question to `conversation`, sends it, and
/// appends the answer. Keeps at most `max_concepts` items in answer order.
ConceptsReply missing_concepts(VlmClient& vlm, Conversation& conversation, double temperature,
                               std::size_t max_concepts = 3);

ConceptsReply missing_concepts(VlmClient& vlm, std::string_view prompt, const ImageRef& image,
                               double temperature, std::size_t max_concepts = 3);

struct CaptionsReply {
    std::vector<ConceptCaption> captions;
    std::string raw_response;
    bool count_mismatch = false;
};

/// Asks for one retrieval caption per concept, continuing `conversation`.
/// Captions pair with concepts by line order; on a count mismatch the shorter
/// list wins and `count_mismatch` is set. Throws ResponseError when no caption
/// line can be read.
CaptionsReply captions_for_concepts(VlmClient& vlm, Conversation& conversation,
                                    const std::vector<std::string>& concepts, double temperature);

/// Standalone form: the conversation is reconstructed with `concepts` as the
/// model's previous answer.
CaptionsReply captions_for_concepts(VlmClient& vlm, const std::vector<std::string>& concepts,
                                    double temperature);

enum class AttemptOutcome { success, refused, no_concepts, no_captions };

std::string_view to_string(AttemptOutcome outcome);

struct CaptionAttempt {
    double temperature = 0.0;
    AttemptOutcome outcome = AttemptOutcome::success;
    std::vector<std::string> concepts;
    std::string concepts_response;
    std::string captions_response;
};

struct CaptionGenerationOptions {
    std::size_t max_concepts = 3;
    /// Skip the caption request and retrieve by the concept strings themselves.
    bool concepts_only = false;
    /// Answer the model gave to the decision question, replayed as context.
    std::string decision_answer = "no";
};

struct CaptionGenerationResult {
    std::vector<ConceptCaption> captions;
    bool fallback_used = false;
    bool count_mismatch = false;
    std::vector<CaptionAttempt> attempts;
};

/// Missing-concept identification followed by caption generation, retried on
/// refusal at each temperature of the policy schedule. When every attempt
/// fails, falls back to the prompt itself as the only caption. Transport
/// errors abort immediately.
CaptionGenerationResult retrieval_caption_generation(VlmClient& vlm, std::string_view prompt,
                                                     const ImageRef& image,
                                                     const RetryPolicy& policy,
                                                     const CaptionGenerationOptions& options = {});

/// Asks the model to rewrite `prompt` for the generator that produced
/// `image`. Returns the trimmed answer.
std::string rephrase_prompt(VlmClient& vlm, std::string_view prompt, const ImageRef& image,
                            double temperature = 0.0);

} // namespace imagerag
