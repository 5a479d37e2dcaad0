#include "imagerag/vlm_orchestrator.hpp"

#include "imagerag/error.hpp"

#include <cctype>

namespace imagerag {

namespace prompts {

namespace {

constexpr std::string_view kDecisionHead = "Does this image match the prompt \"";
constexpr std::string_view kDecisionTail =
    "\"? Consider both content and style aspects. Only answer yes or no.";

constexpr std::string_view kMissingConcepts =
    "What are the differences between this image and the required prompt? In your answer only "
    "provide missing concepts in terms of content and style, each in a separate line. For "
    "example, if the prompt is \"An oil painting of a sheep and a car\" and the image is a "
    "painting of a car but not an oil painting, the missing concepts will be:\n"
    "oil painting style\n"
    "a sheep";

constexpr std::string_view kCaptionGeneration =
    "For each concept you suggested above, please suggest an image caption describing an image "
    "that explains this concept only. The captions should be stand-alone description of the "
    "images, assuming no knowledge of the given images and prompt, that I can use to lookup "
    "images with automatically. In your answer only provide the image captions, each in a new "
    "line with nothing else other than the caption.";

constexpr std::string_view kRephraseHead =
    "Please rephrase the following prompt to make it easier and clearer for the text-to-image "
    "generation model that generated the above image for this prompt. The goal is to generate "
    "an image that matches the given text prompt. If the prompt is already clear, return it as "
    "it is. Simplify and shorten long descriptions of known objects/entities but DO NOT change "
    "the original meaning of the text prompt. If the prompt contains rare words, change those "
    "words to a description of their meaning. In your answer only provide the prompt and "
    "nothing else. The prompt to be rephrased: \"";
constexpr std::string_view kRephraseTail = "\".";

} // namespace

std::string decision(std::string_view prompt) {
    std::string out(kDecisionHead);
    out += prompt;
    out += kDecisionTail;
    return out;
}

std::string_view missing_concepts() { return kMissingConcepts; }
std::string_view caption_generation() { return kCaptionGeneration; }

std::string rephrase(std::string_view prompt) {
    std::string out(kRephraseHead);
    out += prompt;
    out += kRephraseTail;
    return out;
}

} // namespace prompts

void RetryPolicy::validate() const {
    if (max_repetitions < 0) throw UsageError("max_repetitions must be >= 0");
    if (temperature_schedule.size() != static_cast<std::size_t>(max_repetitions)) {
        throw UsageError("temperature schedule length must equal max_repetitions");
    }
    double prev = initial_temperature;
    for (double t : temperature_schedule) {
        if (!(t > prev)) throw UsageError("temperature schedule must be strictly increasing");
        prev = t;
    }
}

std::optional<bool> parse_yes_no(std::string_view answer) {
    std::string token;
    for (char c : trim(answer)) {
        if (!std::isalpha(static_cast<unsigned char>(c))) break;
        token.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    if (token == "yes") return true;
    if (token == "no") return false;
    return std::nullopt;
}

std::vector<std::string> parse_lines(std::string_view response) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= response.size()) {
        auto end = response.find('\n', start);
        if (end == std::string_view::npos) end = response.size();
        std::string_view line = response.substr(start, end - start);
        start = end + 1;

        std::string item = trim(line);
        // Numbering: digits followed by '.' or ')'.
        std::size_t i = 0;
        while (i < item.size() && std::isdigit(static_cast<unsigned char>(item[i]))) ++i;
        if (i > 0 && i < item.size() && (item[i] == '.' || item[i] == ')')) {
            item = trim(std::string_view(item).substr(i + 1));
        }
        for (std::string_view bullet : {"- ", "* ", "\xE2\x80\xA2"}) {
            if (std::string_view(item).starts_with(bullet)) {
                item = trim(std::string_view(item).substr(bullet.size()));
                break;
            }
        }
        if (item == "-" || item == "*") item.clear();
        if (!item.empty()) out.push_back(std::move(item));
        if (end == response.size()) break;
    }
    return out;
}

bool is_refusal(std::string_view response) {
    return to_lower(response).find("unable to respond") != std::string::npos;
}

MatchDecision decide_match(VlmClient& vlm, std::string_view prompt, const ImageRef& image,
                           double temperature) {
    if (trim(prompt).empty()) throw UsageError("decision prompt must be non-empty");
    Conversation convo{ChatMessage::user(
        {ContentPart::of_image(image), ContentPart::of_text(prompts::decision(prompt))})};
    std::string raw = vlm.complete(convo, temperature);
    auto parsed = parse_yes_no(raw);
    if (!parsed) throw ResponseError("decision answer is neither yes nor no", raw);
    return {*parsed, std::move(raw)};
}

Conversation decision_context(std::string_view prompt, const ImageRef& image,
                              std::string_view decision_answer) {
    return {ChatMessage::user(
                {ContentPart::of_image(image), ContentPart::of_text(prompts::decision(prompt))}),
            ChatMessage::assistant(std::string(decision_answer))};
}

ConceptsReply missing_concepts(VlmClient& vlm, Conversation& conversation, double temperature,
                               std::size_t max_concepts) {
    conversation.push_back(
        ChatMessage::user({ContentPart::of_text(std::string(prompts::missing_concepts()))}));
    ConceptsReply reply;
    reply.raw_response = vlm.complete(conversation, temperature);
    conversation.push_back(ChatMessage::assistant(reply.raw_response));

    if (is_refusal(reply.raw_response)) {
        reply.refused = true;
        return reply;
    }
    reply.concepts = parse_lines(reply.raw_response);
    if (reply.concepts.size() > max_concepts) reply.concepts.resize(max_concepts);
    reply.refused = reply.concepts.empty();
    return reply;
}

ConceptsReply missing_concepts(VlmClient& vlm, std::string_view prompt, const ImageRef& image,
                               double temperature, std::size_t max_concepts) {
    if (trim(prompt).empty()) throw UsageError("prompt must be non-empty");
    Conversation convo = decision_context(prompt, image);
    return missing_concepts(vlm, convo, temperature, max_concepts);
}

CaptionsReply captions_for_concepts(VlmClient& vlm, Conversation& conversation,
                                    const std::vector<std::string>& concepts, double temperature) {
    if (concepts.empty()) throw UsageError("captions_for_concepts needs at least one concept");
    conversation.push_back(
        ChatMessage::user({ContentPart::of_text(std::string(prompts::caption_generation()))}));
    CaptionsReply reply;
    reply.raw_response = vlm.complete(conversation, temperature);
    conversation.push_back(ChatMessage::assistant(reply.raw_response));

    if (is_refusal(reply.raw_response)) {
        throw ResponseError("caption request refused", reply.raw_response);
    }
    auto lines = parse_lines(reply.raw_response);
    if (lines.empty()) throw ResponseError("no caption lines in answer", reply.raw_response);

    const std::size_t n = std::min(lines.size(), concepts.size());
    reply.count_mismatch = lines.size() != concepts.size();
    for (std::size_t i = 0; i < n; ++i) {
        reply.captions.push_back({concepts[i], std::move(lines[i])});
    }
    return reply;
}

CaptionsReply captions_for_concepts(VlmClient& vlm, const std::vector<std::string>& concepts,
                                    double temperature) {
    std::string listed;
    for (const auto& c : concepts) {
        if (!listed.empty()) listed += '\n';
        listed += c;
    }
    Conversation convo{
        ChatMessage::user({ContentPart::of_text(std::string(prompts::missing_concepts()))}),
        ChatMessage::assistant(listed)};
    return captions_for_concepts(vlm, convo, concepts, temperature);
}

std::string_view to_string(AttemptOutcome outcome) {
    switch (outcome) {
    case AttemptOutcome::success: return "success";
    case AttemptOutcome::refused: return "refused";
    case AttemptOutcome::no_concepts: return "no-concepts";
    case AttemptOutcome::no_captions: return "no-captions";
    }
    return "unknown";
}

CaptionGenerationResult retrieval_caption_generation(VlmClient& vlm, std::string_view prompt,
                                                     const ImageRef& image,
                                                     const RetryPolicy& policy,
                                                     const CaptionGenerationOptions& options) {
    policy.validate();
    if (trim(prompt).empty()) throw UsageError("prompt must be non-empty");

    std::vector<double> temperatures{policy.initial_temperature};
    temperatures.insert(temperatures.end(), policy.temperature_schedule.begin(),
                        policy.temperature_schedule.end());

    CaptionGenerationResult result;
    for (double t : temperatures) {
        CaptionAttempt attempt;
        attempt.temperature = t;

        Conversation convo = decision_context(prompt, image, options.decision_answer);
        auto concepts = missing_concepts(vlm, convo, t, options.max_concepts);
        attempt.concepts = concepts.concepts;
        attempt.concepts_response = concepts.raw_response;
        if (concepts.refused) {
            attempt.outcome = is_refusal(concepts.raw_response) ? AttemptOutcome::refused
                                                                : AttemptOutcome::no_concepts;
            result.attempts.push_back(std::move(attempt));
            continue;
        }

        if (options.concepts_only) {
            for (const auto& c : concepts.concepts) result.captions.push_back({c, c});
            result.attempts.push_back(std::move(attempt));
            return result;
        }

        try {
            auto captions = captions_for_concepts(vlm, convo, concepts.concepts, t);
            attempt.captions_response = captions.raw_response;
            result.captions = std::move(captions.captions);
            result.count_mismatch = captions.count_mismatch;
            result.attempts.push_back(std::move(attempt));
            return result;
        } catch (const ResponseError& e) {
            attempt.outcome = AttemptOutcome::no_captions;
            attempt.captions_response = e.raw_response();
            result.attempts.push_back(std::move(attempt));
        }
    }

    result.fallback_used = true;
    result.captions = {{std::string(prompt), std::string(prompt)}};
    return result;
}

std::string rephrase_prompt(VlmClient& vlm, std::string_view prompt, const ImageRef& image,
                            double temperature) {
    if (trim(prompt).empty()) throw UsageError("prompt must be non-empty");
    Conversation convo{ChatMessage::user(
        {ContentPart::of_image(image), ContentPart::of_text(prompts::rephrase(prompt))})};
    return trim(vlm.complete(convo, temperature));
}

} // namespace imagerag
