#pragma once

#include <chrono>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sement/dataset.hpp"
#include "sement/error.hpp"

namespace sement {

struct GenerationConfig {
    std::string model_id = "gpt-4o-2024-08-06";
    int num_samples = 10;
    double answer_temperature = 1.0;
    double entailment_temperature = 0.0;
    /// Must be set to run the entailment judge at a non-zero temperature.
    bool allow_nonzero_entailment_temperature = false;
    int max_answer_tokens = 256;
    std::string prompt_template_id = "answer-v1";
    /// Discrete-SE-only mode: the backend is not asked for log-probabilities
    /// and perplexity / likelihood-weighted SE are not computed.
    bool logprob_free = false;

    friend bool operator==(const GenerationConfig&, const GenerationConfig&) = default;
};

/// Throws ConfigError on invalid values; returns human-readable warnings
/// for accepted-but-unusual settings.
std::vector<std::string> validate(const GenerationConfig& config);

struct Generation {
    std::string question_id;
    int sample_index = 0;
    std::string text;
    /// Natural-log probability of each emitted token; empty in logprob-free mode.
    std::vector<double> token_logprobs;
    double temperature = 1.0;

    friend bool operator==(const Generation&, const Generation&) = default;
};

enum class Purpose { Answer, Classify, Entail };

/// Routing metadata. Not part of the wire request or the cache key; every
/// field is already rendered into the prompt text.
struct RequestTag {
    Purpose purpose = Purpose::Answer;
    std::string subject;  // question text
    std::string premise;
    std::string hypothesis;
};

struct CompletionRequest {
    std::string model_id;
    std::string system;
    std::string user;
    double temperature = 1.0;
    int max_tokens = 256;
    bool want_logprobs = true;
    int sample_index = 0;
    RequestTag tag;
};

struct CompletionResult {
    std::string text;
    /// Absent when the backend did not return log-probabilities.
    std::optional<std::vector<double>> token_logprobs;
};

class GenerationBackend {
public:
    virtual ~GenerationBackend() = default;
    virtual CompletionResult complete(const CompletionRequest& request) = 0;
    /// Stable identity, folded into cache keys.
    [[nodiscard]] virtual std::string id() const = 0;
};

struct RetryPolicy {
    int max_retries = 3;
    std::chrono::milliseconds base_delay{250};
    /// Injected so tests do not sleep.
    std::function<void(std::chrono::milliseconds)> sleep;
};

/// Retries TransientError with exponential backoff (base, 2*base, 4*base...).
/// Non-transient errors propagate immediately.
CompletionResult complete_with_retries(GenerationBackend& backend,
                                       const CompletionRequest& request,
                                       const RetryPolicy& policy);

class GenerationError : public BackendError {
public:
    GenerationError(std::string question_id, int sample_index, const std::string& what);
    [[nodiscard]] const std::string& question_id() const noexcept { return question_id_; }
    [[nodiscard]] int sample_index() const noexcept { return sample_index_; }

private:
    std::string question_id_;
    int sample_index_;
};

struct FanOutOptions {
    std::size_t max_in_flight = 8;
    RetryPolicy retry;
};

/// Samples config.num_samples independent answers. Sample i is requested
/// with sample_index = i; the returned vector is ordered by sample_index
/// regardless of completion order.
std::vector<Generation> generate_answers(const Question& question, const GenerationConfig& config,
                                         GenerationBackend& backend, const FanOutOptions& options = {});

/// Builds the exact request generate_answers sends for one sample.
CompletionRequest answer_request(const Question& question, const GenerationConfig& config,
                                 int sample_index);

/// Temperature-0 knowledge/reasoning label. One reprompt on an unparseable
/// reply, then BackendError.
Category classify_question(const Question& question, GenerationBackend& backend,
                           const std::string& model_id, const RetryPolicy& retry = {});

/// Parses a classifier reply; nullopt when it is neither label.
std::optional<Category> parse_category_reply(std::string_view reply);

/// Length-normalised log-likelihood: arithmetic mean of the token log-probs.
double sequence_loglik(std::span<const double> token_logprobs);
double sequence_loglik(const Generation& gen);

}  // namespace sement
