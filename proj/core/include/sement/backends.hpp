#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "sement/genclient.hpp"

namespace sement {

/// Returns canned replies. Either a fixed list indexed by sample_index
/// (wrapping), or an arbitrary handler.
class ScriptedBackend final : public GenerationBackend {
public:
    using Handler = std::function<CompletionResult(const CompletionRequest&)>;

    explicit ScriptedBackend(std::vector<CompletionResult> replies, std::string id = "scripted");
    explicit ScriptedBackend(Handler handler, std::string id = "scripted");

    CompletionResult complete(const CompletionRequest& request) override;
    [[nodiscard]] std::string id() const override { return id_; }
    [[nodiscard]] std::size_t calls() const noexcept { return calls_.load(); }

private:
    Handler handler_;
    std::string id_;
    std::atomic<std::size_t> calls_{0};
};

struct SimulatedAnswer {
    std::string text;
    std::string meaning;      // answers sharing a meaning are judged equivalent
    double weight = 1.0;      // unnormalised sampling weight at temperature 1
    double confidence = 0.8;  // typical per-token probability, in (0, 1]
};

struct AnswerProfile {
    std::string question_text;
    Category category = Category::Knowledge;
    std::vector<SimulatedAnswer> answers;
};

/// Seeded mock model. Answer requests draw from the question's profile with
/// weights raised to 1/T (argmax at T = 0), classification requests return
/// the profile's category, and entailment requests compare meaning labels.
/// Every reply is a pure function of (seed, request), so results do not
/// depend on call order or concurrency.
class SimulatedBackend final : public GenerationBackend {
public:
    SimulatedBackend(std::vector<AnswerProfile> profiles, std::uint64_t seed);
    SimulatedBackend(SimulatedBackend&& other) noexcept
        : by_question_(std::move(other.by_question_)),
          meaning_of_(std::move(other.meaning_of_)),
          seed_(other.seed_),
          calls_(other.calls_.load()) {}

    /// Profiles in JSONL: {"question_id", "category", "answers": [{"text",
    /// "meaning", "weight", "confidence"}], "reference_meaning"}. Questions
    /// are joined on id; each reference answer is registered under
    /// reference_meaning so the judge can compare against it.
    static SimulatedBackend from_profile_file(const std::filesystem::path& path,
                                              std::span<const Question> questions,
                                              std::uint64_t seed);

    /// Registers a text under a meaning label for entailment lookups.
    void register_meaning(const std::string& text, const std::string& meaning);

    CompletionResult complete(const CompletionRequest& request) override;
    [[nodiscard]] std::string id() const override;
    [[nodiscard]] std::size_t calls() const noexcept { return calls_.load(); }

private:
    CompletionResult answer(const CompletionRequest& request) const;
    CompletionResult classify(const CompletionRequest& request) const;
    CompletionResult judge(const CompletionRequest& request) const;

    std::unordered_map<std::string, AnswerProfile> by_question_;
    std::unordered_map<std::string, std::string> meaning_of_;
    std::uint64_t seed_;
    std::atomic<std::size_t> calls_{0};
};

/// Content-addressed response cache in front of another backend. The key is
/// the SHA-256 of the canonicalised request (backend id, model, messages,
/// temperature, sample_index, max_tokens, logprob flag). Entries are written
/// atomically, so concurrent readers never see a partial file.
class CachingBackend final : public GenerationBackend {
public:
    CachingBackend(GenerationBackend& inner, std::filesystem::path cache_root);

    CompletionResult complete(const CompletionRequest& request) override;
    [[nodiscard]] std::string id() const override { return inner_.id(); }

    [[nodiscard]] std::string cache_key(const CompletionRequest& request) const;
    [[nodiscard]] std::size_t hits() const noexcept { return hits_.load(); }
    [[nodiscard]] std::size_t misses() const noexcept { return misses_.load(); }

private:
    GenerationBackend& inner_;
    std::filesystem::path root_;
    std::atomic<std::size_t> hits_{0};
    std::atomic<std::size_t> misses_{0};
};

struct GatewayConfig {
    std::string base_url = "https://api.openai.com/v1";
    std::string api_key_env = "OPENAI_API_KEY";
    std::chrono::seconds timeout{60};
};

/// Chat-completions HTTP gateway. Sends one completion per request with
/// logprobs enabled; 408/429/5xx and connection failures raise
/// TransientError, other non-2xx statuses raise BackendError.
class HttpGateway final : public GenerationBackend {
public:
    explicit HttpGateway(GatewayConfig config);
    /// Explicit key, bypassing the environment.
    HttpGateway(GatewayConfig config, std::string api_key);

    CompletionResult complete(const CompletionRequest& request) override;
    [[nodiscard]] std::string id() const override { return "gateway:" + config_.base_url; }

    /// Request body sent for `request`, exposed for tests.
    [[nodiscard]] static std::string request_body(const CompletionRequest& request);
    /// Parses a chat-completions response body.
    [[nodiscard]] static CompletionResult parse_response(const std::string& body);

private:
    GatewayConfig config_;
    std::string api_key_;
};

}  // namespace sement
