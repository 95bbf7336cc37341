#pragma once

#include <atomic>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "sement/genclient.hpp"

namespace sement {

enum class Verdict { Entails, NotEntails };

struct EntailmentVerdict {
    std::string premise;
    std::string hypothesis;
    std::string question_context;
    Verdict directed = Verdict::NotEntails;
    std::string backend_id;

    friend bool operator==(const EntailmentVerdict&, const EntailmentVerdict&) = default;
};

/// Decides whether `premise` entails `hypothesis` given the question.
/// Implementations must be deterministic.
class EntailmentBackend {
public:
    virtual ~EntailmentBackend() = default;
    virtual Verdict judge(std::string_view premise, std::string_view hypothesis,
                          std::string_view context) = 0;
    [[nodiscard]] virtual std::string id() const = 0;
};

class ExactOracle final : public EntailmentBackend {
public:
    Verdict judge(std::string_view premise, std::string_view hypothesis,
                  std::string_view context) override;
    [[nodiscard]] std::string id() const override { return "exact"; }
};

/// Equal after trimming, lower-casing ASCII and collapsing whitespace runs.
class NormalizedExactOracle final : public EntailmentBackend {
public:
    Verdict judge(std::string_view premise, std::string_view hypothesis,
                  std::string_view context) override;
    [[nodiscard]] std::string id() const override { return "normalized-exact"; }
};

std::string normalize_answer(std::string_view text);

/// Table-driven oracle. Lines of the scripted file are JSON objects, either
///   {"premise": ..., "hypothesis": ..., "verdict": "entailment"|"neutral"|"contradiction"}
/// for a directed verdict, or
///   {"equivalent": [text, text, ...]}
/// declaring a class of mutually entailing answers. Texts are compared after
/// normalize_answer. Pairs not covered fall back to normalized-exact.
class ScriptedOracle final : public EntailmentBackend {
public:
    ScriptedOracle() = default;
    static ScriptedOracle from_file(const std::filesystem::path& path);

    void set(std::string_view premise, std::string_view hypothesis, Verdict v);
    void add_equivalence_class(const std::vector<std::string>& texts);

    Verdict judge(std::string_view premise, std::string_view hypothesis,
                  std::string_view context) override;
    [[nodiscard]] std::string id() const override { return id_; }

private:
    std::map<std::pair<std::string, std::string>, Verdict> directed_;
    std::map<std::string, std::size_t> class_of_;
    std::size_t next_class_ = 0;
    std::string id_ = "scripted";
};

class FunctionOracle final : public EntailmentBackend {
public:
    using Fn = std::function<Verdict(std::string_view, std::string_view, std::string_view)>;
    explicit FunctionOracle(Fn fn, std::string id = "function")
        : fn_(std::move(fn)), id_(std::move(id)) {}

    Verdict judge(std::string_view premise, std::string_view hypothesis,
                  std::string_view context) override;
    [[nodiscard]] std::string id() const override { return id_; }
    [[nodiscard]] std::size_t calls() const noexcept { return calls_.load(); }

private:
    Fn fn_;
    std::string id_;
    std::atomic<std::size_t> calls_{0};
};

/// NLI label set accepted from an LLM judge.
enum class NliLabel { Entailment, Neutral, Contradiction };

/// Accepts exactly one of the three labels, case-insensitively, optionally
/// surrounded by whitespace and followed by a period.
std::optional<NliLabel> parse_judge_reply(std::string_view reply);

/// Entailment judged by a generation backend using the `entail-v1` prompt.
/// Runs at `temperature`, which must be 0 unless explicitly allowed.
class LlmJudge final : public EntailmentBackend {
public:
    LlmJudge(GenerationBackend& backend, std::string model_id, RetryPolicy retry = {},
             double temperature = 0.0, bool allow_nonzero_temperature = false);

    Verdict judge(std::string_view premise, std::string_view hypothesis,
                  std::string_view context) override;
    [[nodiscard]] std::string id() const override;

private:
    GenerationBackend& backend_;
    std::string model_id_;
    RetryPolicy retry_;
    double temperature_;
};

/// Builds an oracle from its rule name: "exact", "normalized-exact" or
/// "scripted:<file>".
std::unique_ptr<EntailmentBackend> make_oracle(std::string_view rule);

/// Single directed query. Byte-equal texts short-circuit to Entails without
/// consulting the backend. Empty texts are a ValidationError.
EntailmentVerdict entails(std::string_view premise, std::string_view hypothesis,
                          std::string_view context, EntailmentBackend& backend);

/// entails(a, b) and entails(b, a).
bool bidirectional(std::string_view a, std::string_view b, std::string_view context,
                   EntailmentBackend& backend);

/// Memoising front end shared by clustering and scoring. Thread-safe.
class EntailmentJudge {
public:
    explicit EntailmentJudge(EntailmentBackend& backend) : backend_(backend) {}

    EntailmentVerdict entails(std::string_view premise, std::string_view hypothesis,
                              std::string_view context);
    /// Appends both directed verdicts to `log` when given.
    bool bidirectional(std::string_view a, std::string_view b, std::string_view context,
                       std::vector<EntailmentVerdict>* log = nullptr);

    [[nodiscard]] std::size_t backend_calls() const noexcept { return backend_calls_.load(); }
    [[nodiscard]] std::string backend_id() const { return backend_.id(); }

private:
    using Key = std::tuple<std::string, std::string, std::string>;

    EntailmentBackend& backend_;
    std::mutex mutex_;
    std::map<Key, Verdict> cache_;
    std::atomic<std::size_t> backend_calls_{0};
};

}  // namespace sement
