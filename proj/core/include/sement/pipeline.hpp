#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sement/backends.hpp"
#include "sement/entail.hpp"
#include "sement/eval.hpp"
#include "sement/genclient.hpp"
#include "sement/run.hpp"

namespace sement {

/// Every knob of a pipeline run. Serialisable; the manifest carries a digest
/// of the result-affecting subset (see config_digest).
struct PipelineConfig {
    std::filesystem::path corpus;
    std::filesystem::path runs_root = "runs";
    /// Derived from the corpus hash and config digest when empty.
    std::string run_id;
    /// Defaults to <runs_root>/.cache.
    std::filesystem::path cache_root;
    bool use_cache = true;

    GenerationConfig generation;
    /// "live" (HTTP gateway) or "stub" (seeded simulated model).
    std::string backend = "stub";
    std::filesystem::path stub_profiles;
    std::uint64_t stub_seed = 7;
    GatewayConfig gateway;
    std::size_t max_in_flight = 8;
    /// "llm" or an oracle rule: "exact", "normalized-exact", "scripted:<file>".
    std::string judge = "llm";
    bool classify = false;

    int bootstrap_resamples = kDefaultResamples;
    std::uint64_t seed = kDefaultSeed;
    std::vector<std::string> subgroups = {"all", "part", "category", "length", "temperature"};
    /// Largest-cluster definition paired with the entropy metrics.
    std::string cluster_definition = "primary";

    std::string review_bind = "127.0.0.1:8750";
    std::filesystem::path review_tokens;
    int review_size = 105;
    std::optional<std::filesystem::path> review_static_dir;

    /// ISO-8601 creation time for new runs; falls back to SOURCE_DATE_EPOCH,
    /// then the wall clock.
    std::string created_at;
};

std::string encode_config(const PipelineConfig& config);
/// The copy stored in a run directory: encode_config without runs_root,
/// run_id and cache_root.
std::string encode_run_config(const PipelineConfig& config);
inline constexpr std::string_view kRunConfigFile = "config.json";
/// Applies the fields present in `json` on top of `base`.
PipelineConfig decode_config(std::string_view json, PipelineConfig base = {});
/// SHA-256 over the fields that can change stage outputs.
std::string config_digest(const PipelineConfig& config);
std::optional<Definition> parse_definition(std::string_view name) noexcept;

enum class StageOutcome { Ran, AlreadyComplete };

/// Drives the stages of one run directory. Commands are serialised per run
/// by a lock file.
class Pipeline {
public:
    explicit Pipeline(PipelineConfig config);
    /// Injects backends (tests, experiments). `judge` null means "use config.judge".
    Pipeline(PipelineConfig config, std::shared_ptr<GenerationBackend> backend,
             std::shared_ptr<EntailmentBackend> judge = nullptr);
    ~Pipeline();

    /// Creates the run (validating and copying the corpus) or opens it when
    /// it already exists with the same corpus.
    RunDirectory ingest();
    StageOutcome run(Stage stage, bool overwrite = false);
    /// ingest followed by every stage.
    void run_all(bool overwrite = false);

    [[nodiscard]] RunDirectory open_run() const;
    [[nodiscard]] const PipelineConfig& config() const noexcept { return config_; }
    [[nodiscard]] std::string run_id() const;
    [[nodiscard]] std::filesystem::path run_dir() const;

private:
    void stage_generate(RunDirectory& run, bool overwrite);
    void stage_cluster(RunDirectory& run, bool overwrite);
    void stage_metrics(RunDirectory& run, bool overwrite);
    void stage_score(RunDirectory& run, bool overwrite);
    void stage_evaluate(RunDirectory& run, bool overwrite);

    GenerationBackend& generation_backend(const std::vector<Question>& questions);
    EntailmentBackend& entailment_backend(const std::vector<Question>& questions);

    PipelineConfig config_;
    std::shared_ptr<GenerationBackend> backend_;
    std::unique_ptr<CachingBackend> cache_;
    std::shared_ptr<EntailmentBackend> judge_;
    mutable std::string run_id_;
};

/// Rebuilds evaluation inputs from a run's metrics and score stages.
std::vector<EvalItem> load_eval_items(const RunDirectory& run, Definition cluster_definition);

/// Time string for new manifests, honouring SOURCE_DATE_EPOCH.
std::string default_timestamp();

}  // namespace sement
