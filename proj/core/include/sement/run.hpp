#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sement/dataset.hpp"
#include "sement/genclient.hpp"

namespace sement {

enum class Stage { Generate, Cluster, Metrics, Score, Evaluate };

inline constexpr std::array kStageOrder{Stage::Generate, Stage::Cluster, Stage::Metrics,
                                        Stage::Score, Stage::Evaluate};

std::string_view to_string(Stage s) noexcept;
std::optional<Stage> parse_stage(std::string_view name) noexcept;
/// The stage that must be complete before `s` may run; nullopt for the first.
std::optional<Stage> predecessor(Stage s) noexcept;

enum class StageStatus { Pending, Complete };

struct RunManifest {
    std::string run_id;
    std::string corpus_hash;
    GenerationConfig generation_config;
    std::string config_digest;
    std::string created_at;
    std::map<Stage, StageStatus> stage_status;
    /// SHA-256 of each completed stage file.
    std::map<Stage, std::string> stage_digest;

    [[nodiscard]] bool complete(Stage s) const;
    friend bool operator==(const RunManifest&, const RunManifest&) = default;
};

/// Fresh manifest with every stage pending.
RunManifest make_manifest(std::string run_id, std::string corpus_hash, GenerationConfig config,
                          std::string config_digest, std::string created_at);

inline constexpr std::string_view kManifestFile = "manifest.json";
inline constexpr std::string_view kCorpusFile = "corpus.jsonl";
inline constexpr std::string_view kClassificationFile = "classification.jsonl";
inline constexpr std::string_view kLockFile = ".lock";
inline constexpr int kStageSchemaVersion = 1;

std::string stage_file_name(Stage s);

std::string encode_manifest(const RunManifest& m);
RunManifest decode_manifest(std::string_view json);

/// Writes `payload` (one JSON record per element) as the stage file under
/// `run_dir`, prefixed with a header naming the stage and corpus hash, then
/// marks the stage complete and rewrites the manifest. Overwriting a
/// complete stage requires `overwrite` and resets every later stage to
/// pending.
RunManifest persist_stage(const std::filesystem::path& run_dir, RunManifest run, Stage stage,
                          std::span<const std::string> payload, bool overwrite = false);

/// A run directory on disk: manifest, verbatim corpus copy, stage files.
class RunDirectory {
public:
    /// Creates `runs_root/<manifest.run_id>` and copies the corpus bytes.
    /// The corpus hash in the manifest must match the copied bytes.
    static RunDirectory create(const std::filesystem::path& runs_root, RunManifest manifest,
                               std::string_view corpus_bytes);
    /// Opens an existing run and re-verifies the corpus hash.
    static RunDirectory open(const std::filesystem::path& runs_root, std::string_view run_id);
    static RunDirectory open(const std::filesystem::path& run_dir);

    [[nodiscard]] const std::filesystem::path& path() const noexcept { return dir_; }
    [[nodiscard]] const RunManifest& manifest() const noexcept { return manifest_; }

    /// Corpus questions with any stored classification labels applied.
    [[nodiscard]] std::vector<Question> questions() const;
    [[nodiscard]] std::vector<Question> eligible_questions() const;

    void persist(Stage stage, std::span<const std::string> records, bool overwrite = false);
    /// Record lines of a complete stage, after verifying header and digest.
    [[nodiscard]] std::vector<std::string> read_stage(Stage stage) const;

    /// Atomically writes an auxiliary file inside the run directory.
    void write_artifact(std::string_view name, std::string_view bytes) const;
    void write_classification(std::span<const Question> questions) const;

private:
    RunDirectory(std::filesystem::path dir, RunManifest manifest);

    std::filesystem::path dir_;
    RunManifest manifest_;
};

/// Exclusive per-run lock file, removed on destruction. Throws StageError
/// when another command holds the lock.
class RunLock {
public:
    explicit RunLock(const std::filesystem::path& run_dir);
    ~RunLock();
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    std::filesystem::path path_;
};

}  // namespace sement
