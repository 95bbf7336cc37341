#include "sement/run.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <sstream>

#include "codec.hpp"
#include "sement/digest.hpp"
#include "sement/error.hpp"

namespace sement {

namespace fs = std::filesystem;
using detail::json;

std::string_view to_string(Stage s) noexcept {
    switch (s) {
        case Stage::Generate: return "generate";
        case Stage::Cluster: return "cluster";
        case Stage::Metrics: return "metrics";
        case Stage::Score: return "score";
        case Stage::Evaluate: return "evaluate";
    }
    return "?";
}

std::optional<Stage> parse_stage(std::string_view name) noexcept {
    for (auto s : kStageOrder) {
        if (to_string(s) == name) return s;
    }
    return std::nullopt;
}

std::optional<Stage> predecessor(Stage s) noexcept {
    for (std::size_t i = 1; i < kStageOrder.size(); ++i) {
        if (kStageOrder[i] == s) return kStageOrder[i - 1];
    }
    return std::nullopt;
}

bool RunManifest::complete(Stage s) const {
    auto it = stage_status.find(s);
    return it != stage_status.end() && it->second == StageStatus::Complete;
}

RunManifest make_manifest(std::string run_id, std::string corpus_hash, GenerationConfig config,
                          std::string config_digest, std::string created_at) {
    RunManifest m;
    m.run_id = std::move(run_id);
    m.corpus_hash = std::move(corpus_hash);
    m.generation_config = std::move(config);
    m.config_digest = std::move(config_digest);
    m.created_at = std::move(created_at);
    for (auto s : kStageOrder) m.stage_status[s] = StageStatus::Pending;
    return m;
}

std::string stage_file_name(Stage s) { return std::string(to_string(s)) + ".jsonl"; }

std::string encode_manifest(const RunManifest& m) {
    json status = json::object();
    json digests = json::object();
    for (auto s : kStageOrder) {
        status[std::string(to_string(s))] = m.complete(s) ? "complete" : "pending";
        if (auto it = m.stage_digest.find(s); it != m.stage_digest.end()) {
            digests[std::string(to_string(s))] = it->second;
        }
    }
    json j = {
        {"run_id", m.run_id},
        {"corpus_hash", m.corpus_hash},
        {"generation_config", detail::encode_generation_config(m.generation_config)},
        {"config_digest", m.config_digest},
        {"created_at", m.created_at},
        {"stage_status", status},
        {"stage_digest", digests},
    };
    return j.dump(2) + "\n";
}

RunManifest decode_manifest(std::string_view text) {
    constexpr std::string_view ctx = "manifest";
    const json j = detail::parse_json(text, ctx);
    RunManifest m;
    m.run_id = detail::require<std::string>(j, "run_id", ctx);
    m.corpus_hash = detail::require<std::string>(j, "corpus_hash", ctx);
    m.generation_config = detail::decode_generation_config(
        detail::require<json>(j, "generation_config", ctx), GenerationConfig{});
    m.config_digest = detail::optional_field<std::string>(j, "config_digest", ctx).value_or("");
    m.created_at = detail::optional_field<std::string>(j, "created_at", ctx).value_or("");
    const json status = detail::require<json>(j, "stage_status", ctx);
    for (auto s : kStageOrder) {
        const auto v = detail::optional_field<std::string>(status, std::string(to_string(s)).c_str(), ctx);
        if (v && *v != "complete" && *v != "pending") {
            throw ValidationError("manifest: unknown status '" + *v + "' for stage " +
                                  std::string(to_string(s)));
        }
        m.stage_status[s] = (v && *v == "complete") ? StageStatus::Complete : StageStatus::Pending;
    }
    if (auto it = j.find("stage_digest"); it != j.end() && it->is_object()) {
        for (auto s : kStageOrder) {
            if (auto d = it->find(std::string(to_string(s))); d != it->end()) {
                m.stage_digest[s] = d->get<std::string>();
            }
        }
    }
    // Completed stages must form a prefix of the stage order.
    bool gap = false;
    for (auto s : kStageOrder) {
        if (!m.complete(s)) {
            gap = true;
        } else if (gap) {
            throw ValidationError("manifest: stage " + std::string(to_string(s)) +
                                  " is complete but a predecessor is pending");
        }
    }
    return m;
}

namespace {

std::string stage_header(Stage s, const std::string& corpus_hash) {
    json h = {{"stage", to_string(s)}, {"schema", kStageSchemaVersion}, {"corpus_hash", corpus_hash}};
    return detail::dump_line(h);
}

}  // namespace

RunManifest persist_stage(const fs::path& run_dir, RunManifest run, Stage stage,
                          std::span<const std::string> payload, bool overwrite) {
    if (auto pred = predecessor(stage); pred && !run.complete(*pred)) {
        throw StageError(std::string(to_string(*pred)) + " pending");
    }
    if (run.complete(stage) && !overwrite) {
        throw StageError(std::string(to_string(stage)) +
                         " already complete; pass the overwrite flag to replace it");
    }

    std::string bytes = stage_header(stage, run.corpus_hash);
    bytes.push_back('\n');
    for (const auto& rec : payload) {
        if (rec.find('\n') != std::string::npos) {
            throw ValidationError("stage record contains a newline");
        }
        bytes += rec;
        bytes.push_back('\n');
    }
    atomic_write(run_dir / stage_file_name(stage), bytes);

    bool downstream = false;
    for (auto s : kStageOrder) {
        if (downstream) {
            run.stage_status[s] = StageStatus::Pending;
            run.stage_digest.erase(s);
        }
        if (s == stage) downstream = true;
    }
    run.stage_status[stage] = StageStatus::Complete;
    run.stage_digest[stage] = sha256_hex(bytes);
    atomic_write(run_dir / kManifestFile, encode_manifest(run));
    return run;
}

RunDirectory::RunDirectory(fs::path dir, RunManifest manifest)
    : dir_(std::move(dir)), manifest_(std::move(manifest)) {}

RunDirectory RunDirectory::create(const fs::path& runs_root, RunManifest manifest,
                                  std::string_view corpus_bytes) {
    if (manifest.run_id.empty() || manifest.run_id.find('/') != std::string::npos ||
        manifest.run_id == "." || manifest.run_id == "..") {
        throw ConfigError("invalid run id '" + manifest.run_id + "'");
    }
    if (sha256_hex(corpus_bytes) != manifest.corpus_hash) {
        throw ValidationError("corpus hash does not match the corpus bytes");
    }
    const fs::path dir = runs_root / manifest.run_id;
    if (fs::exists(dir / kManifestFile)) {
        throw StageError("run " + manifest.run_id + " already exists at " + dir.string());
    }
    fs::create_directories(dir);
    atomic_write(dir / kCorpusFile, corpus_bytes);
    atomic_write(dir / kManifestFile, encode_manifest(manifest));
    return RunDirectory(dir, std::move(manifest));
}

RunDirectory RunDirectory::open(const fs::path& runs_root, std::string_view run_id) {
    return open(runs_root / std::string(run_id));
}

RunDirectory RunDirectory::open(const fs::path& run_dir) {
    if (!fs::exists(run_dir / kManifestFile)) {
        throw NotFoundError("no run at " + run_dir.string() + " (run `ingest` first)");
    }
    RunManifest m = decode_manifest(read_file(run_dir / kManifestFile));
    const std::string actual = sha256_file(run_dir / kCorpusFile);
    if (actual != m.corpus_hash) {
        throw ValidationError("run " + m.run_id + ": corpus hash mismatch (manifest " +
                              m.corpus_hash + ", corpus file " + actual + ")");
    }
    return RunDirectory(run_dir, std::move(m));
}

std::vector<Question> RunDirectory::questions() const {
    std::istringstream in(read_file(dir_ / kCorpusFile));
    auto qs = parse_corpus(in);
    const fs::path labels = dir_ / kClassificationFile;
    if (fs::exists(labels)) {
        std::istringstream lin(read_file(labels));
        std::string line;
        bool header = true;
        std::map<std::string, Category> by_id;
        while (std::getline(lin, line)) {
            if (line.empty()) continue;
            const json j = detail::parse_json(line, "classification");
            if (header) {
                if (j.value("corpus_hash", "") != manifest_.corpus_hash) {
                    throw ValidationError("classification file belongs to a different corpus");
                }
                header = false;
                continue;
            }
            const auto cat = j.at("category").get<std::string>();
            by_id[j.at("question_id").get<std::string>()] =
                cat == "reasoning" ? Category::Reasoning : Category::Knowledge;
        }
        for (auto& q : qs) {
            if (auto it = by_id.find(q.id); it != by_id.end()) q.category = it->second;
        }
    }
    return qs;
}

std::vector<Question> RunDirectory::eligible_questions() const {
    const auto qs = questions();
    return filter_eligible(qs);
}

void RunDirectory::persist(Stage stage, std::span<const std::string> records, bool overwrite) {
    manifest_ = persist_stage(dir_, manifest_, stage, records, overwrite);
}

std::vector<std::string> RunDirectory::read_stage(Stage stage) const {
    if (!manifest_.complete(stage)) {
        throw StageError(std::string(to_string(stage)) + " pending (run `" +
                         std::string(to_string(stage)) + "` first)");
    }
    const std::string bytes = read_file(dir_ / stage_file_name(stage));
    if (auto it = manifest_.stage_digest.find(stage);
        it != manifest_.stage_digest.end() && it->second != sha256_hex(bytes)) {
        throw ValidationError("stage file " + stage_file_name(stage) +
                              " does not match the digest recorded in the manifest");
    }
    std::istringstream in(bytes);
    std::string line;
    if (!std::getline(in, line)) throw ValidationError(stage_file_name(stage) + ": missing header");
    const json header = detail::parse_json(line, stage_file_name(stage));
    if (header.value("stage", "") != to_string(stage) ||
        header.value("corpus_hash", "") != manifest_.corpus_hash) {
        throw ValidationError(stage_file_name(stage) + ": header does not match this run");
    }
    std::vector<std::string> out;
    while (std::getline(in, line)) {
        if (!line.empty()) out.push_back(line);
    }
    return out;
}

void RunDirectory::write_artifact(std::string_view name, std::string_view bytes) const {
    const fs::path p = dir_ / std::string(name);
    fs::create_directories(p.parent_path());
    atomic_write(p, bytes);
}

void RunDirectory::write_classification(std::span<const Question> questions) const {
    std::string bytes = detail::dump_line(json{{"corpus_hash", manifest_.corpus_hash}}) + "\n";
    for (const auto& q : questions) {
        if (q.category == Category::Unlabelled) continue;
        bytes += detail::dump_line(json{{"question_id", q.id}, {"category", to_string(q.category)}});
        bytes += "\n";
    }
    atomic_write(dir_ / kClassificationFile, bytes);
}

RunLock::RunLock(const fs::path& run_dir) : path_(run_dir / kLockFile) {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
        throw StageError("run directory " + run_dir.string() +
                         " is locked by another command (remove " + path_.string() +
                         " if no command is running)");
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
}

RunLock::~RunLock() {
    std::error_code ec;
    fs::remove(path_, ec);
}

}  // namespace sement
