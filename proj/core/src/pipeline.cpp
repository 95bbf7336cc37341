#include "sement/pipeline.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <sstream>

#include "codec.hpp"
#include "parallel.hpp"
#include "sement/cluster.hpp"
#include "sement/digest.hpp"
#include "sement/metrics.hpp"
#include "sement/report.hpp"
#include "sement/scoring.hpp"
#include "sement/stages.hpp"

namespace sement {

using detail::json;

namespace fs = std::filesystem;

std::optional<Definition> parse_definition(std::string_view name) noexcept {
    for (auto d : {Definition::Primary, Definition::Strict, Definition::Majority, Definition::Relaxed}) {
        if (to_string(d) == name) return d;
    }
    return std::nullopt;
}

std::string default_timestamp() {
    std::time_t t = 0;
    if (const char* sde = std::getenv("SOURCE_DATE_EPOCH"); sde != nullptr && *sde != '\0') {
        char* end = nullptr;
        const long long v = std::strtoll(sde, &end, 10);
        if (end == nullptr || *end != '\0' || v < 0) throw ConfigError("SOURCE_DATE_EPOCH must be a non-negative integer");
        t = static_cast<std::time_t>(v);
    } else {
        t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    }
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// ---------------------------------------------------------------------------
// Config codec

namespace {

json config_json(const PipelineConfig& c) {
    return json{
        {"corpus", c.corpus.string()},
        {"runs_root", c.runs_root.string()},
        {"run_id", c.run_id},
        {"cache_root", c.cache_root.string()},
        {"use_cache", c.use_cache},
        {"generation", detail::encode_generation_config(c.generation)},
        {"backend", c.backend},
        {"stub_profiles", c.stub_profiles.string()},
        {"stub_seed", c.stub_seed},
        {"gateway",
         {{"base_url", c.gateway.base_url},
          {"api_key_env", c.gateway.api_key_env},
          {"timeout_seconds", c.gateway.timeout.count()}}},
        {"max_in_flight", c.max_in_flight},
        {"judge", c.judge},
        {"classify", c.classify},
        {"bootstrap_resamples", c.bootstrap_resamples},
        {"seed", c.seed},
        {"subgroups", c.subgroups},
        {"cluster_definition", c.cluster_definition},
        {"review_bind", c.review_bind},
        {"review_tokens", c.review_tokens.string()},
        {"review_size", c.review_size},
        {"review_static_dir", c.review_static_dir ? json(c.review_static_dir->string()) : json(nullptr)},
        {"created_at", c.created_at},
    };
}

template <class T>
void take(const json& j, const char* field, T& out) {
    if (auto v = detail::optional_field<T>(j, field, "config")) out = std::move(*v);
}

void take_path(const json& j, const char* field, fs::path& out) {
    if (auto v = detail::optional_field<std::string>(j, field, "config")) out = *v;
}

}  // namespace

std::string encode_config(const PipelineConfig& config) { return config_json(config).dump(2) + "\n"; }

std::string encode_run_config(const PipelineConfig& config) {
    json j = config_json(config);
    // Location fields belong to the invocation, not the run.
    for (const char* key : {"runs_root", "run_id", "cache_root"}) j.erase(key);
    return j.dump(2) + "\n";
}

PipelineConfig decode_config(std::string_view text, PipelineConfig base) {
    json j;
    try {
        j = detail::parse_json(text, "config");
    } catch (const ValidationError& e) {
        throw ConfigError(e.what());
    }
    if (!j.is_object()) throw ConfigError("config: expected a JSON object");
    static const std::vector<std::string> known = {
        "corpus", "runs_root", "run_id", "cache_root", "use_cache", "generation", "backend",
        "stub_profiles", "stub_seed", "gateway", "max_in_flight", "judge", "classify",
        "bootstrap_resamples", "seed", "subgroups", "cluster_definition", "review_bind",
        "review_tokens", "review_size", "review_static_dir", "created_at"};
    for (const auto& [key, value] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw ConfigError("config: unknown key '" + key + "'");
        }
    }
    PipelineConfig c = std::move(base);
    try {
        take_path(j, "corpus", c.corpus);
        take_path(j, "runs_root", c.runs_root);
        take(j, "run_id", c.run_id);
        take_path(j, "cache_root", c.cache_root);
        take(j, "use_cache", c.use_cache);
        if (auto g = j.find("generation"); g != j.end()) {
            c.generation = detail::decode_generation_config(*g, c.generation);
        }
        take(j, "backend", c.backend);
        take_path(j, "stub_profiles", c.stub_profiles);
        take(j, "stub_seed", c.stub_seed);
        if (auto g = j.find("gateway"); g != j.end()) {
            take(*g, "base_url", c.gateway.base_url);
            take(*g, "api_key_env", c.gateway.api_key_env);
            if (auto t = detail::optional_field<long long>(*g, "timeout_seconds", "config")) {
                c.gateway.timeout = std::chrono::seconds(*t);
            }
        }
        take(j, "max_in_flight", c.max_in_flight);
        take(j, "judge", c.judge);
        take(j, "classify", c.classify);
        take(j, "bootstrap_resamples", c.bootstrap_resamples);
        take(j, "seed", c.seed);
        take(j, "subgroups", c.subgroups);
        take(j, "cluster_definition", c.cluster_definition);
        take(j, "review_bind", c.review_bind);
        take_path(j, "review_tokens", c.review_tokens);
        take(j, "review_size", c.review_size);
        if (auto v = detail::optional_field<std::string>(j, "review_static_dir", "config")) {
            c.review_static_dir = fs::path(*v);
        }
        take(j, "created_at", c.created_at);
    } catch (const ValidationError& e) {
        throw ConfigError(e.what());
    }
    return c;
}

std::string config_digest(const PipelineConfig& c) {
    // Paths and serving options do not change stage outputs; the stub
    // profiles enter by content so moving the file keeps the digest.
    json j = {
        {"generation", detail::encode_generation_config(c.generation)},
        {"backend", c.backend},
        {"judge", c.judge},
        {"classify", c.classify},
        {"bootstrap_resamples", c.bootstrap_resamples},
        {"seed", c.seed},
        {"subgroups", c.subgroups},
        {"cluster_definition", c.cluster_definition},
    };
    if (c.backend == "stub") {
        j["stub_seed"] = c.stub_seed;
        j["stub_profiles"] = c.stub_profiles.empty() ? std::string() : sha256_file(c.stub_profiles);
    } else {
        j["gateway"] = c.gateway.base_url;
    }
    if (c.judge.rfind("scripted:", 0) == 0) j["judge_file"] = sha256_file(c.judge.substr(9));
    return sha256_hex(j.dump());
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

void check_config(const PipelineConfig& c, bool injected_backend) {
    validate(c.generation);
    if (c.backend != "stub" && c.backend != "live") {
        throw ConfigError("backend must be 'stub' or 'live', not '" + c.backend + "'");
    }
    if (!injected_backend && c.backend == "stub" && c.stub_profiles.empty()) {
        throw ConfigError("the stub backend needs a profile file (stub_profiles)");
    }
    if (!parse_definition(c.cluster_definition)) {
        throw ConfigError("unknown cluster definition '" + c.cluster_definition +
                          "' (expected primary, strict, majority or relaxed)");
    }
    for (const auto& s : c.subgroups) {
        if (!parse_subgroup(s)) throw ConfigError("unknown subgroup '" + s + "'");
    }
    if (c.bootstrap_resamples <= 0) throw ConfigError("bootstrap_resamples must be positive");
    if (c.max_in_flight == 0) throw ConfigError("max_in_flight must be at least 1");
}

std::map<std::string, Question> by_id(const std::vector<Question>& qs) {
    std::map<std::string, Question> out;
    for (const auto& q : qs) out.emplace(q.id, q);
    return out;
}

const Question& lookup(const std::map<std::string, Question>& qs, const std::string& id) {
    auto it = qs.find(id);
    if (it == qs.end()) throw ValidationError("stage record for unknown question '" + id + "'");
    return it->second;
}

}  // namespace

Pipeline::Pipeline(PipelineConfig config) : Pipeline(std::move(config), nullptr, nullptr) {}

Pipeline::Pipeline(PipelineConfig config, std::shared_ptr<GenerationBackend> backend,
                   std::shared_ptr<EntailmentBackend> judge)
    : config_(std::move(config)), backend_(std::move(backend)), judge_(std::move(judge)) {
    if (config_.cache_root.empty()) config_.cache_root = config_.runs_root / ".cache";
    run_id_ = config_.run_id;
}

Pipeline::~Pipeline() = default;

std::string Pipeline::run_id() const {
    if (run_id_.empty()) {
        const std::string corpus_hash = sha256_file(config_.corpus);
        run_id_ = "run-" + sha256_hex(corpus_hash + config_digest(config_)).substr(0, 12);
    }
    return run_id_;
}

fs::path Pipeline::run_dir() const { return config_.runs_root / run_id(); }

RunDirectory Pipeline::open_run() const { return RunDirectory::open(run_dir()); }

RunDirectory Pipeline::ingest() {
    check_config(config_, backend_ != nullptr);
    const std::string bytes = read_file(config_.corpus);
    std::istringstream in(bytes);
    const auto questions = parse_corpus(in);
    if (filter_eligible(questions).empty()) throw ValidationError("the corpus has no eligible questions");

    const std::string digest = config_digest(config_);
    const fs::path dir = run_dir();
    if (fs::exists(dir / kManifestFile)) {
        auto run = RunDirectory::open(dir);
        if (run.manifest().corpus_hash != sha256_hex(bytes)) {
            throw ConfigError("run " + run_id() + " was created from a different corpus");
        }
        if (run.manifest().config_digest != digest) {
            throw ConfigError("run " + run_id() + " was created with a different configuration");
        }
        return run;
    }

    const std::string created = config_.created_at.empty() ? default_timestamp() : config_.created_at;
    auto run = RunDirectory::create(config_.runs_root,
                                    make_manifest(run_id(), sha256_hex(bytes), config_.generation, digest, created),
                                    bytes);
    run.write_artifact(kRunConfigFile, encode_run_config(config_));
    if (config_.classify) {
        RunLock lock(run.path());
        auto labelled = run.questions();
        auto& backend = generation_backend(labelled);
        const FanOutOptions fan{config_.max_in_flight, {}};
        std::vector<std::size_t> todo;
        for (std::size_t i = 0; i < labelled.size(); ++i) {
            if (labelled[i].eligible() && labelled[i].category == Category::Unlabelled) todo.push_back(i);
        }
        detail::parallel_for(todo.size(), config_.max_in_flight, [&](std::size_t k) {
            auto& q = labelled[todo[k]];
            q.category = classify_question(q, backend, config_.generation.model_id, fan.retry);
        });
        run.write_classification(labelled);
    }
    return run;
}

StageOutcome Pipeline::run(Stage stage, bool overwrite) {
    auto run = open_run();
    RunLock lock(run.path());
    if (run.manifest().config_digest != config_digest(config_)) {
        throw ConfigError("the effective configuration differs from the one run " + run.manifest().run_id +
                          " was created with; start a new run instead");
    }
    if (run.manifest().complete(stage) && !overwrite) return StageOutcome::AlreadyComplete;
    if (auto pred = predecessor(stage); pred && !run.manifest().complete(*pred)) {
        throw StageError(std::string(to_string(stage)) + " needs the " + std::string(to_string(*pred)) +
                         " stage; run `sement " + std::string(to_string(*pred)) + "` first");
    }
    switch (stage) {
        case Stage::Generate: stage_generate(run, overwrite); break;
        case Stage::Cluster: stage_cluster(run, overwrite); break;
        case Stage::Metrics: stage_metrics(run, overwrite); break;
        case Stage::Score: stage_score(run, overwrite); break;
        case Stage::Evaluate: stage_evaluate(run, overwrite); break;
    }
    return StageOutcome::Ran;
}

void Pipeline::run_all(bool overwrite) {
    ingest();
    for (auto s : kStageOrder) run(s, overwrite);
}

GenerationBackend& Pipeline::generation_backend(const std::vector<Question>& questions) {
    if (!backend_) {
        if (config_.backend == "stub") {
            backend_ = std::make_shared<SimulatedBackend>(
                SimulatedBackend::from_profile_file(config_.stub_profiles, questions, config_.stub_seed));
        } else {
            backend_ = std::make_shared<HttpGateway>(config_.gateway);
            // Only live responses are worth caching; the stub is a pure function.
            if (config_.use_cache) cache_ = std::make_unique<CachingBackend>(*backend_, config_.cache_root);
        }
    }
    return cache_ ? static_cast<GenerationBackend&>(*cache_) : *backend_;
}

EntailmentBackend& Pipeline::entailment_backend(const std::vector<Question>& questions) {
    if (!judge_) {
        if (config_.judge == "llm") {
            const auto& g = config_.generation;
            judge_ = std::make_shared<LlmJudge>(generation_backend(questions), g.model_id, RetryPolicy{},
                                                g.entailment_temperature,
                                                g.allow_nonzero_entailment_temperature);
        } else {
            judge_ = make_oracle(config_.judge);
        }
    }
    return *judge_;
}

void Pipeline::stage_generate(RunDirectory& run, bool overwrite) {
    const auto questions = run.eligible_questions();
    auto& backend = generation_backend(run.questions());
    const auto& gen_config = run.manifest().generation_config;
    const FanOutOptions fan{config_.max_in_flight, {}};
    std::vector<std::string> records;
    records.reserve(questions.size());
    for (const auto& q : questions) {
        QuestionGenerations g{q.id, generate_answers(q, gen_config, backend, fan)};
        records.push_back(encode_record(g));
    }
    run.persist(Stage::Generate, records, overwrite);
}

void Pipeline::stage_cluster(RunDirectory& run, bool overwrite) {
    const auto all = run.questions();
    const auto questions = by_id(all);
    const auto gens = read_generations(run);
    EntailmentJudge judge(entailment_backend(all));
    std::vector<std::string> records(gens.size());
    detail::parallel_for(gens.size(), config_.max_in_flight, [&](std::size_t i) {
        const auto& q = lookup(questions, gens[i].question_id);
        records[i] = encode_record(cluster_generations(gens[i].generations, q.text, judge));
    });
    run.persist(Stage::Cluster, records, overwrite);
}

void Pipeline::stage_metrics(RunDirectory& run, bool overwrite) {
    const auto gens = read_generations(run);
    const auto clusterings = read_clusterings(run);
    if (gens.size() != clusterings.size()) throw ValidationError("generate and cluster stages disagree in size");
    const bool logprob_free = run.manifest().generation_config.logprob_free;
    std::vector<std::string> records;
    for (std::size_t i = 0; i < gens.size(); ++i) {
        if (gens[i].question_id != clusterings[i].question_id) {
            throw ValidationError("generate and cluster stages list questions in a different order");
        }
        records.push_back(encode_record(score_question(gens[i].generations, clusterings[i], logprob_free)));
    }
    run.persist(Stage::Metrics, records, overwrite);
}

void Pipeline::stage_score(RunDirectory& run, bool overwrite) {
    const auto all = run.questions();
    const auto questions = by_id(all);
    const auto gens = read_generations(run);
    const auto clusterings = read_clusterings(run);
    const auto scores = read_scores(run);
    if (gens.size() != clusterings.size() || gens.size() != scores.size()) {
        throw ValidationError("earlier stages disagree in size");
    }
    const bool logprob_free = run.manifest().generation_config.logprob_free;
    EntailmentJudge judge(entailment_backend(all));
    std::vector<std::vector<CorrectnessRecord>> per_question(gens.size());
    detail::parallel_for(gens.size(), config_.max_in_flight, [&](std::size_t i) {
        const auto& q = lookup(questions, gens[i].question_id);
        per_question[i] = score_question_all(gens[i].generations, clusterings[i], scores[i].per_sample_perplexity,
                                             q.reference_answer, q.text, judge, logprob_free);
    });
    std::vector<CorrectnessRecord> records;
    for (auto& v : per_question) {
        for (auto& r : v) records.push_back(std::move(r));
    }
    sort_records(records);
    run.persist(Stage::Score, encode_records<CorrectnessRecord>(records), overwrite);
}

void Pipeline::stage_evaluate(RunDirectory& run, bool overwrite) {
    const auto definition = parse_definition(config_.cluster_definition);
    if (!definition) throw ConfigError("unknown cluster definition '" + config_.cluster_definition + "'");
    const auto items = load_eval_items(run, *definition);
    const EvalOptions options{config_.bootstrap_resamples, config_.seed};
    std::vector<EvalReport> reports;
    for (const auto& name : config_.subgroups) {
        const auto kind = parse_subgroup(name);
        if (!kind) throw ConfigError("unknown subgroup '" + name + "'");
        for (auto& r : stratify(items, *kind, options)) reports.push_back(std::move(r));
    }
    run.persist(Stage::Evaluate, encode_records<EvalReport>(reports), overwrite);
    run.write_artifact("report.txt", render_report(reports));
}

std::vector<EvalItem> load_eval_items(const RunDirectory& run, Definition cluster_definition) {
    const auto questions = run.eligible_questions();
    const auto scores = read_scores(run);
    const auto records = read_correctness(run);
    return join_eval_items(questions, scores, records, cluster_definition,
                           run.manifest().generation_config.answer_temperature);
}

}  // namespace sement
