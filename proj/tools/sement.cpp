// sement: command-line driver for the staged pipeline.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sement/digest.hpp"
#include "sement/pipeline.hpp"
#include "sement/report.hpp"
#include "sement/review.hpp"
#include "sement/stages.hpp"

namespace fs = std::filesystem;
using namespace sement;

namespace {

enum ExitCode : int {
    kOk = 0,
    kOther = 1,
    kConfig = 2,
    kBackend = 3,
    kValidation = 4,
    kStage = 5,
};

/// Every PipelineConfig field as an optional flag; only flags actually
/// given override the config file.
struct Flags {
    std::optional<std::string> config_file;
    std::optional<std::string> corpus;
    std::optional<std::string> runs_root;
    std::optional<std::string> run_id;
    std::optional<std::string> cache_root;
    bool no_cache = false;

    std::optional<std::string> model;
    std::optional<int> samples;
    std::optional<double> temperature;
    std::optional<double> entailment_temperature;
    bool allow_nonzero_entailment_temperature = false;
    std::optional<int> max_tokens;
    std::optional<std::string> prompt_template;
    bool logprob_free = false;

    std::optional<std::string> backend;
    std::optional<std::string> stub_profiles;
    std::optional<std::uint64_t> stub_seed;
    std::optional<std::string> base_url;
    std::optional<std::string> api_key_env;
    std::optional<int> timeout;
    std::optional<std::size_t> max_in_flight;
    std::optional<std::string> judge;
    bool classify = false;

    std::optional<int> resamples;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> subgroups;
    std::optional<std::string> cluster_definition;

    std::optional<std::string> review_bind;
    std::optional<std::string> review_tokens;
    std::optional<int> review_size;
    std::optional<std::string> review_static_dir;
    std::optional<std::string> created_at;

    bool overwrite = false;
};

void add_config_flags(CLI::App& app, Flags& f) {
    app.add_option("--config", f.config_file, "JSON config file; flags override its values");
    app.add_option("--corpus", f.corpus, "Corpus JSONL file");
    app.add_option("--runs-root", f.runs_root, "Directory holding run directories")->envname("SEMENT_RUNS_ROOT");
    app.add_option("--run-id", f.run_id, "Run directory name (derived from corpus and config when omitted)");
    app.add_option("--cache-root", f.cache_root, "Response cache directory (default <runs-root>/.cache)");
    app.add_flag("--no-cache", f.no_cache, "Do not cache live responses");

    app.add_option("--model", f.model, "Model id");
    app.add_option("--samples", f.samples, "Answers sampled per question");
    app.add_option("--temperature", f.temperature, "Answer sampling temperature");
    app.add_option("--entailment-temperature", f.entailment_temperature, "Entailment judge temperature");
    app.add_flag("--allow-nonzero-entailment-temperature", f.allow_nonzero_entailment_temperature);
    app.add_option("--max-tokens", f.max_tokens, "Max tokens per answer");
    app.add_option("--prompt-template", f.prompt_template, "Answer prompt template id");
    app.add_flag("--logprob-free", f.logprob_free, "Discrete semantic entropy only");

    app.add_option("--backend", f.backend, "live or stub")->check(CLI::IsMember({"live", "stub"}));
    app.add_option("--stub-profiles", f.stub_profiles, "Answer profiles for the stub backend");
    app.add_option("--stub-seed", f.stub_seed, "Seed of the stub backend");
    app.add_option("--base-url", f.base_url, "Chat-completions base URL");
    app.add_option("--api-key-env", f.api_key_env, "Environment variable holding the API key");
    app.add_option("--timeout", f.timeout, "HTTP timeout in seconds");
    app.add_option("--max-in-flight", f.max_in_flight, "Concurrent requests");
    app.add_option("--judge", f.judge, "llm, exact, normalized-exact or scripted:<file>");
    app.add_flag("--classify", f.classify, "Label unlabelled questions as knowledge or reasoning at ingest");

    app.add_option("--resamples", f.resamples, "Bootstrap resamples");
    app.add_option("--seed", f.seed, "Bootstrap and review-set seed");
    app.add_option("--subgroups", f.subgroups, "Subgroup splits: all,part,category,length,temperature")
        ->delimiter(',');
    app.add_option("--cluster-definition", f.cluster_definition, "primary, strict, majority or relaxed");

    app.add_option("--review-bind", f.review_bind, "host:port for review-serve");
    app.add_option("--review-tokens", f.review_tokens, "JSON file of bearer token -> reviewer id");
    app.add_option("--review-size", f.review_size, "Questions in the review set");
    app.add_option("--review-static-dir", f.review_static_dir, "Static assets served at /");
    app.add_option("--created-at", f.created_at, "Timestamp recorded in new manifests");
}

PipelineConfig read_config_file(const fs::path& p, PipelineConfig base) {
    try {
        return decode_config(read_file(p), std::move(base));
    } catch (const NotFoundError&) {
        throw ConfigError("config file " + p.string() + " not found");
    }
}

/// Precedence: defaults < the run's stored config < --config file < flags.
PipelineConfig effective_config(const Flags& f) {
    PipelineConfig from_file;
    if (f.config_file) from_file = read_config_file(*f.config_file, {});

    PipelineConfig c;
    const fs::path runs_root = f.runs_root ? fs::path(*f.runs_root) : from_file.runs_root;
    const std::string run_id = f.run_id ? *f.run_id : from_file.run_id;
    if (!run_id.empty()) {
        const fs::path stored = runs_root / run_id / std::string(kRunConfigFile);
        if (fs::exists(stored)) c = decode_config(read_file(stored), c);
    }
    if (f.config_file) c = read_config_file(*f.config_file, c);

    c.runs_root = runs_root;
    c.run_id = run_id;
    if (f.corpus) c.corpus = *f.corpus;
    if (f.cache_root) c.cache_root = *f.cache_root;
    if (f.no_cache) c.use_cache = false;
    if (f.model) c.generation.model_id = *f.model;
    if (f.samples) c.generation.num_samples = *f.samples;
    if (f.temperature) c.generation.answer_temperature = *f.temperature;
    if (f.entailment_temperature) c.generation.entailment_temperature = *f.entailment_temperature;
    if (f.allow_nonzero_entailment_temperature) c.generation.allow_nonzero_entailment_temperature = true;
    if (f.max_tokens) c.generation.max_answer_tokens = *f.max_tokens;
    if (f.prompt_template) c.generation.prompt_template_id = *f.prompt_template;
    if (f.logprob_free) c.generation.logprob_free = true;
    if (f.backend) c.backend = *f.backend;
    if (f.stub_profiles) c.stub_profiles = *f.stub_profiles;
    if (f.stub_seed) c.stub_seed = *f.stub_seed;
    if (f.base_url) c.gateway.base_url = *f.base_url;
    if (f.api_key_env) c.gateway.api_key_env = *f.api_key_env;
    if (f.timeout) c.gateway.timeout = std::chrono::seconds(*f.timeout);
    if (f.max_in_flight) c.max_in_flight = *f.max_in_flight;
    if (f.judge) c.judge = *f.judge;
    if (f.classify) c.classify = true;
    if (f.resamples) c.bootstrap_resamples = *f.resamples;
    if (f.seed) c.seed = *f.seed;
    if (!f.subgroups.empty()) c.subgroups = f.subgroups;
    if (f.cluster_definition) c.cluster_definition = *f.cluster_definition;
    if (f.review_bind) c.review_bind = *f.review_bind;
    if (f.review_tokens) c.review_tokens = *f.review_tokens;
    if (f.review_size) c.review_size = *f.review_size;
    if (f.review_static_dir) c.review_static_dir = fs::path(*f.review_static_dir);
    if (f.created_at) c.created_at = *f.created_at;
    return c;
}

void require_corpus_or_run(const PipelineConfig& c) {
    if (c.corpus.empty() && c.run_id.empty()) {
        throw ConfigError("pass --corpus (or --run-id for an existing run)");
    }
}

int cmd_ingest(const PipelineConfig& c) {
    if (c.corpus.empty()) throw ConfigError("ingest needs --corpus");
    Pipeline p(c);
    const auto run = p.ingest();
    std::cout << "run " << p.run_id() << " at " << run.path().string() << " ("
              << run.eligible_questions().size() << " eligible of " << run.questions().size()
              << " questions)\n";
    return kOk;
}

int cmd_stage(const PipelineConfig& c, Stage stage, bool overwrite) {
    require_corpus_or_run(c);
    Pipeline p(c);
    if (p.run(stage, overwrite) == StageOutcome::AlreadyComplete) {
        std::cerr << to_string(stage) << ": already complete for run " << p.run_id()
                  << "; nothing to do (pass --overwrite to recompute)\n";
    } else {
        std::cout << to_string(stage) << ": complete for run " << p.run_id() << '\n';
    }
    return kOk;
}

int cmd_run_all(const PipelineConfig& c, bool overwrite) {
    if (c.corpus.empty()) throw ConfigError("run needs --corpus");
    Pipeline p(c);
    p.ingest();
    for (auto s : kStageOrder) {
        const auto outcome = p.run(s, overwrite);
        std::cout << to_string(s) << ": " << (outcome == StageOutcome::Ran ? "complete" : "already complete") << '\n';
    }
    std::cout << "run " << p.run_id() << " at " << p.run_dir().string() << '\n';
    return kOk;
}

RunDirectory resolve_run(const PipelineConfig& c, const std::string& ref) {
    // A reference is either a run id under the runs root or a directory path.
    if (fs::exists(c.runs_root / ref / std::string(kManifestFile))) return RunDirectory::open(c.runs_root / ref);
    return RunDirectory::open(fs::path(ref));
}

int cmd_report(const PipelineConfig& c, const std::optional<std::string>& compare, const std::string& format,
               const std::optional<std::string>& roc_file) {
    require_corpus_or_run(c);
    Pipeline p(c);
    const auto run = p.open_run();
    const auto definition = parse_definition(c.cluster_definition);
    if (!definition) throw ConfigError("unknown cluster definition '" + c.cluster_definition + "'");
    auto reports = read_reports(run);

    if (compare) {
        const auto other = resolve_run(c, *compare);
        auto items = load_eval_items(run, *definition);
        auto more = load_eval_items(other, *definition);
        items.insert(items.end(), more.begin(), more.end());
        reports.erase(std::remove_if(reports.begin(), reports.end(),
                                     [](const EvalReport& r) { return r.subgroup == SubgroupKind::Temperature; }),
                      reports.end());
        for (auto& r : stratify(items, SubgroupKind::Temperature, {c.bootstrap_resamples, c.seed})) {
            reports.push_back(std::move(r));
        }
    }
    if (roc_file) {
        const auto items = load_eval_items(run, *definition);
        atomic_write(*roc_file, render_roc_points(items));
    }

    std::optional<ExpertMetrics> expert;
    const fs::path log = run.path() / "review" / "annotations.jsonl";
    if (const auto ids = stored_review_set(run); ids && fs::exists(log)) {
        const auto data = ReviewData::load(run);
        const auto current = AnnotationStore(log).current();
        expert = expert_metrics(current, data, *ids, {c.bootstrap_resamples, c.seed});
    }

    if (format == "json") {
        for (const auto& r : reports) std::cout << encode_record(r) << '\n';
        if (expert) std::cout << encode_expert_metrics(*expert) << '\n';
        return kOk;
    }
    std::cout << "Run " << run.manifest().run_id << " (" << run.manifest().generation_config.model_id
              << ", T=" << run.manifest().generation_config.answer_temperature << ")\n\n";
    std::cout << render_report(reports);
    if (expert) std::cout << "\nExpert validation\n\n" << render_expert_table(*expert);
    return kOk;
}

int cmd_review_serve(const PipelineConfig& c) {
    require_corpus_or_run(c);
    if (c.review_tokens.empty()) throw ConfigError("review-serve needs --review-tokens");
    const auto colon = c.review_bind.rfind(':');
    if (colon == std::string::npos) throw ConfigError("--review-bind must be host:port");
    const std::string host = c.review_bind.substr(0, colon);
    int port = 0;
    try {
        port = std::stoi(c.review_bind.substr(colon + 1));
    } catch (const std::exception&) {
        throw ConfigError("--review-bind must be host:port");
    }

    Pipeline p(c);
    const auto run = p.open_run();
    ReviewServiceConfig rc;
    rc.tokens = load_token_file(c.review_tokens);
    rc.review_set_size = c.review_size;
    rc.seed = c.seed;
    rc.static_dir = c.review_static_dir;
    rc.eval = {c.bootstrap_resamples, c.seed};
    ReviewService service(run, rc);
    std::cout << "serving run " << p.run_id() << " (" << service.review_set().size()
              << " questions) on http://" << c.review_bind << '\n'
              << std::flush;
    if (!service.listen(host, port)) throw ConfigError("cannot bind " + c.review_bind);
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Semantic-entropy uncertainty pipeline"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "sement 0.3.0");
    Flags flags;
    add_config_flags(app, flags);

    auto* ingest = app.add_subcommand("ingest", "Validate the corpus and create the run directory");
    std::vector<std::pair<Stage, CLI::App*>> stage_cmds;
    const std::pair<Stage, const char*> stage_help[] = {
        {Stage::Generate, "Sample answers for every eligible question"},
        {Stage::Cluster, "Group answers by bidirectional entailment"},
        {Stage::Metrics, "Compute semantic entropy, discrete SE and perplexity"},
        {Stage::Score, "Judge correctness of the selected answers"},
        {Stage::Evaluate, "Accuracy and AUROC with confidence intervals per subgroup"},
    };
    for (const auto& [stage, help] : stage_help) {
        auto* sub = app.add_subcommand(std::string(to_string(stage)), help);
        sub->add_flag("--overwrite", flags.overwrite, "Recompute a complete stage and reset later stages");
        stage_cmds.emplace_back(stage, sub);
    }
    auto* run_all = app.add_subcommand("run", "ingest followed by every stage");
    run_all->add_flag("--overwrite", flags.overwrite, "Recompute complete stages");

    auto* report = app.add_subcommand("report", "Render evaluation tables from the stage files");
    std::optional<std::string> compare;
    std::string format = "text";
    std::optional<std::string> roc_file;
    report->add_option("--compare", compare, "Second run (id or directory) for the temperature table");
    report->add_option("--format", format, "text or json")->check(CLI::IsMember({"text", "json"}));
    report->add_option("--roc", roc_file, "Write ROC curve points to this file");

    auto* serve = app.add_subcommand("review-serve", "Serve review bundles and collect annotations");

    for (auto* sub : app.get_subcommands({})) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    try {
        const PipelineConfig config = effective_config(flags);
        if (ingest->parsed()) return cmd_ingest(config);
        for (const auto& [stage, sub] : stage_cmds) {
            if (sub->parsed()) return cmd_stage(config, stage, flags.overwrite);
        }
        if (run_all->parsed()) return cmd_run_all(config, flags.overwrite);
        if (report->parsed()) return cmd_report(config, compare, format, roc_file);
        if (serve->parsed()) return cmd_review_serve(config);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const BackendError& e) {
        std::cerr << "backend error: " << e.what() << '\n';
        return kBackend;
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << '\n';
        return kValidation;
    } catch (const StageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kStage;
    } catch (const NotFoundError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kStage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kOther;
    }
    return kOther;
}
