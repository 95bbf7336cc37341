#include "sement/stages.hpp"

#include <cmath>
#include <limits>

#include "codec.hpp"

namespace sement {

using detail::json;

namespace {

// JSON has no infinities; non-finite values travel as null.
json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double null_as_inf(const json& j) {
    return j.is_null() ? std::numeric_limits<double>::infinity() : j.get<double>();
}

template <class Enum>
Enum parse_enum(const std::string& name, std::initializer_list<Enum> values, std::string_view what) {
    for (auto v : values) {
        if (to_string(v) == name) return v;
    }
    throw ValidationError(std::string(what) + ": unknown value '" + name + "'");
}

json encode_estimate(const std::optional<Estimate>& e) {
    if (!e) return nullptr;
    return json{{"point", e->point}, {"lower", detail::optional_number(e->lower)},
                {"upper", detail::optional_number(e->upper)}};
}

std::optional<Estimate> decode_estimate(const json& j, const char* field, std::string_view what) {
    auto it = j.find(field);
    if (it == j.end() || it->is_null()) return std::nullopt;
    Estimate e;
    e.point = detail::require<double>(*it, "point", what);
    e.lower = detail::optional_field<double>(*it, "lower", what);
    e.upper = detail::optional_field<double>(*it, "upper", what);
    return e;
}

template <class T, class Decode>
std::vector<T> read_all(const RunDirectory& run, Stage stage, Decode decode) {
    std::vector<T> out;
    for (const auto& line : run.read_stage(stage)) out.push_back(decode(line));
    return out;
}

}  // namespace

std::string encode_record(const QuestionGenerations& g) {
    json gens = json::array();
    for (const auto& s : g.generations) {
        gens.push_back({{"sample_index", s.sample_index},
                        {"text", s.text},
                        {"token_logprobs", s.token_logprobs},
                        {"temperature", s.temperature}});
    }
    return detail::dump_line({{"question_id", g.question_id}, {"generations", std::move(gens)}});
}

QuestionGenerations decode_generations(std::string_view line) {
    constexpr std::string_view what = "generation record";
    const json j = detail::parse_json(line, what);
    QuestionGenerations out;
    out.question_id = detail::require<std::string>(j, "question_id", what);
    for (const auto& s : detail::require<json>(j, "generations", what)) {
        Generation g;
        g.question_id = out.question_id;
        g.sample_index = detail::require<int>(s, "sample_index", what);
        g.text = detail::require<std::string>(s, "text", what);
        g.token_logprobs = detail::require<std::vector<double>>(s, "token_logprobs", what);
        g.temperature = detail::require<double>(s, "temperature", what);
        out.generations.push_back(std::move(g));
    }
    return out;
}

std::string encode_record(const Clustering& c) {
    json log = json::array();
    for (const auto& v : c.verdict_log) {
        log.push_back({{"premise", v.premise},
                       {"hypothesis", v.hypothesis},
                       {"entails", v.directed == Verdict::Entails},
                       {"backend", v.backend_id}});
    }
    const std::string context = c.verdict_log.empty() ? "" : c.verdict_log.front().question_context;
    return detail::dump_line({{"question_id", c.question_id},
                              {"context", context},
                              {"clusters", c.clusters},
                              {"representatives", c.representatives},
                              {"verdicts", std::move(log)}});
}

Clustering decode_clustering(std::string_view line) {
    constexpr std::string_view what = "cluster record";
    const json j = detail::parse_json(line, what);
    Clustering c;
    c.question_id = detail::require<std::string>(j, "question_id", what);
    c.clusters = detail::require<std::vector<std::vector<int>>>(j, "clusters", what);
    c.representatives = detail::require<std::vector<int>>(j, "representatives", what);
    const std::string context = j.value("context", "");
    for (const auto& v : detail::require<json>(j, "verdicts", what)) {
        EntailmentVerdict ev;
        ev.premise = detail::require<std::string>(v, "premise", what);
        ev.hypothesis = detail::require<std::string>(v, "hypothesis", what);
        ev.directed = detail::require<bool>(v, "entails", what) ? Verdict::Entails : Verdict::NotEntails;
        ev.backend_id = detail::require<std::string>(v, "backend", what);
        ev.question_context = context;
        c.verdict_log.push_back(std::move(ev));
    }
    return c;
}

std::string encode_record(const UncertaintyScore& s) {
    json ppl = json::array();
    for (double p : s.per_sample_perplexity) ppl.push_back(finite_or_null(p));
    return detail::dump_line({{"question_id", s.question_id},
                              {"perplexity", detail::optional_number(s.perplexity)},
                              {"semantic_entropy", detail::optional_number(s.semantic_entropy)},
                              {"discrete_semantic_entropy", s.discrete_semantic_entropy},
                              {"cluster_count", s.cluster_count},
                              {"per_sample_perplexity", std::move(ppl)},
                              {"logprob_free", s.logprob_free}});
}

UncertaintyScore decode_score(std::string_view line) {
    constexpr std::string_view what = "metrics record";
    const json j = detail::parse_json(line, what);
    UncertaintyScore s;
    s.question_id = detail::require<std::string>(j, "question_id", what);
    s.perplexity = detail::optional_field<double>(j, "perplexity", what);
    s.semantic_entropy = detail::optional_field<double>(j, "semantic_entropy", what);
    s.discrete_semantic_entropy = detail::require<double>(j, "discrete_semantic_entropy", what);
    s.cluster_count = detail::require<int>(j, "cluster_count", what);
    for (const auto& p : detail::require<json>(j, "per_sample_perplexity", what)) {
        s.per_sample_perplexity.push_back(null_as_inf(p));
    }
    s.logprob_free = detail::require<bool>(j, "logprob_free", what);
    return s;
}

std::string encode_record(const CorrectnessRecord& r) {
    return detail::dump_line({{"question_id", r.question_id},
                              {"method", to_string(r.method)},
                              {"definition", to_string(r.definition)},
                              {"chosen_index", r.chosen_index},
                              {"chosen_text", r.chosen_text},
                              {"correct", r.correct},
                              {"tie_broken_incorrect", r.tie_broken_incorrect}});
}

CorrectnessRecord decode_correctness(std::string_view line) {
    constexpr std::string_view what = "score record";
    const json j = detail::parse_json(line, what);
    CorrectnessRecord r;
    r.question_id = detail::require<std::string>(j, "question_id", what);
    r.method = parse_enum(detail::require<std::string>(j, "method", what),
                          {Method::LowestPerplexity, Method::LargestCluster}, what);
    r.definition = parse_enum(detail::require<std::string>(j, "definition", what),
                              {Definition::Primary, Definition::Strict, Definition::Majority,
                               Definition::Relaxed},
                              what);
    r.chosen_index = detail::require<int>(j, "chosen_index", what);
    r.chosen_text = detail::require<std::string>(j, "chosen_text", what);
    r.correct = detail::require<bool>(j, "correct", what);
    r.tie_broken_incorrect = detail::require<bool>(j, "tie_broken_incorrect", what);
    return r;
}

std::string encode_record(const EvalReport& r) {
    return detail::dump_line({{"metric", to_string(r.metric)},
                              {"subgroup", to_string(r.subgroup)},
                              {"cell", r.cell},
                              {"n", r.n},
                              {"excluded", r.excluded},
                              {"accuracy", encode_estimate(r.accuracy)},
                              {"auroc", encode_estimate(r.auroc)},
                              {"note", r.note}});
}

EvalReport decode_report(std::string_view line) {
    constexpr std::string_view what = "evaluate record";
    const json j = detail::parse_json(line, what);
    EvalReport r;
    r.metric = parse_enum(detail::require<std::string>(j, "metric", what),
                          {Metric::SemanticEntropy, Metric::DiscreteSemanticEntropy, Metric::Perplexity},
                          what);
    const auto sub = detail::require<std::string>(j, "subgroup", what);
    const auto kind = parse_subgroup(sub);
    if (!kind) throw ValidationError(std::string(what) + ": unknown subgroup '" + sub + "'");
    r.subgroup = *kind;
    r.cell = detail::require<std::string>(j, "cell", what);
    r.n = detail::require<int>(j, "n", what);
    r.excluded = detail::require<int>(j, "excluded", what);
    r.accuracy = decode_estimate(j, "accuracy", what);
    r.auroc = decode_estimate(j, "auroc", what);
    r.note = j.value("note", "");
    return r;
}

std::vector<QuestionGenerations> read_generations(const RunDirectory& run) {
    return read_all<QuestionGenerations>(run, Stage::Generate, decode_generations);
}

std::vector<Clustering> read_clusterings(const RunDirectory& run) {
    return read_all<Clustering>(run, Stage::Cluster, decode_clustering);
}

std::vector<UncertaintyScore> read_scores(const RunDirectory& run) {
    return read_all<UncertaintyScore>(run, Stage::Metrics, decode_score);
}

std::vector<CorrectnessRecord> read_correctness(const RunDirectory& run) {
    return read_all<CorrectnessRecord>(run, Stage::Score, decode_correctness);
}

std::vector<EvalReport> read_reports(const RunDirectory& run) {
    return read_all<EvalReport>(run, Stage::Evaluate, decode_report);
}

}  // namespace sement
