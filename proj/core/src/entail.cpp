#include "sement/entail.hpp"

#include <cctype>
#include <fstream>

#include "codec.hpp"
#include "sement/prompts.hpp"

namespace sement {

using detail::json;

std::string normalize_answer(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    bool pending_space = false;
    for (char ch : trim(text)) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isspace(c)) {
            pending_space = true;
            continue;
        }
        if (pending_space && !out.empty()) out.push_back(' ');
        pending_space = false;
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
}

Verdict ExactOracle::judge(std::string_view premise, std::string_view hypothesis, std::string_view) {
    return premise == hypothesis ? Verdict::Entails : Verdict::NotEntails;
}

Verdict NormalizedExactOracle::judge(std::string_view premise, std::string_view hypothesis,
                                     std::string_view) {
    return normalize_answer(premise) == normalize_answer(hypothesis) ? Verdict::Entails
                                                                      : Verdict::NotEntails;
}

// ---------------------------------------------------------------------------

std::optional<NliLabel> parse_judge_reply(std::string_view reply) {
    auto t = trim(reply);
    if (!t.empty() && t.back() == '.') t.remove_suffix(1);
    const auto word = normalize_answer(t);
    if (word == "entailment") return NliLabel::Entailment;
    if (word == "neutral") return NliLabel::Neutral;
    if (word == "contradiction") return NliLabel::Contradiction;
    return std::nullopt;
}

namespace {

Verdict verdict_of(NliLabel label) {
    return label == NliLabel::Entailment ? Verdict::Entails : Verdict::NotEntails;
}

}  // namespace

ScriptedOracle ScriptedOracle::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open scripted oracle file " + path.string());
    ScriptedOracle oracle;
    oracle.id_ = "scripted:" + path.filename().string();
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const std::string ctx = path.filename().string() + " line " + std::to_string(lineno);
        const json j = detail::parse_json(line, ctx);
        if (auto eq = j.find("equivalent"); eq != j.end()) {
            oracle.add_equivalence_class(eq->get<std::vector<std::string>>());
            continue;
        }
        const auto label = parse_judge_reply(detail::require<std::string>(j, "verdict", ctx));
        if (!label) throw ConfigError(ctx + ": verdict must be entailment, neutral or contradiction");
        oracle.set(detail::require<std::string>(j, "premise", ctx),
                   detail::require<std::string>(j, "hypothesis", ctx), verdict_of(*label));
    }
    return oracle;
}

void ScriptedOracle::set(std::string_view premise, std::string_view hypothesis, Verdict v) {
    directed_[{normalize_answer(premise), normalize_answer(hypothesis)}] = v;
}

void ScriptedOracle::add_equivalence_class(const std::vector<std::string>& texts) {
    const std::size_t cls = next_class_++;
    for (const auto& t : texts) class_of_[normalize_answer(t)] = cls;
}

Verdict ScriptedOracle::judge(std::string_view premise, std::string_view hypothesis, std::string_view) {
    const auto p = normalize_answer(premise);
    const auto h = normalize_answer(hypothesis);
    if (auto it = directed_.find({p, h}); it != directed_.end()) return it->second;
    const auto cp = class_of_.find(p);
    const auto ch = class_of_.find(h);
    if (cp != class_of_.end() && ch != class_of_.end()) {
        return cp->second == ch->second ? Verdict::Entails : Verdict::NotEntails;
    }
    return p == h ? Verdict::Entails : Verdict::NotEntails;
}

Verdict FunctionOracle::judge(std::string_view premise, std::string_view hypothesis,
                              std::string_view context) {
    calls_.fetch_add(1);
    return fn_(premise, hypothesis, context);
}

// ---------------------------------------------------------------------------

LlmJudge::LlmJudge(GenerationBackend& backend, std::string model_id, RetryPolicy retry,
                   double temperature, bool allow_nonzero_temperature)
    : backend_(backend), model_id_(std::move(model_id)), retry_(std::move(retry)), temperature_(temperature) {
    if (temperature_ != 0.0 && !allow_nonzero_temperature) {
        throw ConfigError("the entailment judge must run at temperature 0.0");
    }
}

std::string LlmJudge::id() const { return "llm:" + model_id_ + "@" + backend_.id(); }

Verdict LlmJudge::judge(std::string_view premise, std::string_view hypothesis, std::string_view context) {
    const auto& tmpl = prompt_template("entail-v1");
    const std::vector<std::pair<std::string_view, std::string_view>> vars = {
        {"question", context}, {"premise", premise}, {"hypothesis", hypothesis}};
    CompletionRequest req;
    req.model_id = model_id_;
    req.system = render(tmpl.system, vars);
    req.user = render(tmpl.user, vars);
    req.temperature = temperature_;
    req.max_tokens = 4;
    req.want_logprobs = false;
    req.tag = RequestTag{Purpose::Entail, std::string(context), std::string(premise), std::string(hypothesis)};

    auto res = complete_with_retries(backend_, req, retry_);
    if (auto label = parse_judge_reply(res.text)) return verdict_of(*label);

    req.user += "\nYour previous reply could not be parsed. Respond with exactly one word: "
                "entailment, neutral, or contradiction.";
    res = complete_with_retries(backend_, req, retry_);
    if (auto label = parse_judge_reply(res.text)) return verdict_of(*label);
    throw BackendError("unparseable entailment judge reply '" + res.text + "'");
}

std::unique_ptr<EntailmentBackend> make_oracle(std::string_view rule) {
    if (rule == "exact") return std::make_unique<ExactOracle>();
    if (rule == "normalized-exact") return std::make_unique<NormalizedExactOracle>();
    constexpr std::string_view scripted = "scripted:";
    if (rule.starts_with(scripted)) {
        return std::make_unique<ScriptedOracle>(
            ScriptedOracle::from_file(std::string(rule.substr(scripted.size()))));
    }
    throw ConfigError("unknown oracle rule '" + std::string(rule) +
                      "' (expected exact, normalized-exact or scripted:<file>)");
}

// ---------------------------------------------------------------------------

namespace {

void require_texts(std::string_view premise, std::string_view hypothesis) {
    if (premise.empty() || hypothesis.empty()) {
        throw ValidationError("entailment needs non-empty premise and hypothesis");
    }
}

}  // namespace

EntailmentVerdict entails(std::string_view premise, std::string_view hypothesis,
                          std::string_view context, EntailmentBackend& backend) {
    require_texts(premise, hypothesis);
    EntailmentVerdict v{std::string(premise), std::string(hypothesis), std::string(context),
                        Verdict::Entails, backend.id()};
    if (premise != hypothesis) v.directed = backend.judge(premise, hypothesis, context);
    return v;
}

bool bidirectional(std::string_view a, std::string_view b, std::string_view context,
                   EntailmentBackend& backend) {
    return entails(a, b, context, backend).directed == Verdict::Entails &&
           entails(b, a, context, backend).directed == Verdict::Entails;
}

EntailmentVerdict EntailmentJudge::entails(std::string_view premise, std::string_view hypothesis,
                                           std::string_view context) {
    require_texts(premise, hypothesis);
    EntailmentVerdict v{std::string(premise), std::string(hypothesis), std::string(context),
                        Verdict::Entails, backend_.id()};
    if (premise == hypothesis) return v;

    Key key{v.question_context, v.premise, v.hypothesis};
    {
        std::lock_guard lock(mutex_);
        if (auto it = cache_.find(key); it != cache_.end()) {
            v.directed = it->second;
            return v;
        }
    }
    // Two threads may race to judge the same pair; the backend is
    // deterministic, so whichever result lands first is the same value.
    const Verdict judged = backend_.judge(premise, hypothesis, context);
    backend_calls_.fetch_add(1);
    {
        std::lock_guard lock(mutex_);
        cache_.emplace(std::move(key), judged);
    }
    v.directed = judged;
    return v;
}

bool EntailmentJudge::bidirectional(std::string_view a, std::string_view b, std::string_view context,
                                    std::vector<EntailmentVerdict>* log) {
    auto forward = entails(a, b, context);
    auto backward = entails(b, a, context);
    const bool result = forward.directed == Verdict::Entails && backward.directed == Verdict::Entails;
    if (log != nullptr) {
        log->push_back(std::move(forward));
        log->push_back(std::move(backward));
    }
    return result;
}

}  // namespace sement
