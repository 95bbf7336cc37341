#include "sement/genclient.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <thread>

#include "codec.hpp"
#include "parallel.hpp"
#include "sement/prompts.hpp"

namespace sement {

using detail::json;

std::vector<std::string> validate(const GenerationConfig& c) {
    std::vector<std::string> warnings;
    if (c.model_id.empty()) throw ConfigError("model_id must not be empty");
    if (c.num_samples < 2) {
        throw ConfigError("num_samples must be at least 2 (entropy over one sample is degenerate)");
    }
    if (!(c.answer_temperature >= 0.0) || !std::isfinite(c.answer_temperature)) {
        throw ConfigError("answer_temperature must be a finite non-negative number");
    }
    if (!(c.entailment_temperature >= 0.0) || !std::isfinite(c.entailment_temperature)) {
        throw ConfigError("entailment_temperature must be a finite non-negative number");
    }
    if (c.entailment_temperature != 0.0) {
        if (!c.allow_nonzero_entailment_temperature) {
            throw ConfigError(
                "entailment_temperature must be 0.0 (set allow_nonzero_entailment_temperature to override)");
        }
        warnings.push_back("entailment judge runs at temperature " +
                           std::to_string(c.entailment_temperature) + "; verdicts may not be deterministic");
    }
    if (c.max_answer_tokens <= 0) throw ConfigError("max_answer_tokens must be positive");
    prompt_template(c.prompt_template_id);  // throws for unknown ids
    if (c.logprob_free) {
        warnings.push_back("logprob-free mode: only discrete semantic entropy will be computed");
    }
    return warnings;
}

namespace detail {

json encode_generation_config(const GenerationConfig& c) {
    return json{
        {"model_id", c.model_id},
        {"num_samples", c.num_samples},
        {"answer_temperature", c.answer_temperature},
        {"entailment_temperature", c.entailment_temperature},
        {"allow_nonzero_entailment_temperature", c.allow_nonzero_entailment_temperature},
        {"max_answer_tokens", c.max_answer_tokens},
        {"prompt_template_id", c.prompt_template_id},
        {"logprob_free", c.logprob_free},
    };
}

GenerationConfig decode_generation_config(const json& j, const GenerationConfig& base) {
    constexpr std::string_view ctx = "generation config";
    GenerationConfig c = base;
    if (!j.is_object()) throw ConfigError("generation config must be an object");
    try {
        c.model_id = optional_field<std::string>(j, "model_id", ctx).value_or(c.model_id);
        c.num_samples = optional_field<int>(j, "num_samples", ctx).value_or(c.num_samples);
        c.answer_temperature =
            optional_field<double>(j, "answer_temperature", ctx).value_or(c.answer_temperature);
        c.entailment_temperature =
            optional_field<double>(j, "entailment_temperature", ctx).value_or(c.entailment_temperature);
        c.allow_nonzero_entailment_temperature =
            optional_field<bool>(j, "allow_nonzero_entailment_temperature", ctx)
                .value_or(c.allow_nonzero_entailment_temperature);
        c.max_answer_tokens =
            optional_field<int>(j, "max_answer_tokens", ctx).value_or(c.max_answer_tokens);
        c.prompt_template_id =
            optional_field<std::string>(j, "prompt_template_id", ctx).value_or(c.prompt_template_id);
        c.logprob_free = optional_field<bool>(j, "logprob_free", ctx).value_or(c.logprob_free);
    } catch (const ValidationError& e) {
        throw ConfigError(e.what());
    }
    return c;
}

}  // namespace detail

CompletionResult complete_with_retries(GenerationBackend& backend, const CompletionRequest& request,
                                       const RetryPolicy& policy) {
    auto delay = policy.base_delay;
    for (int attempt = 0;; ++attempt) {
        try {
            return backend.complete(request);
        } catch (const TransientError&) {
            if (attempt >= policy.max_retries) throw;
            if (policy.sleep) {
                policy.sleep(delay);
            } else {
                std::this_thread::sleep_for(delay);
            }
            delay *= 2;
        }
    }
}

GenerationError::GenerationError(std::string question_id, int sample_index, const std::string& what)
    : BackendError("question " + question_id + " sample " + std::to_string(sample_index) + ": " + what),
      question_id_(std::move(question_id)),
      sample_index_(sample_index) {}

CompletionRequest answer_request(const Question& question, const GenerationConfig& config,
                                 int sample_index) {
    const auto& tmpl = prompt_template(config.prompt_template_id);
    CompletionRequest req;
    req.model_id = config.model_id;
    req.system = render(tmpl.system, {{"question", question.text}});
    req.user = render(tmpl.user, {{"question", question.text}});
    req.temperature = config.answer_temperature;
    req.max_tokens = config.max_answer_tokens;
    req.want_logprobs = !config.logprob_free;
    req.sample_index = sample_index;
    req.tag = RequestTag{Purpose::Answer, question.text, {}, {}};
    return req;
}

namespace {

void check_logprobs(const Generation& g) {
    if (!g.text.empty() && g.token_logprobs.empty()) {
        throw GenerationError(g.question_id, g.sample_index, "logprobs unavailable");
    }
    for (double lp : g.token_logprobs) {
        if (!std::isfinite(lp) || lp > 0.0) {
            throw GenerationError(g.question_id, g.sample_index,
                                  "backend returned an invalid token log-probability");
        }
    }
}

}  // namespace

std::vector<Generation> generate_answers(const Question& question, const GenerationConfig& config,
                                         GenerationBackend& backend, const FanOutOptions& options) {
    if (!question.eligible()) {
        throw ValidationError("question " + question.id + " is excluded and cannot be sampled");
    }
    validate(config);
    const auto m = static_cast<std::size_t>(config.num_samples);
    std::vector<Generation> out(m);
    detail::parallel_for(m, options.max_in_flight, [&](std::size_t i) {
        const int idx = static_cast<int>(i);
        const auto req = answer_request(question, config, idx);
        CompletionResult res;
        try {
            res = complete_with_retries(backend, req, options.retry);
        } catch (const GenerationError&) {
            throw;
        } catch (const BackendError& e) {
            throw GenerationError(question.id, idx, e.what());
        }
        Generation g;
        g.question_id = question.id;
        g.sample_index = idx;
        g.text = std::move(res.text);
        g.temperature = config.answer_temperature;
        if (!config.logprob_free) {
            if (!res.token_logprobs) throw GenerationError(question.id, idx, "logprobs unavailable");
            g.token_logprobs = std::move(*res.token_logprobs);
            check_logprobs(g);
        }
        out[i] = std::move(g);
    });
    return out;
}

std::optional<Category> parse_category_reply(std::string_view reply) {
    std::string word;
    for (char ch : reply) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalpha(c)) {
            word.push_back(static_cast<char>(std::tolower(c)));
        } else if (!word.empty()) {
            break;
        }
    }
    if (word == "knowledge") return Category::Knowledge;
    if (word == "reasoning") return Category::Reasoning;
    return std::nullopt;
}

Category classify_question(const Question& question, GenerationBackend& backend,
                           const std::string& model_id, const RetryPolicy& retry) {
    if (!question.eligible()) {
        throw ValidationError("question " + question.id + " is excluded and cannot be classified");
    }
    const auto& tmpl = prompt_template("classify-v1");
    CompletionRequest req;
    req.model_id = model_id;
    req.system = render(tmpl.system, {{"question", question.text}});
    req.user = render(tmpl.user, {{"question", question.text}});
    req.temperature = 0.0;
    req.max_tokens = 4;
    req.want_logprobs = false;
    req.tag = RequestTag{Purpose::Classify, question.text, {}, {}};

    auto res = complete_with_retries(backend, req, retry);
    if (auto c = parse_category_reply(res.text)) return *c;

    req.user += "\nYour previous reply could not be parsed. Reply with exactly one word: "
                "knowledge or reasoning.";
    res = complete_with_retries(backend, req, retry);
    if (auto c = parse_category_reply(res.text)) return *c;
    throw BackendError("question " + question.id + ": unparseable classification reply '" + res.text + "'");
}

double sequence_loglik(std::span<const double> token_logprobs) {
    if (token_logprobs.empty()) throw ValidationError("sequence log-likelihood of an empty token list");
    // Summing in sorted order makes the result exactly permutation-invariant.
    std::vector<double> sorted(token_logprobs.begin(), token_logprobs.end());
    std::sort(sorted.begin(), sorted.end());
    const double sum = std::accumulate(sorted.begin(), sorted.end(), 0.0);
    return sum / static_cast<double>(token_logprobs.size());
}

double sequence_loglik(const Generation& gen) { return sequence_loglik(gen.token_logprobs); }

}  // namespace sement
