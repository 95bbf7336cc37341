#include "sement/backends.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>

#include "httplib.h"

#include "codec.hpp"
#include "hashing.hpp"
#include "sement/digest.hpp"
#include "sement/entail.hpp"

namespace sement {

namespace fs = std::filesystem;
using detail::json;

// ---------------------------------------------------------------------------
// ScriptedBackend

ScriptedBackend::ScriptedBackend(std::vector<CompletionResult> replies, std::string id)
    : id_(std::move(id)) {
    if (replies.empty()) throw ConfigError("scripted backend needs at least one reply");
    handler_ = [replies = std::move(replies)](const CompletionRequest& r) {
        return replies[static_cast<std::size_t>(r.sample_index) % replies.size()];
    };
}

ScriptedBackend::ScriptedBackend(Handler handler, std::string id)
    : handler_(std::move(handler)), id_(std::move(id)) {}

CompletionResult ScriptedBackend::complete(const CompletionRequest& request) {
    calls_.fetch_add(1);
    return handler_(request);
}

// ---------------------------------------------------------------------------
// SimulatedBackend

SimulatedBackend::SimulatedBackend(std::vector<AnswerProfile> profiles, std::uint64_t seed)
    : seed_(seed) {
    for (auto& p : profiles) {
        if (p.answers.empty()) throw ConfigError("answer profile without answers: " + p.question_text);
        for (const auto& a : p.answers) {
            if (!(a.weight > 0.0) || !(a.confidence > 0.0) || a.confidence > 1.0) {
                throw ConfigError("answer profile '" + a.text +
                                  "': weight must be > 0 and confidence in (0, 1]");
            }
            register_meaning(a.text, a.meaning);
        }
        const auto key = p.question_text;
        by_question_.insert_or_assign(key, std::move(p));
    }
}

SimulatedBackend SimulatedBackend::from_profile_file(const fs::path& path,
                                                     std::span<const Question> questions,
                                                     std::uint64_t seed) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open stub profile file " + path.string());
    std::map<std::string, const Question*> by_id;
    for (const auto& q : questions) by_id[q.id] = &q;

    std::vector<AnswerProfile> profiles;
    std::vector<std::pair<std::string, std::string>> references;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const std::string ctx = path.filename().string() + " line " + std::to_string(lineno);
        const json j = detail::parse_json(line, ctx);
        const auto qid = detail::require<std::string>(j, "question_id", ctx);
        auto it = by_id.find(qid);
        if (it == by_id.end()) throw ConfigError(ctx + ": unknown question id '" + qid + "'");
        AnswerProfile p;
        p.question_text = it->second->text;
        const auto cat = detail::optional_field<std::string>(j, "category", ctx).value_or("knowledge");
        p.category = cat == "reasoning" ? Category::Reasoning : Category::Knowledge;
        for (const auto& a : detail::require<json>(j, "answers", ctx)) {
            SimulatedAnswer ans;
            ans.text = detail::require<std::string>(a, "text", ctx);
            ans.meaning = detail::optional_field<std::string>(a, "meaning", ctx).value_or(ans.text);
            ans.weight = detail::optional_field<double>(a, "weight", ctx).value_or(1.0);
            ans.confidence = detail::optional_field<double>(a, "confidence", ctx).value_or(0.8);
            p.answers.push_back(std::move(ans));
        }
        if (auto ref = detail::optional_field<std::string>(j, "reference_meaning", ctx)) {
            references.emplace_back(it->second->reference_answer, *ref);
        }
        profiles.push_back(std::move(p));
    }
    SimulatedBackend backend(std::move(profiles), seed);
    for (const auto& [text, meaning] : references) backend.register_meaning(text, meaning);
    return backend;
}

void SimulatedBackend::register_meaning(const std::string& text, const std::string& meaning) {
    meaning_of_.insert_or_assign(normalize_answer(text), meaning);
}

std::string SimulatedBackend::id() const { return "simulated:seed=" + std::to_string(seed_); }

CompletionResult SimulatedBackend::complete(const CompletionRequest& request) {
    calls_.fetch_add(1);
    switch (request.tag.purpose) {
        case Purpose::Answer: return answer(request);
        case Purpose::Classify: return classify(request);
        case Purpose::Entail: return judge(request);
    }
    throw BackendError("simulated backend: unknown request purpose");
}

CompletionResult SimulatedBackend::answer(const CompletionRequest& request) const {
    auto it = by_question_.find(request.tag.subject);
    if (it == by_question_.end()) {
        throw BackendError("simulated backend has no answer profile for this question");
    }
    const auto& answers = it->second.answers;
    const std::uint64_t subject = detail::fnv1a(request.tag.subject);
    const std::uint64_t base = detail::mix(seed_, subject, static_cast<std::uint64_t>(request.sample_index));

    std::size_t pick = 0;
    if (request.temperature <= 0.0) {
        for (std::size_t i = 1; i < answers.size(); ++i) {
            if (answers[i].weight > answers[pick].weight) pick = i;
        }
    } else {
        // Tempered weights w^(1/T), evaluated in log space.
        std::vector<double> logw(answers.size());
        for (std::size_t i = 0; i < answers.size(); ++i) {
            logw[i] = std::log(answers[i].weight) / request.temperature;
        }
        const double top = *std::max_element(logw.begin(), logw.end());
        double total = 0.0;
        for (auto& lw : logw) total += (lw = std::exp(lw - top));
        double u = detail::unit_interval(detail::mix(base, 0xA5)) * total;
        pick = answers.size() - 1;
        for (std::size_t i = 0; i < answers.size(); ++i) {
            if (u < logw[i]) {
                pick = i;
                break;
            }
            u -= logw[i];
        }
    }

    const auto& chosen = answers[pick];
    CompletionResult res;
    res.text = chosen.text;
    if (request.want_logprobs) {
        const std::size_t tokens = std::max<std::size_t>(1, (chosen.text.size() + 3) / 4);
        const double mean_lp = std::log(chosen.confidence);
        std::vector<double> lps(tokens);
        for (std::size_t t = 0; t < tokens; ++t) {
            const double jitter = detail::unit_interval(detail::mix(base, 0x10 + t)) - 0.5;
            lps[t] = mean_lp * (1.0 + 0.5 * jitter);
        }
        res.token_logprobs = std::move(lps);
    }
    return res;
}

CompletionResult SimulatedBackend::classify(const CompletionRequest& request) const {
    auto it = by_question_.find(request.tag.subject);
    const bool reasoning = it != by_question_.end() && it->second.category == Category::Reasoning;
    return CompletionResult{reasoning ? "reasoning" : "knowledge", std::nullopt};
}

CompletionResult SimulatedBackend::judge(const CompletionRequest& request) const {
    const auto p = normalize_answer(request.tag.premise);
    const auto h = normalize_answer(request.tag.hypothesis);
    const auto mp = meaning_of_.find(p);
    const auto mh = meaning_of_.find(h);
    std::string label;
    if (mp != meaning_of_.end() && mh != meaning_of_.end()) {
        label = mp->second == mh->second ? "entailment" : "contradiction";
    } else {
        label = p == h ? "entailment" : "neutral";
    }
    return CompletionResult{std::move(label), std::nullopt};
}

// ---------------------------------------------------------------------------
// CachingBackend

CachingBackend::CachingBackend(GenerationBackend& inner, fs::path cache_root)
    : inner_(inner), root_(std::move(cache_root)) {
    fs::create_directories(root_);
}

namespace {

json canonical_request(const std::string& backend_id, const CompletionRequest& r) {
    // json objects keep keys sorted, so dump() is canonical.
    return json{
        {"backend", backend_id},   {"model", r.model_id},
        {"system", r.system},      {"user", r.user},
        {"temperature", r.temperature}, {"sample_index", r.sample_index},
        {"max_tokens", r.max_tokens},   {"logprobs", r.want_logprobs},
    };
}

}  // namespace

std::string CachingBackend::cache_key(const CompletionRequest& request) const {
    return sha256_hex(detail::dump_line(canonical_request(inner_.id(), request)));
}

CompletionResult CachingBackend::complete(const CompletionRequest& request) {
    const json canonical = canonical_request(inner_.id(), request);
    const std::string key = sha256_hex(detail::dump_line(canonical));
    const fs::path file = root_ / key.substr(0, 2) / (key + ".json");

    std::error_code ec;
    if (fs::exists(file, ec)) {
        try {
            const json entry = json::parse(read_file(file));
            if (entry.at("request") == canonical) {
                CompletionResult res;
                res.text = entry.at("text").get<std::string>();
                if (!entry.at("token_logprobs").is_null()) {
                    res.token_logprobs = entry.at("token_logprobs").get<std::vector<double>>();
                }
                hits_.fetch_add(1);
                return res;
            }
        } catch (const std::exception&) {
            // Unreadable entry: fall through and refresh it.
        }
    }

    misses_.fetch_add(1);
    CompletionResult res = inner_.complete(request);
    json entry = {
        {"request", canonical},
        {"text", res.text},
        {"token_logprobs", res.token_logprobs ? json(*res.token_logprobs) : json(nullptr)},
    };
    fs::create_directories(file.parent_path());
    atomic_write(file, entry.dump(-1, ' ', false, json::error_handler_t::replace) + "\n");
    return res;
}

// ---------------------------------------------------------------------------
// HttpGateway

HttpGateway::HttpGateway(GatewayConfig config) : config_(std::move(config)) {
    const char* key = std::getenv(config_.api_key_env.c_str());
    if (key == nullptr || *key == '\0') {
        throw ConfigError("environment variable " + config_.api_key_env + " is not set");
    }
    api_key_ = key;
}

HttpGateway::HttpGateway(GatewayConfig config, std::string api_key)
    : config_(std::move(config)), api_key_(std::move(api_key)) {}

std::string HttpGateway::request_body(const CompletionRequest& r) {
    json messages = json::array();
    if (!r.system.empty()) messages.push_back({{"role", "system"}, {"content", r.system}});
    messages.push_back({{"role", "user"}, {"content", r.user}});
    json body = {
        {"model", r.model_id},
        {"messages", messages},
        {"temperature", r.temperature},
        {"max_tokens", r.max_tokens},
        {"n", 1},
        {"logprobs", r.want_logprobs},
    };
    return body.dump();
}

CompletionResult HttpGateway::parse_response(const std::string& body) {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::parse_error&) {
        throw BackendError("gateway returned a non-JSON body");
    }
    const auto choices = j.find("choices");
    if (choices == j.end() || !choices->is_array() || choices->empty()) {
        throw BackendError("gateway response has no choices");
    }
    const json& choice = (*choices)[0];
    CompletionResult res;
    if (auto msg = choice.find("message"); msg != choice.end()) {
        if (auto content = msg->find("content"); content != msg->end() && content->is_string()) {
            res.text = content->get<std::string>();
        }
    }
    if (auto lp = choice.find("logprobs"); lp != choice.end() && lp->is_object()) {
        if (auto content = lp->find("content"); content != lp->end() && content->is_array()) {
            std::vector<double> values;
            values.reserve(content->size());
            for (const auto& tok : *content) values.push_back(tok.at("logprob").get<double>());
            res.token_logprobs = std::move(values);
        }
    }
    return res;
}

namespace {

struct SplitUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;    // without trailing slash
};

SplitUrl split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("base URL needs a scheme: " + url);
    const auto path_begin = url.find('/', scheme_end + 3);
    SplitUrl s;
    s.origin = url.substr(0, path_begin);
    s.path = path_begin == std::string::npos ? "" : url.substr(path_begin);
    while (!s.path.empty() && s.path.back() == '/') s.path.pop_back();
    return s;
}

}  // namespace

CompletionResult HttpGateway::complete(const CompletionRequest& request) {
    const auto url = split_url(config_.base_url);
    httplib::Client client(url.origin);
    const auto secs = static_cast<time_t>(config_.timeout.count());
    client.set_connection_timeout(secs, 0);
    client.set_read_timeout(secs, 0);
    client.set_write_timeout(secs, 0);
    client.set_bearer_token_auth(api_key_);

    auto res = client.Post(url.path + "/chat/completions", request_body(request), "application/json");
    if (!res) throw TransientError("gateway transport error: " + httplib::to_string(res.error()));
    const int status = res->status;
    if (status == 408 || status == 429 || status >= 500) {
        throw TransientError("gateway returned HTTP " + std::to_string(status));
    }
    if (status < 200 || status >= 300) {
        throw BackendError("gateway returned HTTP " + std::to_string(status) + ": " +
                           res->body.substr(0, 200));
    }
    return parse_response(res->body);
}

}  // namespace sement
