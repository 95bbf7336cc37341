#include "sement/prompts.hpp"

#include <map>

#include "prompts_embedded.hpp"
#include "sement/error.hpp"

namespace sement {

namespace {

const std::map<std::string, PromptTemplate, std::less<>>& registry() {
    static const auto templates = [] {
        std::map<std::string, PromptTemplate, std::less<>> m;
        for (const auto& [id, source] : detail::embedded_prompts()) {
            m.emplace(std::string(id), parse_prompt_template(std::string(id), source));
        }
        return m;
    }();
    return templates;
}

std::string strip_trailing_newlines(std::string s) {
    while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
    return s;
}

}  // namespace

PromptTemplate parse_prompt_template(std::string id, std::string_view source) {
    constexpr std::string_view sys_marker = "--- system ---\n";
    constexpr std::string_view user_marker = "--- user ---\n";
    const auto sys = source.find(sys_marker);
    const auto usr = source.find(user_marker);
    if (sys == std::string_view::npos || usr == std::string_view::npos || usr < sys) {
        throw ConfigError("prompt template " + id + ": expected '--- system ---' then '--- user ---'");
    }
    PromptTemplate t;
    t.id = std::move(id);
    const auto sys_begin = sys + sys_marker.size();
    t.system = strip_trailing_newlines(std::string(source.substr(sys_begin, usr - sys_begin)));
    t.user = strip_trailing_newlines(std::string(source.substr(usr + user_marker.size())));
    return t;
}

const PromptTemplate& prompt_template(std::string_view id) {
    const auto& reg = registry();
    auto it = reg.find(id);
    if (it == reg.end()) throw ConfigError("unknown prompt template '" + std::string(id) + "'");
    return it->second;
}

std::vector<std::string> prompt_template_ids() {
    std::vector<std::string> ids;
    for (const auto& [id, _] : registry()) ids.push_back(id);
    return ids;
}

std::string render(std::string_view tmpl,
                   const std::vector<std::pair<std::string_view, std::string_view>>& vars) {
    std::string out;
    out.reserve(tmpl.size());
    std::size_t pos = 0;
    while (pos < tmpl.size()) {
        const auto open = tmpl.find("{{", pos);
        if (open == std::string_view::npos) {
            out.append(tmpl.substr(pos));
            break;
        }
        const auto close = tmpl.find("}}", open + 2);
        if (close == std::string_view::npos) throw ConfigError("unterminated placeholder in prompt");
        out.append(tmpl.substr(pos, open - pos));
        const auto name = tmpl.substr(open + 2, close - open - 2);
        bool found = false;
        for (const auto& [key, value] : vars) {
            if (key == name) {
                out.append(value);
                found = true;
                break;
            }
        }
        if (!found) throw ConfigError("unbound prompt placeholder {{" + std::string(name) + "}}");
        pos = close + 2;
    }
    return out;
}

}  // namespace sement
