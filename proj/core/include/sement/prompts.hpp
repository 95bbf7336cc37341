#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace sement {

/// A versioned prompt. Placeholders are written `{{name}}`.
struct PromptTemplate {
    std::string id;
    std::string system;
    std::string user;
};

/// Templates compiled in from prompts/*.txt. Throws ConfigError for an
/// unknown id.
const PromptTemplate& prompt_template(std::string_view id);
std::vector<std::string> prompt_template_ids();

/// Parses the on-disk template format: a `--- system ---` section followed
/// by a `--- user ---` section.
PromptTemplate parse_prompt_template(std::string id, std::string_view source);

/// Substitutes every `{{name}}`. Unknown placeholders are a ConfigError.
std::string render(std::string_view tmpl,
                   const std::vector<std::pair<std::string_view, std::string_view>>& vars);

}  // namespace sement
