#include "sement/dataset.hpp"

#include <fstream>
#include <istream>
#include <map>
#include <ostream>

#include "codec.hpp"

namespace sement {

using detail::json;

std::string_view to_string(Part p) noexcept { return p == Part::One ? "one" : "two"; }

std::string_view to_string(Category c) noexcept {
    switch (c) {
        case Category::Knowledge: return "knowledge";
        case Category::Reasoning: return "reasoning";
        case Category::Unlabelled: break;
    }
    return "unlabelled";
}

std::string_view to_string(Exclusion e) noexcept {
    return e == Exclusion::ImageOrTable ? "image_or_table" : "not_short_answer";
}

namespace {

std::string where(std::size_t line) { return "corpus line " + std::to_string(line); }

Question decode_question(const json& j, std::size_t line) {
    const std::string ctx = where(line);
    if (!j.is_object()) throw ValidationError(ctx + ": record is not an object");

    const auto schema = detail::require<int>(j, "schema", ctx);
    if (schema != kCorpusSchemaVersion) {
        throw ValidationError(ctx + ": field 'schema' is " + std::to_string(schema) +
                              ", expected " + std::to_string(kCorpusSchemaVersion));
    }

    Question q;
    q.id = detail::require<std::string>(j, "id", ctx);
    if (q.id.empty()) throw ValidationError(ctx + ": field 'id' is empty");

    const auto part = detail::require<std::string>(j, "part", ctx);
    if (part == "one") {
        q.part = Part::One;
    } else if (part == "two") {
        q.part = Part::Two;
    } else {
        throw ValidationError(ctx + ": field 'part' must be \"one\" or \"two\"");
    }

    q.domain = detail::optional_field<std::string>(j, "domain", ctx).value_or("");

    const auto category = detail::optional_field<std::string>(j, "category", ctx);
    if (!category) {
        q.category = Category::Unlabelled;
    } else if (*category == "knowledge") {
        q.category = Category::Knowledge;
    } else if (*category == "reasoning") {
        q.category = Category::Reasoning;
    } else {
        throw ValidationError(ctx + ": field 'category' must be \"knowledge\", \"reasoning\" or null");
    }

    const auto excluded = detail::optional_field<std::string>(j, "excluded", ctx);
    if (excluded) {
        if (*excluded == "image_or_table") {
            q.excluded = Exclusion::ImageOrTable;
        } else if (*excluded == "not_short_answer") {
            q.excluded = Exclusion::NotShortAnswer;
        } else {
            throw ValidationError(ctx +
                                  ": field 'excluded' must be null, \"image_or_table\" or \"not_short_answer\"");
        }
    }

    // Excluded records may be incomplete.
    if (q.eligible()) {
        q.text = detail::require<std::string>(j, "text", ctx);
        q.reference_answer = detail::require<std::string>(j, "reference_answer", ctx);
        if (trim(q.text).empty()) throw ValidationError(ctx + ": field 'text' is empty");
        if (trim(q.reference_answer).empty()) {
            throw ValidationError(ctx + ": field 'reference_answer' is empty");
        }
    } else {
        q.text = detail::optional_field<std::string>(j, "text", ctx).value_or("");
        q.reference_answer = detail::optional_field<std::string>(j, "reference_answer", ctx).value_or("");
    }
    return q;
}

json encode_question(const Question& q) {
    json j = json::object();
    j["schema"] = kCorpusSchemaVersion;
    j["id"] = q.id;
    j["part"] = to_string(q.part);
    j["domain"] = q.domain;
    j["category"] = q.category == Category::Unlabelled ? json(nullptr) : json(to_string(q.category));
    j["text"] = q.text;
    j["reference_answer"] = q.reference_answer;
    j["excluded"] = q.excluded ? json(to_string(*q.excluded)) : json(nullptr);
    return j;
}

}  // namespace

std::vector<Question> parse_corpus(std::istream& in) {
    std::vector<Question> out;
    std::map<std::string, std::size_t> first_seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        Question q = decode_question(detail::parse_json(line, where(lineno)), lineno);
        auto [it, inserted] = first_seen.emplace(q.id, lineno);
        if (!inserted) {
            throw ValidationError("duplicate question id '" + q.id + "' on corpus lines " +
                                  std::to_string(it->second) + " and " + std::to_string(lineno));
        }
        out.push_back(std::move(q));
    }
    return out;
}

std::vector<Question> load_corpus(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open corpus file " + path.string());
    return parse_corpus(in);
}

void write_corpus(std::ostream& out, std::span<const Question> questions) {
    for (const auto& q : questions) out << detail::dump_line(encode_question(q)) << '\n';
}

std::vector<Question> filter_eligible(std::span<const Question> questions) {
    std::vector<Question> out;
    for (const auto& q : questions) {
        if (q.eligible()) out.push_back(q);
    }
    return out;
}

std::string_view trim(std::string_view s) noexcept {
    constexpr std::string_view ws = " \t\n\r\f\v";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

std::size_t answer_length(std::string_view text) noexcept {
    const auto t = trim(text);
    std::size_t count = 0;
    for (std::size_t i = 0; i < t.size();) {
        const auto c = static_cast<unsigned char>(t[i]);
        std::size_t width = 1;
        if (c >= 0xF0 && c <= 0xF4) {
            width = 4;
        } else if (c >= 0xE0) {
            width = 3;
        } else if (c >= 0xC2 && c <= 0xDF) {
            width = 2;
        }
        if (width > 1) {
            if (i + width > t.size()) {
                width = 1;
            } else {
                for (std::size_t k = 1; k < width; ++k) {
                    if ((static_cast<unsigned char>(t[i + k]) & 0xC0) != 0x80) {
                        width = 1;
                        break;
                    }
                }
            }
        }
        i += width;
        ++count;
    }
    return count;
}

}  // namespace sement
