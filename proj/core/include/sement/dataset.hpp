#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sement {

enum class Part { One, Two };
enum class Category { Knowledge, Reasoning, Unlabelled };
enum class Exclusion { ImageOrTable, NotShortAnswer };

/// One exam item. Excluded items stay in the corpus (with the reason) so the
/// filtering audit trail survives, but never reach generation or scoring.
struct Question {
    std::string id;
    Part part = Part::One;
    std::string domain;
    Category category = Category::Unlabelled;
    std::string text;
    std::string reference_answer;
    std::optional<Exclusion> excluded;

    [[nodiscard]] bool eligible() const noexcept { return !excluded.has_value(); }
    friend bool operator==(const Question&, const Question&) = default;
};

inline constexpr int kCorpusSchemaVersion = 1;

std::string_view to_string(Part p) noexcept;
std::string_view to_string(Category c) noexcept;
std::string_view to_string(Exclusion e) noexcept;

/// Reads a line-delimited corpus. Blank lines are skipped but still counted
/// for line numbers in error messages.
std::vector<Question> parse_corpus(std::istream& in);
std::vector<Question> load_corpus(const std::filesystem::path& path);

void write_corpus(std::ostream& out, std::span<const Question> questions);

std::vector<Question> filter_eligible(std::span<const Question> questions);

/// Trims leading/trailing ASCII whitespace.
std::string_view trim(std::string_view s) noexcept;

/// Number of Unicode scalar values in the trimmed text. Invalid UTF-8 bytes
/// count one each.
std::size_t answer_length(std::string_view text) noexcept;

}  // namespace sement
