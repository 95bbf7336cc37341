#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "sement/cluster.hpp"
#include "sement/eval.hpp"
#include "sement/genclient.hpp"
#include "sement/metrics.hpp"
#include "sement/run.hpp"
#include "sement/scoring.hpp"

// Typed record codecs for the stage files. Each stage file is JSON lines:
// a header line, then one record per line.
//   generate.jsonl  one record per question: {"question_id", "generations": [...]}
//   cluster.jsonl   one Clustering per question, including its verdict log
//   metrics.jsonl   one UncertaintyScore per question
//   score.jsonl     one CorrectnessRecord per line
//   evaluate.jsonl  one EvalReport per line

namespace sement {

struct QuestionGenerations {
    std::string question_id;
    std::vector<Generation> generations;
    friend bool operator==(const QuestionGenerations&, const QuestionGenerations&) = default;
};

std::string encode_record(const QuestionGenerations& g);
std::string encode_record(const Clustering& c);
std::string encode_record(const UncertaintyScore& s);
std::string encode_record(const CorrectnessRecord& r);
std::string encode_record(const EvalReport& r);

QuestionGenerations decode_generations(std::string_view line);
Clustering decode_clustering(std::string_view line);
UncertaintyScore decode_score(std::string_view line);
CorrectnessRecord decode_correctness(std::string_view line);
EvalReport decode_report(std::string_view line);

template <class T>
std::vector<std::string> encode_records(std::span<const T> items) {
    std::vector<std::string> out;
    out.reserve(items.size());
    for (const auto& item : items) out.push_back(encode_record(item));
    return out;
}

std::vector<QuestionGenerations> read_generations(const RunDirectory& run);
std::vector<Clustering> read_clusterings(const RunDirectory& run);
std::vector<UncertaintyScore> read_scores(const RunDirectory& run);
std::vector<CorrectnessRecord> read_correctness(const RunDirectory& run);
std::vector<EvalReport> read_reports(const RunDirectory& run);

}  // namespace sement
