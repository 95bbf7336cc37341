#pragma once

#include <span>
#include <string>

#include "sement/eval.hpp"
#include "sement/review.hpp"

namespace sement {

/// "0.76 (0.73 -- 0.78)"; "n/a" when absent, point only when the interval is.
std::string format_estimate(const std::optional<Estimate>& e);

/// Aligned plain-text table for one subgroup kind:
///   Metric | <Part|Category|Length|Temp> | Accuracy (95% CI) | AUROC (95% CI)
/// The overall table omits the subgroup column. The metric name is printed
/// on the first row of each metric block only.
std::string render_table(std::span<const EvalReport> reports, SubgroupKind kind);

/// Accuracy-by-cluster-count grid for expert validation, followed by the
/// expert-scored AUROCs and clustering success rate.
std::string render_expert_table(const ExpertMetrics& m);

/// Titles used for each table section of the full report.
std::string_view table_title(SubgroupKind kind) noexcept;

/// Full report: one section per subgroup kind present in `reports`.
std::string render_report(std::span<const EvalReport> reports);

/// Tab-separated ROC points (threshold, fpr, tpr), one block per metric.
std::string render_roc_points(std::span<const EvalItem> items);

}  // namespace sement
