#include "sement/report.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace sement {

namespace {

std::string fixed2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string_view column_name(SubgroupKind kind) {
    switch (kind) {
        case SubgroupKind::All: return "";
        case SubgroupKind::Part: return "Part";
        case SubgroupKind::Category: return "Category";
        case SubgroupKind::Length: return "Length";
        case SubgroupKind::Temperature: return "Temp";
    }
    return "";
}

std::size_t display_width(const std::string& s) { return answer_length(s); }

/// Rows of cells to a pipe-separated table with a rule under the header.
std::string layout(const std::vector<std::vector<std::string>>& rows) {
    std::vector<std::size_t> width(rows.front().size(), 0);
    for (const auto& r : rows) {
        for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], display_width(r[c]));
    }
    std::ostringstream out;
    auto emit = [&](const std::vector<std::string>& r) {
        std::string line;
        for (std::size_t c = 0; c < r.size(); ++c) {
            if (c > 0) line += " | ";
            line += r[c];
            if (c + 1 < r.size()) line.append(width[c] - display_width(r[c]), ' ');
        }
        out << line << '\n';
    };
    emit(rows.front());
    std::string rule;
    for (std::size_t c = 0; c < width.size(); ++c) {
        if (c > 0) rule += "-+-";
        rule.append(width[c], '-');
    }
    out << rule << '\n';
    for (std::size_t i = 1; i < rows.size(); ++i) emit(rows[i]);
    return out.str();
}

std::string fraction_cell(const FractionCell& f) {
    const auto v = f.fraction();
    return v ? fixed2(*v) + " (" + std::to_string(f.correct) + "/" + std::to_string(f.n) + ")" : "n/a";
}

std::string interval_text(const std::optional<Interval>& i) {
    if (!i) return "n/a";
    return fixed2(i->point) + " (" + fixed2(i->lower) + " -- " + fixed2(i->upper) + ")";
}

}  // namespace

std::string format_estimate(const std::optional<Estimate>& e) {
    if (!e) return "n/a";
    if (!e->lower || !e->upper) return fixed2(e->point);
    return fixed2(e->point) + " (" + fixed2(*e->lower) + " -- " + fixed2(*e->upper) + ")";
}

std::string render_table(std::span<const EvalReport> reports, SubgroupKind kind) {
    const bool with_cell = kind != SubgroupKind::All;
    std::vector<std::vector<std::string>> rows;
    if (with_cell) {
        rows.push_back({"Metric", std::string(column_name(kind)), "Accuracy (95% CI)", "AUROC (95% CI)"});
    } else {
        rows.push_back({"Metric", "Accuracy (95% CI)", "AUROC (95% CI)"});
    }
    for (Metric m : kMetrics) {
        bool first = true;
        for (const auto& r : reports) {
            if (r.subgroup != kind || r.metric != m) continue;
            std::vector<std::string> row;
            row.emplace_back(first ? display_name(m) : "");
            if (with_cell) row.push_back(r.cell);
            row.push_back(format_estimate(r.accuracy));
            row.push_back(format_estimate(r.auroc));
            rows.push_back(std::move(row));
            first = false;
        }
    }
    return layout(rows);
}

std::string_view table_title(SubgroupKind kind) noexcept {
    switch (kind) {
        case SubgroupKind::All: return "Overall";
        case SubgroupKind::Part: return "By exam part";
        case SubgroupKind::Category: return "By question category";
        case SubgroupKind::Length: return "By answer length (short < 15 chars, long > 60 chars)";
        case SubgroupKind::Temperature: return "By sampling temperature";
    }
    return "";
}

std::string render_report(std::span<const EvalReport> reports) {
    std::ostringstream out;
    bool first = true;
    for (auto kind : {SubgroupKind::All, SubgroupKind::Part, SubgroupKind::Category, SubgroupKind::Length,
                      SubgroupKind::Temperature}) {
        const bool present = std::any_of(reports.begin(), reports.end(),
                                         [&](const EvalReport& r) { return r.subgroup == kind; });
        if (!present) continue;
        if (!first) out << '\n';
        first = false;
        out << table_title(kind) << "\n\n" << render_table(reports, kind);
        for (const auto& r : reports) {
            if (r.subgroup != kind || r.note.empty()) continue;
            out << "  note: " << display_name(r.metric);
            if (kind != SubgroupKind::All) out << " / " << r.cell;
            out << ": " << r.note << " (n=" << r.n << ")\n";
        }
        if (kind == SubgroupKind::Length) {
            int excluded = 0;
            for (const auto& r : reports) {
                if (r.subgroup == kind && r.metric == Metric::SemanticEntropy) excluded = r.excluded;
            }
            out << "  " << excluded << " question(s) in the 15-60 character band excluded\n";
        }
    }
    return out.str();
}

std::string render_expert_table(const ExpertMetrics& m) {
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"Clusters", "Lowest PPL (expert)", "Lowest PPL (LLM)", "Largest cluster (expert)",
                    "Largest cluster (LLM)"});
    for (const auto& r : m.by_cluster_count) {
        rows.push_back({std::to_string(r.cluster_count), fraction_cell(r.lowest_perplexity_expert),
                        fraction_cell(r.lowest_perplexity_llm), fraction_cell(r.largest_cluster_expert),
                        fraction_cell(r.largest_cluster_llm)});
    }
    std::ostringstream out;
    out << layout(rows);
    out << "\nSE AUROC (expert labels): " << interval_text(m.semantic_entropy_auroc) << '\n';
    out << "Perplexity AUROC (expert labels): " << interval_text(m.perplexity_auroc) << '\n';
    const auto rate = m.clustering_success_rate();
    out << "Clustering success: " << (rate ? fixed2(*rate) : std::string("n/a")) << " ("
        << m.clustering_successes << "/" << m.annotated << ")\n";
    out << "Annotated: " << m.annotated << ", awaiting annotation: " << m.unannotated << '\n';
    return out.str();
}

std::string render_roc_points(std::span<const EvalItem> items) {
    std::ostringstream out;
    for (Metric m : kMetrics) {
        std::vector<double> scores;
        std::vector<bool> labels;
        for (const auto& i : items) {
            std::optional<double> u;
            bool correct = false;
            switch (m) {
                case Metric::SemanticEntropy: u = i.semantic_entropy; correct = i.largest_cluster_correct; break;
                case Metric::DiscreteSemanticEntropy:
                    u = i.discrete_semantic_entropy;
                    correct = i.largest_cluster_correct;
                    break;
                case Metric::Perplexity: u = i.perplexity; correct = i.lowest_perplexity_correct; break;
            }
            if (!u) continue;
            scores.push_back(correctness_score(*u));
            labels.push_back(correct);
        }
        const auto pos = std::count(labels.begin(), labels.end(), true);
        out << "# " << to_string(m) << '\n';
        if (pos == 0 || pos == static_cast<long>(labels.size())) {
            out << "# undefined: single class\n";
            continue;
        }
        out << "threshold\tfpr\ttpr\n";
        for (const auto& p : roc_curve(scores, labels)) {
            char buf[96];
            std::snprintf(buf, sizeof buf, "%.6g\t%.6f\t%.6f\n", p.threshold, p.fpr, p.tpr);
            out << buf;
        }
    }
    return out.str();
}

}  // namespace sement
