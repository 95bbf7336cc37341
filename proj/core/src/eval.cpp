#include "sement/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <thread>

#include "hashing.hpp"
#include "parallel.hpp"
#include "sement/error.hpp"

namespace sement {

std::string_view to_string(Metric m) noexcept {
    switch (m) {
        case Metric::SemanticEntropy: return "semantic_entropy";
        case Metric::DiscreteSemanticEntropy: return "discrete_semantic_entropy";
        case Metric::Perplexity: return "perplexity";
    }
    return "?";
}

std::string_view display_name(Metric m) noexcept {
    switch (m) {
        case Metric::SemanticEntropy: return "Semantic Entropy (SE)";
        case Metric::DiscreteSemanticEntropy: return "Discrete SE";
        case Metric::Perplexity: return "Perplexity";
    }
    return "?";
}

namespace {

void check_labels(std::span<const double> scores, const std::vector<bool>& labels,
                  std::size_t& positives, std::size_t& negatives) {
    if (scores.size() != labels.size()) throw ValidationError("scores and labels differ in length");
    positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true));
    negatives = labels.size() - positives;
    if (positives == 0 || negatives == 0) {
        throw ValidationError("AUROC undefined: labels contain a single class");
    }
}

/// Mann-Whitney U of the positives from mid-ranks.
double auroc_unchecked(std::span<const double> scores, const std::vector<bool>& labels,
                       std::size_t positives, std::size_t negatives) {
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    double rank_sum = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        // Ranks i+1..j+1 share their mean.
        const double mid = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t k = i; k <= j; ++k) {
            if (labels[order[k]]) rank_sum += mid;
        }
        i = j + 1;
    }
    const double p = static_cast<double>(positives);
    const double u = rank_sum - p * (p + 1.0) / 2.0;
    return u / (p * static_cast<double>(negatives));
}

double percentile(std::vector<double>& sorted, double q) {
    const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

double auroc(std::span<const double> scores, const std::vector<bool>& labels) {
    std::size_t pos = 0;
    std::size_t neg = 0;
    check_labels(scores, labels, pos, neg);
    return auroc_unchecked(scores, labels, pos, neg);
}

Interval accuracy_ci(const std::vector<bool>& correct) {
    if (correct.empty()) throw ValidationError("accuracy of an empty sample");
    constexpr double z = 1.959963984540054;  // 97.5th normal percentile
    const double n = static_cast<double>(correct.size());
    const double k = static_cast<double>(std::count(correct.begin(), correct.end(), true));
    const double p = k / n;
    const double z2 = z * z;
    const double denom = 1.0 + z2 / n;
    const double centre = (p + z2 / (2.0 * n)) / denom;
    const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
    return Interval{p, std::max(0.0, std::min(p, centre - half)), std::min(1.0, std::max(p, centre + half))};
}

Interval auroc_ci(std::span<const double> scores, const std::vector<bool>& labels, int resamples,
                  std::uint64_t seed) {
    std::size_t pos = 0;
    std::size_t neg = 0;
    check_labels(scores, labels, pos, neg);
    if (pos < 2 || neg < 2) {
        throw ValidationError("bootstrap AUROC interval needs at least two members in each class");
    }
    if (resamples <= 0) throw ValidationError("bootstrap resamples must be positive");

    std::vector<double> pos_scores;
    std::vector<double> neg_scores;
    for (std::size_t i = 0; i < scores.size(); ++i) (labels[i] ? pos_scores : neg_scores).push_back(scores[i]);

    const auto b_count = static_cast<std::size_t>(resamples);
    std::vector<double> replicates(b_count);
    const std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
    detail::parallel_for(b_count, workers, [&](std::size_t b) {
        detail::SplitMixStream rng(detail::mix(seed, static_cast<std::uint64_t>(b)));
        std::vector<double> s;
        std::vector<bool> l;
        s.reserve(pos + neg);
        l.reserve(pos + neg);
        for (std::size_t i = 0; i < pos; ++i) {
            s.push_back(pos_scores[rng.below(pos)]);
            l.push_back(true);
        }
        for (std::size_t i = 0; i < neg; ++i) {
            s.push_back(neg_scores[rng.below(neg)]);
            l.push_back(false);
        }
        replicates[b] = auroc_unchecked(s, l, pos, neg);
    });
    std::sort(replicates.begin(), replicates.end());

    Interval out;
    out.point = auroc_unchecked(scores, labels, pos, neg);
    // Percentile intervals need not bracket the plug-in estimate; widen to it.
    out.lower = std::min(percentile(replicates, 0.025), out.point);
    out.upper = std::max(percentile(replicates, 0.975), out.point);
    return out;
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, const std::vector<bool>& labels) {
    std::size_t pos = 0;
    std::size_t neg = 0;
    check_labels(scores, labels, pos, neg);
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    std::vector<RocPoint> pts;
    pts.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    std::size_t tp = 0;
    std::size_t fp = 0;
    for (std::size_t i = 0; i < order.size();) {
        const double threshold = scores[order[i]];
        while (i < order.size() && scores[order[i]] == threshold) {
            (labels[order[i]] ? tp : fp) += 1;
            ++i;
        }
        pts.push_back({threshold, static_cast<double>(fp) / static_cast<double>(neg),
                       static_cast<double>(tp) / static_cast<double>(pos)});
    }
    return pts;
}

// ---------------------------------------------------------------------------

std::string_view to_string(SubgroupKind k) noexcept {
    switch (k) {
        case SubgroupKind::All: return "all";
        case SubgroupKind::Part: return "part";
        case SubgroupKind::Category: return "category";
        case SubgroupKind::Length: return "length";
        case SubgroupKind::Temperature: return "temperature";
    }
    return "?";
}

std::optional<SubgroupKind> parse_subgroup(std::string_view name) noexcept {
    for (auto k : {SubgroupKind::All, SubgroupKind::Part, SubgroupKind::Category, SubgroupKind::Length,
                   SubgroupKind::Temperature}) {
        if (to_string(k) == name) return k;
    }
    return std::nullopt;
}

LengthBin length_bin(std::string_view answer) noexcept {
    const auto len = answer_length(answer);
    if (len < kShortBelow) return LengthBin::Short;
    if (len > kLongAbove) return LengthBin::Long;
    return LengthBin::Excluded;
}

std::vector<EvalItem> join_eval_items(std::span<const Question> eligible,
                                      std::span<const UncertaintyScore> scores,
                                      std::span<const CorrectnessRecord> records,
                                      Definition cluster_definition, double temperature) {
    std::map<std::string, const UncertaintyScore*> score_of;
    for (const auto& s : scores) score_of[s.question_id] = &s;
    std::map<std::string, const CorrectnessRecord*> lp_of;
    std::map<std::string, const CorrectnessRecord*> lc_of;
    for (const auto& r : records) {
        if (r.method == Method::LowestPerplexity) {
            lp_of[r.question_id] = &r;
        } else if (r.definition == cluster_definition) {
            lc_of[r.question_id] = &r;
        }
    }

    std::vector<EvalItem> items;
    items.reserve(eligible.size());
    for (const auto& q : eligible) {
        if (!q.eligible()) continue;
        auto s = score_of.find(q.id);
        auto lc = lc_of.find(q.id);
        if (s == score_of.end() || lc == lc_of.end()) {
            throw ValidationError("question " + q.id + " has no metrics or correctness record");
        }
        EvalItem item;
        item.question_id = q.id;
        item.part = q.part;
        item.category = q.category;
        item.temperature = temperature;
        item.largest_cluster_text = lc->second->chosen_text;
        item.largest_cluster_correct = lc->second->correct;
        item.semantic_entropy = s->second->semantic_entropy;
        item.discrete_semantic_entropy = s->second->discrete_semantic_entropy;
        item.perplexity = s->second->perplexity;
        if (auto lp = lp_of.find(q.id); lp != lp_of.end()) {
            item.lowest_perplexity_text = lp->second->chosen_text;
            item.lowest_perplexity_correct = lp->second->correct;
        } else {
            item.perplexity.reset();
        }
        items.push_back(std::move(item));
    }
    return items;
}

namespace {

std::optional<double> uncertainty(const EvalItem& item, Metric m) {
    switch (m) {
        case Metric::SemanticEntropy: return item.semantic_entropy;
        case Metric::DiscreteSemanticEntropy: return item.discrete_semantic_entropy;
        case Metric::Perplexity: return item.perplexity;
    }
    return std::nullopt;
}

bool correct_for(const EvalItem& item, Metric m) {
    return m == Metric::Perplexity ? item.lowest_perplexity_correct : item.largest_cluster_correct;
}

const std::string& text_for(const EvalItem& item, Metric m) {
    return m == Metric::Perplexity ? item.lowest_perplexity_text : item.largest_cluster_text;
}

std::string temperature_label(double t) {
    char buf[32];
    if (std::abs(t * 10.0 - std::round(t * 10.0)) < 1e-9) {
        std::snprintf(buf, sizeof buf, "%.1f", t);
    } else {
        std::snprintf(buf, sizeof buf, "%g", t);
    }
    return buf;
}

/// (cell label, membership predicate) pairs for one split.
std::vector<std::pair<std::string, std::function<bool(const EvalItem&, Metric)>>> cells_for(
    SubgroupKind kind, std::span<const EvalItem> items) {
    using Pred = std::function<bool(const EvalItem&, Metric)>;
    std::vector<std::pair<std::string, Pred>> cells;
    switch (kind) {
        case SubgroupKind::All:
            cells.emplace_back("all", [](const EvalItem&, Metric) { return true; });
            break;
        case SubgroupKind::Part:
            cells.emplace_back("Part 1", [](const EvalItem& i, Metric) { return i.part == Part::One; });
            cells.emplace_back("Part 2", [](const EvalItem& i, Metric) { return i.part == Part::Two; });
            break;
        case SubgroupKind::Category:
            cells.emplace_back("Knowledge",
                               [](const EvalItem& i, Metric) { return i.category == Category::Knowledge; });
            cells.emplace_back("Reasoning",
                               [](const EvalItem& i, Metric) { return i.category == Category::Reasoning; });
            cells.emplace_back("Unlabelled",
                               [](const EvalItem& i, Metric) { return i.category == Category::Unlabelled; });
            break;
        case SubgroupKind::Length:
            cells.emplace_back("Short", [](const EvalItem& i, Metric m) {
                return length_bin(text_for(i, m)) == LengthBin::Short;
            });
            cells.emplace_back("Long", [](const EvalItem& i, Metric m) {
                return length_bin(text_for(i, m)) == LengthBin::Long;
            });
            break;
        case SubgroupKind::Temperature: {
            std::vector<double> temps;
            for (const auto& i : items) temps.push_back(i.temperature);
            std::sort(temps.begin(), temps.end());
            temps.erase(std::unique(temps.begin(), temps.end()), temps.end());
            for (double t : temps) {
                cells.emplace_back(temperature_label(t),
                                   [t](const EvalItem& i, Metric) { return i.temperature == t; });
            }
            break;
        }
    }
    return cells;
}

}  // namespace

std::vector<EvalReport> stratify(std::span<const EvalItem> items, SubgroupKind kind,
                                 const EvalOptions& options) {
    std::vector<EvalReport> out;
    const auto cells = cells_for(kind, items);
    for (Metric m : kMetrics) {
        std::size_t available = 0;
        for (const auto& i : items) available += uncertainty(i, m).has_value() ? 1 : 0;
        std::size_t covered = 0;
        std::vector<EvalReport> metric_reports;

        for (const auto& [label, member] : cells) {
            EvalReport rep;
            rep.metric = m;
            rep.subgroup = kind;
            rep.cell = label;
            std::vector<double> scores;
            std::vector<bool> labels;
            for (const auto& i : items) {
                const auto u = uncertainty(i, m);
                if (!u || !member(i, m)) continue;
                scores.push_back(correctness_score(*u));
                labels.push_back(correct_for(i, m));
            }
            rep.n = static_cast<int>(scores.size());
            covered += scores.size();
            if (rep.n == 0) {
                rep.note = available == 0 ? "metric unavailable" : "empty cell";
            } else {
                const auto acc = accuracy_ci(labels);
                rep.accuracy = Estimate{acc.point, acc.lower, acc.upper};
                const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true));
                const auto neg = labels.size() - pos;
                if (pos == 0 || neg == 0) {
                    rep.note = "single class; AUROC undefined";
                } else if (pos < 2 || neg < 2) {
                    rep.auroc = Estimate{auroc(scores, labels), std::nullopt, std::nullopt};
                    rep.note = "too few per class for a bootstrap interval";
                } else {
                    const auto ci = auroc_ci(scores, labels, options.resamples, options.seed);
                    rep.auroc = Estimate{ci.point, ci.lower, ci.upper};
                }
            }
            metric_reports.push_back(std::move(rep));
        }
        // Questions of the evaluated set that fall in no cell of this split.
        const int left_out = static_cast<int>(items.size() - covered);
        for (auto& rep : metric_reports) rep.excluded = left_out;
        for (auto& rep : metric_reports) out.push_back(std::move(rep));
    }
    return out;
}

}  // namespace sement
