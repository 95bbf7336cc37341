// Acceptance suite: one PASS/FAIL line per primary criterion. Exit status is
// non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "sement/backends.hpp"
#include "sement/cluster.hpp"
#include "sement/digest.hpp"
#include "sement/entail.hpp"
#include "sement/eval.hpp"
#include "sement/metrics.hpp"
#include "sement/pipeline.hpp"
#include "sement/scoring.hpp"
#include "sement/stages.hpp"
#include "support.hpp"

using namespace sement;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool ok = true;
    std::string detail;
};

int failures = 0;

void criterion(const char* name, double limit_s, const std::function<Outcome()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
        out = body();
    } catch (const std::exception& e) {
        out = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < limit_s;
    const bool pass = out.ok && in_time;
    if (!pass) ++failures;
    std::printf("%s  %-34s %s [%.2f s, limit %.0f s]%s\n", pass ? "PASS" : "FAIL", name, out.detail.c_str(),
                secs, limit_s, in_time ? "" : " (too slow)");
    std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0.0) {
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a, b);
    return buf;
}

/// Random labels 0..k-1 renumbered by first appearance.
std::vector<int> random_labels(std::mt19937_64& rng, int m) {
    const int k = 1 + static_cast<int>(rng() % static_cast<unsigned>(m));
    std::vector<int> raw(static_cast<std::size_t>(m));
    for (auto& l : raw) l = static_cast<int>(rng() % static_cast<unsigned>(k));
    std::map<int, int> renumber;
    for (auto& l : raw) l = renumber.emplace(l, static_cast<int>(renumber.size())).first->second;
    return raw;
}

Clustering clustering_from_labels(const std::vector<int>& labels) {
    Clustering c;
    c.question_id = "q";
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto l = static_cast<std::size_t>(labels[i]);
        if (l == c.clusters.size()) {
            c.clusters.emplace_back();
            c.representatives.push_back(static_cast<int>(i));
        }
        c.clusters[l].push_back(static_cast<int>(i));
    }
    return c;
}

double brute_force_auroc(const std::vector<double>& s, const std::vector<bool>& y) {
    double num = 0.0;
    double pairs = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!y[i]) continue;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (y[j]) continue;
            pairs += 1.0;
            num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
        }
    }
    return num / pairs;
}

Outcome entropy_oracle() {
    std::mt19937_64 rng(101);
    std::uniform_real_distribution<double> loglik(-6.0, -0.01);
    double worst = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int m = 1 + static_cast<int>(rng() % 10);
        const auto labels = random_labels(rng, m);
        const auto c = clustering_from_labels(labels);
        const auto sizes = cluster_sizes(c);
        double direct = 0.0;
        for (int s : sizes) {
            const double p = static_cast<double>(s) / m;
            direct -= p * std::log(p);
        }
        const double dse = discrete_semantic_entropy(sizes);
        worst = std::max(worst, std::abs(dse - direct));

        // Equal likelihoods collapse the weighted estimator to the discrete one.
        const double lp = loglik(rng);
        std::vector<std::string> texts;
        for (int i = 0; i < m; ++i) texts.push_back("t" + std::to_string(i));
        const auto gens = test::make_generations(texts, std::vector<double>(static_cast<std::size_t>(m), lp));
        worst = std::max(worst, std::abs(semantic_entropy(gens, c) - dse));
    }
    return {worst <= 1e-12, fmt("max |error| %.2e over 1000 partitions", worst)};
}

Outcome auroc_oracle() {
    const double example = auroc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, {false, false, true, true});
    std::mt19937_64 rng(202);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + static_cast<int>(rng() % 199);
        const int levels = 2 + static_cast<int>(rng() % 40);  // few levels force ties
        std::vector<double> s(static_cast<std::size_t>(n));
        std::vector<bool> y(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            s[static_cast<std::size_t>(i)] = static_cast<double>(rng() % static_cast<unsigned>(levels)) / levels;
            y[static_cast<std::size_t>(i)] = (rng() % 3) != 0;
        }
        y[0] = true;
        y[1] = false;
        worst = std::max(worst, std::abs(auroc(s, y) - brute_force_auroc(s, y)));
    }
    const bool ok = worst <= 1e-12 && example == 0.75;
    return {ok, fmt("max |error| %.2e over 200 instances; example = %.17g", worst, example)};
}

Outcome clustering_oracle() {
    std::mt19937_64 rng(303);
    int exact = 0;
    for (int trial = 0; trial < 500; ++trial) {
        const int m = 1 + static_cast<int>(rng() % 10);
        const auto labels = random_labels(rng, m);
        ScriptedOracle oracle;
        std::map<int, std::vector<std::string>> variants;
        std::vector<std::string> texts;
        for (int i = 0; i < m; ++i) {
            // Surface variants of one meaning so equality alone cannot cluster them.
            const auto text = "meaning " + std::to_string(labels[static_cast<std::size_t>(i)]) + " phrasing " +
                              std::to_string(rng() % 4);
            texts.push_back(text);
            variants[labels[static_cast<std::size_t>(i)]].push_back(text);
        }
        for (const auto& [label, v] : variants) oracle.add_equivalence_class(v);
        EntailmentJudge judge(oracle);
        const auto got = cluster_generations(test::make_generations(texts, {}), "ctx", judge);
        validate_partition(got, m);
        if (got.clusters == clustering_from_labels(labels).clusters) ++exact;
    }
    return {exact == 500, std::to_string(exact) + "/500 planted partitions recovered"};
}

Outcome definition_ordering() {
    std::mt19937_64 rng(404);
    int violations = 0;
    int ties = 0;
    int tie_failures = 0;
    for (int trial = 0; trial < 500; ++trial) {
        const int m = 2 + static_cast<int>(rng() % 9);
        const auto labels = random_labels(rng, m);
        std::vector<std::string> texts;
        std::vector<double> lps;
        for (int i = 0; i < m; ++i) {
            texts.push_back("cluster " + std::to_string(labels[static_cast<std::size_t>(i)]) + " member " +
                            std::to_string(i));
            lps.push_back(-0.05 - static_cast<double>(rng() % 1000) / 500.0);
        }
        const auto gens = test::make_generations(texts, lps);
        const auto c = clustering_from_labels(labels);
        std::vector<double> ppl;
        for (double lp : lps) ppl.push_back(std::exp(-lp));

        // Each member independently entails the reference or not, so clusters
        // are mixed and the definitions can disagree.
        std::map<std::string, bool> matches;
        for (const auto& t : texts) matches[t] = (rng() % 2) == 0;
        FunctionOracle oracle([&](std::string_view p, std::string_view h, std::string_view) {
            const std::string other(p == "REF" ? h : p);
            const auto it = matches.find(other);
            return it != matches.end() && it->second ? Verdict::Entails : Verdict::NotEntails;
        });

        const auto sizes = cluster_sizes(c);
        const auto top = *std::max_element(sizes.begin(), sizes.end());
        const bool tied = std::count(sizes.begin(), sizes.end(), top) > 1;

        std::map<Definition, bool> correct;
        for (auto d : {Definition::Primary, Definition::Strict, Definition::Majority, Definition::Relaxed}) {
            EntailmentJudge judge(oracle);
            const auto r = score_largest_cluster(gens, c, ppl, "REF", "ctx", judge, d);
            correct[d] = r.correct;
            if (tied && (r.correct || !r.tie_broken_incorrect || judge.backend_calls() != 0)) ++tie_failures;
        }
        ties += tied ? 1 : 0;
        if (correct[Definition::Strict] && !correct[Definition::Majority]) ++violations;
        if (correct[Definition::Majority] && !correct[Definition::Relaxed]) ++violations;
    }
    const bool ok = violations == 0 && tie_failures == 0 && ties > 0;
    return {ok, std::to_string(violations) + " ordering violations; " + std::to_string(ties) + " tied cases, " +
                    std::to_string(tie_failures) + " mis-scored"};
}

// ---------------------------------------------------------------------------
// Synthetic calibration experiment

struct Synthetic {
    std::vector<Question> questions;
    std::vector<AnswerProfile> profiles;
    std::vector<std::pair<std::string, std::string>> references;  // text, meaning
};

/// Questions the mock model "knows" put most weight on the right meaning;
/// the rest spread weight across several meanings. Token confidence depends
/// only weakly on correctness, so perplexity carries little signal.
Synthetic make_synthetic(int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 0.05);
    Synthetic s;
    for (int i = 0; i < n; ++i) {
        const std::string id = "s" + std::to_string(i);
        Question q;
        q.id = id;
        q.part = i % 2 ? Part::Two : Part::One;
        q.domain = "synthetic";
        q.category = i % 3 ? Category::Knowledge : Category::Reasoning;
        q.text = "Synthetic question " + std::to_string(i) + "?";
        q.reference_answer = "reference answer " + std::to_string(i);
        s.references.emplace_back(q.reference_answer, id + ":m0");

        const bool known = unit(rng) < 0.55;
        const int meanings = known ? 2 + static_cast<int>(rng() % 2) : 3 + static_cast<int>(rng() % 4);
        const double base_conf = 0.55 + 0.35 * unit(rng);
        AnswerProfile p;
        p.question_text = q.text;
        p.category = q.category;
        for (int j = 0; j < meanings; ++j) {
            const bool right = j == 0;
            double weight = known ? (right ? 10.0 : 0.3 + 1.2 * unit(rng)) : 0.5 + 2.0 * unit(rng);
            const double conf = std::clamp(base_conf + noise(rng) + (right ? 0.03 : -0.03), 0.05, 0.99);
            // Two surface forms per meaning.
            for (int v = 0; v < 2; ++v) {
                SimulatedAnswer a;
                a.text = (v ? "probably option " : "option ") + std::to_string(i) + "-" + std::to_string(j);
                a.meaning = id + ":m" + std::to_string(j);
                a.weight = weight / 2.0;
                a.confidence = conf;
                p.answers.push_back(std::move(a));
            }
        }
        s.questions.push_back(std::move(q));
        s.profiles.push_back(std::move(p));
    }
    return s;
}

struct ExperimentResult {
    double se_auroc = 0.0;
    double ppl_auroc = 0.0;
};

ExperimentResult run_synthetic(const Synthetic& s, const fs::path& root, double temperature) {
    fs::create_directories(root);
    const fs::path corpus = root / "synthetic.jsonl";
    {
        std::ofstream out(corpus);
        write_corpus(out, s.questions);
    }
    auto backend = std::make_shared<SimulatedBackend>(s.profiles, 17);
    for (const auto& [text, meaning] : s.references) backend->register_meaning(text, meaning);

    PipelineConfig c;
    c.corpus = corpus;
    c.runs_root = root / "runs";
    c.use_cache = false;
    c.generation.answer_temperature = temperature;
    c.bootstrap_resamples = 200;
    c.subgroups = {"all"};
    c.created_at = "2024-01-01T00:00:00Z";
    Pipeline p(c, backend);
    p.run_all();

    ExperimentResult r;
    for (const auto& rep : read_reports(p.open_run())) {
        if (rep.subgroup != SubgroupKind::All || !rep.auroc) continue;
        if (rep.metric == Metric::SemanticEntropy) r.se_auroc = rep.auroc->point;
        if (rep.metric == Metric::Perplexity) r.ppl_auroc = rep.auroc->point;
    }
    return r;
}

Outcome synthetic_experiment() {
    test::TempDir tmp;
    const auto s = make_synthetic(500, 505);
    const auto high = run_synthetic(s, tmp.path() / "high", 1.0);
    const auto low = run_synthetic(s, tmp.path() / "low", 0.2);
    const double gap = high.se_auroc - high.ppl_auroc;
    const bool ok = gap >= 0.05 && high.se_auroc >= low.se_auroc;
    std::ostringstream d;
    d.precision(3);
    d << std::fixed << "SE " << high.se_auroc << " vs perplexity " << high.ppl_auroc << " (gap " << gap
      << "); SE at T=1.0 " << high.se_auroc << " vs T=0.2 " << low.se_auroc;
    return {ok, d.str()};
}

// ---------------------------------------------------------------------------

std::map<std::string, std::string> tree_bytes(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = read_file(e.path());
    }
    return out;
}

Outcome toy_reproducibility() {
    test::TempDir a;
    test::TempDir b;
    auto run_once = [](const fs::path& root) {
        PipelineConfig c;
        c.corpus = test::data_dir() / "toy_corpus.jsonl";
        c.stub_profiles = test::data_dir() / "toy_profiles.jsonl";
        c.runs_root = root;
        c.use_cache = false;
        c.created_at = "2024-01-01T00:00:00Z";
        Pipeline p(c);
        p.run_all();
        return p.run_dir();
    };
    const auto da = run_once(a.path());
    const auto db = run_once(b.path());
    const auto ta = tree_bytes(da);
    const auto tb = tree_bytes(db);
    const bool identical = da.filename() == db.filename() && ta == tb;

    const std::string report = ta.count("report.txt") ? ta.at("report.txt") : "";
    // Header rows, compared cell by cell.
    std::vector<std::vector<std::string>> header_rows;
    std::istringstream lines(report);
    for (std::string line; std::getline(lines, line);) {
        if (line.rfind("Metric", 0) != 0) continue;
        std::vector<std::string> cells;
        std::size_t start = 0;
        for (std::size_t bar; (bar = line.find(" | ", start)) != std::string::npos; start = bar + 3) {
            cells.push_back(line.substr(start, bar - start));
        }
        cells.push_back(line.substr(start));
        for (auto& cell : cells) cell.erase(cell.find_last_not_of(' ') + 1);
        header_rows.push_back(cells);
    }
    int missing = 0;
    for (const char* column : {"", "Part", "Category", "Length", "Temp"}) {
        std::vector<std::string> want = {"Metric"};
        if (*column) want.emplace_back(column);
        want.emplace_back("Accuracy (95% CI)");
        want.emplace_back("AUROC (95% CI)");
        missing += std::count(header_rows.begin(), header_rows.end(), want) == 1 ? 0 : 1;
    }
    for (const char* metric : {"Semantic Entropy", "Perplexity"}) {
        missing += report.find(metric) == std::string::npos ? 1 : 0;
    }
    const bool ok = identical && missing == 0 && ta.size() >= 8;
    return {ok, std::to_string(ta.size()) + " files, " + (identical ? "byte-identical" : "DIFFERENT") + ", " +
                    std::to_string(missing) + " missing table elements"};
}

Outcome wilson_and_bootstrap() {
    std::vector<bool> half(100, false);
    std::fill(half.begin(), half.begin() + 50, true);
    const auto ci = accuracy_ci(half);
    const double z = 1.959963984540054;
    const double centre = (0.5 + z * z / 200.0) / (1.0 + z * z / 100.0);
    const double radius = z * std::sqrt(0.25 / 100.0 + z * z / 40000.0) / (1.0 + z * z / 100.0);
    const bool wilson = std::abs(ci.lower - 0.403) <= 5e-3 && std::abs(ci.upper - 0.597) <= 5e-3 &&
                        std::abs(ci.lower - (centre - radius)) <= 1e-12 &&
                        std::abs(ci.upper - (centre + radius)) <= 1e-12;

    std::mt19937_64 rng(707);
    std::vector<double> s(300);
    std::vector<bool> y(300);
    for (std::size_t i = 0; i < s.size(); ++i) {
        y[i] = (rng() % 2) == 0;
        s[i] = static_cast<double>(rng() % 100) / 100.0 + (y[i] ? 0.3 : 0.0);
    }
    const auto first = auroc_ci(s, y, 2000, 42);
    bool deterministic = true;
    for (int rep = 0; rep < 3; ++rep) {
        const auto again = auroc_ci(s, y, 2000, 42);
        deterministic = deterministic && again.lower == first.lower && again.upper == first.upper &&
                        again.point == first.point;
    }
    std::ostringstream d;
    d.precision(4);
    d << std::fixed << "Wilson (" << ci.lower << ", " << ci.upper << "); bootstrap ("
      << first.lower << ", " << first.upper << ") " << (deterministic ? "repeatable" : "NOT repeatable");
    return {wilson && deterministic, d.str()};
}

}  // namespace

int main() {
    criterion("entropy oracle equivalence", 5, entropy_oracle);
    criterion("AUROC oracle equivalence", 10, auroc_oracle);
    criterion("clustering oracle equivalence", 5, clustering_oracle);
    criterion("correctness-definition ordering", 5, definition_ordering);
    criterion("synthetic calibration experiment", 120, synthetic_experiment);
    criterion("end-to-end reproducibility", 30, toy_reproducibility);
    criterion("Wilson CI and bootstrap determinism", 60, wilson_and_bootstrap);
    std::printf("%s: %d criterion(s) failed\n", failures ? "FAILED" : "OK", failures);
    return failures ? 1 : 0;
}
