#include "sement/cluster.hpp"

#include <algorithm>

#include "sement/error.hpp"

namespace sement {

Clustering cluster_generations(std::span<const Generation> gens, std::string_view context,
                               EntailmentJudge& judge) {
    if (gens.empty()) throw ValidationError("cannot cluster an empty set of generations");
    const auto& qid = gens.front().question_id;
    for (std::size_t i = 0; i < gens.size(); ++i) {
        if (gens[i].question_id != qid) {
            throw ValidationError("generations from different questions cannot be clustered together");
        }
        if (gens[i].sample_index != static_cast<int>(i)) {
            throw ValidationError("generations must be ordered by sample_index 0..M-1");
        }
    }

    Clustering out;
    out.question_id = qid;
    std::vector<bool> blank_cluster;
    for (const auto& g : gens) {
        const bool blank = trim(g.text).empty();
        int joined = -1;
        if (!blank) {
            for (std::size_t k = 0; k < out.clusters.size(); ++k) {
                if (blank_cluster[k]) continue;
                const auto& rep = gens[static_cast<std::size_t>(out.representatives[k])];
                if (judge.bidirectional(g.text, rep.text, context, &out.verdict_log)) {
                    joined = static_cast<int>(k);
                    break;
                }
            }
        }
        if (joined >= 0) {
            out.clusters[static_cast<std::size_t>(joined)].push_back(g.sample_index);
        } else {
            out.clusters.push_back({g.sample_index});
            out.representatives.push_back(g.sample_index);
            blank_cluster.push_back(blank);
        }
    }
    return out;
}

std::vector<int> cluster_sizes(const Clustering& c) {
    std::vector<int> sizes;
    sizes.reserve(c.clusters.size());
    for (const auto& members : c.clusters) sizes.push_back(static_cast<int>(members.size()));
    return sizes;
}

void validate_partition(const Clustering& c, int m) {
    const std::string ctx = "clustering for " + c.question_id + ": ";
    if (c.clusters.empty()) throw ValidationError(ctx + "no clusters");
    if (c.representatives.size() != c.clusters.size()) {
        throw ValidationError(ctx + "one representative per cluster required");
    }
    std::vector<int> owner(static_cast<std::size_t>(std::max(m, 0)), -1);
    int previous_first = -1;
    for (std::size_t k = 0; k < c.clusters.size(); ++k) {
        const auto& members = c.clusters[k];
        if (members.empty()) throw ValidationError(ctx + "empty cluster");
        if (!std::is_sorted(members.begin(), members.end())) {
            throw ValidationError(ctx + "cluster members must be ascending");
        }
        if (members.front() != c.representatives[k]) {
            throw ValidationError(ctx + "representative must be the first member");
        }
        if (members.front() <= previous_first) {
            throw ValidationError(ctx + "clusters must be ordered by first member");
        }
        previous_first = members.front();
        for (int s : members) {
            if (s < 0 || s >= m) throw ValidationError(ctx + "sample index out of range");
            if (owner[static_cast<std::size_t>(s)] != -1) {
                throw ValidationError(ctx + "sample " + std::to_string(s) + " is in two clusters");
            }
            owner[static_cast<std::size_t>(s)] = static_cast<int>(k);
        }
    }
    for (int s = 0; s < m; ++s) {
        if (owner[static_cast<std::size_t>(s)] == -1) {
            throw ValidationError(ctx + "sample " + std::to_string(s) + " is not in any cluster");
        }
    }
}

}  // namespace sement
