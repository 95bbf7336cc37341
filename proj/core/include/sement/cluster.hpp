#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sement/entail.hpp"
#include "sement/genclient.hpp"

namespace sement {

/// Partition of one question's samples into meaning-equivalence classes.
/// Clusters are ordered by creation, members ascending; representatives[k]
/// is the first member of clusters[k].
struct Clustering {
    std::string question_id;
    std::vector<std::vector<int>> clusters;
    std::vector<int> representatives;
    std::vector<EntailmentVerdict> verdict_log;

    friend bool operator==(const Clustering&, const Clustering&) = default;
};

/// Greedy single pass in sample_index order: each generation joins the first
/// existing cluster whose representative it bidirectionally entails,
/// otherwise it opens a new cluster. Blank answers become singletons and are
/// never compared.
Clustering cluster_generations(std::span<const Generation> gens, std::string_view context,
                               EntailmentJudge& judge);

std::vector<int> cluster_sizes(const Clustering& c);

/// Throws ValidationError unless `c` partitions 0..m-1 with the ordering
/// conventions above.
void validate_partition(const Clustering& c, int m);

}  // namespace sement
