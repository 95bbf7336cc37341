#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sement/cluster.hpp"
#include "sement/genclient.hpp"

namespace sement {

/// Uncertainty scores for one question, in nats. The likelihood-based fields
/// are absent in logprob-free mode.
struct UncertaintyScore {
    std::string question_id;
    std::optional<double> perplexity;  // of the lowest-perplexity sample
    std::optional<double> semantic_entropy;
    double discrete_semantic_entropy = 0.0;
    int cluster_count = 0;
    std::vector<double> per_sample_perplexity;
    bool logprob_free = false;

    friend bool operator==(const UncertaintyScore&, const UncertaintyScore&) = default;
};

/// exp(-mean(token_logprobs)).
double perplexity(std::span<const double> token_logprobs);
double perplexity(const Generation& gen);

/// Plug-in entropy of the cluster-size distribution.
double discrete_semantic_entropy(std::span<const int> sizes);

/// Plug-in entropy over cluster probabilities proportional to the summed
/// length-normalised sequence likelihoods of each cluster's members.
double semantic_entropy(std::span<const Generation> gens, const Clustering& clustering);

/// Same estimator from raw per-sample log-likelihoods (indexed by sample).
double semantic_entropy_from_logliks(std::span<const double> sequence_logliks,
                                     const Clustering& clustering);

/// `logprob_free` selects discrete-only scoring.
UncertaintyScore score_question(std::span<const Generation> gens, const Clustering& clustering,
                                bool logprob_free = false);

}  // namespace sement
