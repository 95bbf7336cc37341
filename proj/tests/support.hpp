#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "sement/genclient.hpp"

namespace sement::test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("sement-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    [[nodiscard]] const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline std::filesystem::path data_dir() { return SEMENT_TEST_DATA_DIR; }

/// Generations for one question from texts and per-sample mean log-probs.
inline std::vector<Generation> make_generations(const std::vector<std::string>& texts,
                                                const std::vector<double>& mean_logprob = {},
                                                const std::string& qid = "q") {
    std::vector<Generation> out;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        Generation g;
        g.question_id = qid;
        g.sample_index = static_cast<int>(i);
        g.text = texts[i];
        if (!mean_logprob.empty()) g.token_logprobs = {mean_logprob[i]};
        out.push_back(std::move(g));
    }
    return out;
}

}  // namespace sement::test
