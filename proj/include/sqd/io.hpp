#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sqd/core.hpp"

namespace sqd {

// One sentence per line, whitespace-separated tokens. A token may be either a
// vocab string or a bare numeric id; anything else is an error that names the
// offending token and line.
std::vector<SourceSentence> read_corpus(const std::string& path, const Vocab& vocab);

struct ParallelPair {
    SourceSentence source;
    std::vector<TokenId> target;
};

// Tab-separated source/target per line.
std::vector<ParallelPair> read_parallel_corpus(const std::string& path, const Vocab& vocab);

std::vector<TokenId> parse_token_line(const std::string& line, const Vocab& vocab,
                                      int line_number);

struct ResultRecord {
    int line = 0;
    std::vector<std::string> tokens;
    double score = 0.0;
    int steps = 0;
    bool fallback = false;
    std::optional<double> time_ms;  // omitted unless timings were requested
    std::vector<std::vector<double>> trace;
};

struct ResultsFile {
    std::string header_json;  // versioned header line with the echoed config
    std::vector<ResultRecord> records;
    double mean_steps = 0.0;
    std::optional<double> mean_time_ms;
};

void write_results(const std::string& path, const ResultsFile& results);
ResultsFile read_results(const std::string& path);

}  // namespace sqd
