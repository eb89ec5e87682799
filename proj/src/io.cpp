#include "sqd/io.hpp"

#include <fstream>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

namespace sqd {

using nlohmann::json;

namespace {

std::unordered_map<std::string, TokenId> token_index(const Vocab& vocab) {
    std::unordered_map<std::string, TokenId> index;
    for (int k = 0; k < vocab.size(); ++k) index[vocab.tokens[k]] = k;
    return index;
}

bool all_digits(const std::string& s) {
    if (s.empty()) return false;
    for (char c : s)
        if (c < '0' || c > '9') return false;
    return true;
}

}  // namespace

std::vector<TokenId> parse_token_line(const std::string& line, const Vocab& vocab,
                                      int line_number) {
    static thread_local const Vocab* cached_vocab = nullptr;
    static thread_local std::unordered_map<std::string, TokenId> index;
    if (cached_vocab != &vocab) {
        index = token_index(vocab);
        cached_vocab = &vocab;
    }
    std::vector<TokenId> out;
    std::istringstream stream(line);
    std::string tok;
    while (stream >> tok) {
        if (auto it = index.find(tok); it != index.end()) {
            out.push_back(it->second);
        } else if (all_digits(tok)) {
            int id = std::stoi(tok);
            if (!vocab.valid_id(id))
                throw std::invalid_argument("line " + std::to_string(line_number) +
                                            ": token id out of range: " + tok);
            out.push_back(id);
        } else {
            throw std::invalid_argument("line " + std::to_string(line_number) +
                                        ": unknown token: " + tok);
        }
    }
    return out;
}

std::vector<SourceSentence> read_corpus(const std::string& path, const Vocab& vocab) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open corpus file: " + path);
    std::vector<SourceSentence> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto tokens = parse_token_line(line, vocab, lineno);
        if (tokens.empty())
            throw std::invalid_argument("line " + std::to_string(lineno) + ": empty sentence");
        out.push_back(SourceSentence{std::move(tokens)});
    }
    return out;
}

std::vector<ParallelPair> read_parallel_corpus(const std::string& path, const Vocab& vocab) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open corpus file: " + path);
    std::vector<ParallelPair> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw std::invalid_argument("line " + std::to_string(lineno) +
                                        ": expected tab-separated source and target");
        ParallelPair pair;
        pair.source.tokens = parse_token_line(line.substr(0, tab), vocab, lineno);
        pair.target = parse_token_line(line.substr(tab + 1), vocab, lineno);
        if (pair.source.tokens.empty() || pair.target.empty())
            throw std::invalid_argument("line " + std::to_string(lineno) +
                                        ": empty source or target");
        out.push_back(std::move(pair));
    }
    return out;
}

void write_results(const std::string& path, const ResultsFile& results) {
    std::ofstream out(path);
    if (!out) throw std::invalid_argument("cannot write results file: " + path);
    out << results.header_json << "\n";
    for (const auto& r : results.records) {
        json j;
        j["line"] = r.line;
        j["tokens"] = r.tokens;
        j["score"] = r.score;
        j["steps"] = r.steps;
        j["fallback"] = r.fallback;
        if (r.time_ms) j["time_ms"] = *r.time_ms;
        if (!r.trace.empty()) j["trace"] = r.trace;
        out << j.dump() << "\n";
    }
    json footer;
    footer["summary"] = {{"lines", results.records.size()}, {"mean_steps", results.mean_steps}};
    if (results.mean_time_ms) footer["summary"]["mean_time_ms"] = *results.mean_time_ms;
    out << footer.dump() << "\n";
}

ResultsFile read_results(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open results file: " + path);
    ResultsFile out;
    std::string line;
    if (!std::getline(in, line)) throw std::invalid_argument("results file is empty: " + path);
    {
        json header = json::parse(line);
        if (header.value("format", "") != "sqd-results")
            throw std::invalid_argument("not a results file (bad header): " + path);
        out.header_json = line;
    }
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        if (j.contains("summary")) {
            out.mean_steps = j["summary"].value("mean_steps", 0.0);
            if (j["summary"].contains("mean_time_ms"))
                out.mean_time_ms = j["summary"]["mean_time_ms"].get<double>();
            continue;
        }
        ResultRecord r;
        r.line = j.at("line").get<int>();
        r.tokens = j.at("tokens").get<std::vector<std::string>>();
        r.score = j.at("score").get<double>();
        r.steps = j.at("steps").get<int>();
        r.fallback = j.at("fallback").get<bool>();
        if (j.contains("time_ms")) r.time_ms = j["time_ms"].get<double>();
        if (j.contains("trace")) r.trace = j["trace"].get<std::vector<std::vector<double>>>();
        out.records.push_back(std::move(r));
    }
    return out;
}

}  // namespace sqd
