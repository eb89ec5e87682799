#include "sqd/core.hpp"

#include <cmath>
#include <unordered_set>

namespace sqd {

void Vocab::validate() const {
    if (tokens.empty()) throw std::invalid_argument("vocab: empty token list");
    if (!valid_id(bos_id) || !valid_id(eos_id))
        throw std::invalid_argument("vocab: bos/eos id out of range");
    if (bos_id == eos_id) throw std::invalid_argument("vocab: bos_id == eos_id");
    std::unordered_set<std::string> seen;
    for (const auto& t : tokens)
        if (!seen.insert(t).second)
            throw std::invalid_argument("vocab: duplicate token '" + t + "'");
}

Vocab Vocab::make_default(int v) {
    if (v < 2) throw std::invalid_argument("vocab: need at least BOS and EOS");
    Vocab vocab;
    vocab.tokens.reserve(v);
    vocab.tokens.push_back("<s>");
    vocab.tokens.push_back("</s>");
    for (int i = 2; i < v; ++i) vocab.tokens.push_back("w" + std::to_string(i));
    vocab.bos_id = 0;
    vocab.eos_id = 1;
    return vocab;
}

void SearchConfig::validate() const {
    if (beam_size < 1) throw std::invalid_argument("search: beam_size must be >= 1");
    if (max_steps < 1) throw std::invalid_argument("search: max_steps must be >= 1");
    if (retain_size < beam_size)
        throw std::invalid_argument("search: retain_size must be >= beam_size");
    if (queue_capacity && *queue_capacity < retain_size)
        throw std::invalid_argument("search: queue_capacity must be >= retain_size");
}

double normalized_logprob(double cum_logprob, int length, double lambda) {
    if (length < 1) throw std::invalid_argument("normalized_logprob: empty hypothesis");
    return cum_logprob / std::pow(static_cast<double>(length), lambda);
}

double normalized_logprob(const Hypothesis& h, double lambda) {
    return normalized_logprob(h.cum_logprob, h.length(), lambda);
}

int compare_hypotheses(const Hypothesis& a, const Hypothesis& b) {
    if (!a.cached_score || !b.cached_score)
        throw std::logic_error("compare_hypotheses: cached_score not populated");
    if (*a.cached_score != *b.cached_score)
        return *a.cached_score > *b.cached_score ? -1 : 1;
    if (a.seq_no != b.seq_no) return a.seq_no < b.seq_no ? -1 : 1;
    if (a.tokens != b.tokens) return a.tokens < b.tokens ? -1 : 1;
    return 0;
}

}  // namespace sqd
