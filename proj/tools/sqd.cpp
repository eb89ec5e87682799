#include <atomic>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "sqd/io.hpp"
#include "sqd/lengthpred.hpp"
#include "sqd/model.hpp"
#include "sqd/search.hpp"

using nlohmann::json;
using namespace sqd;

namespace {

struct DecodeOptions {
    std::string strategy = "sqd";  // beam | beam-lnorm | sqd
    SearchConfig search;
    ScoreConfig score;
    bool retain_given = false;
    bool timings = false;
    int threads = 1;
};

void add_decode_flags(CLI::App* cmd, DecodeOptions& opt) {
    cmd->add_option("--strategy", opt.strategy, "beam | beam-lnorm | sqd")
        ->check(CLI::IsMember({"beam", "beam-lnorm", "sqd"}));
    cmd->add_option("--beam-size", opt.search.beam_size, "beam size B")->check(CLI::PositiveNumber);
    cmd->add_option("--max-steps", opt.search.max_steps, "max decoding steps")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--retain-size", opt.search.retain_size,
                    "retained candidates per step (default 2*B)")
        ->check(CLI::PositiveNumber)
        ->each([&](const std::string&) { opt.retain_given = true; });
    cmd->add_option("--lambda", opt.score.lambda, "length-normalization exponent");
    cmd->add_option("--alpha", opt.score.alpha, "progress-penalty weight");
    cmd->add_option("--beta", opt.score.beta, "progress-penalty exponent");
    cmd->add_option("--gamma", opt.score.gamma,
                    "length-matching penalty weight (nonzero enables LMP)");
    cmd->add_option("--tau", opt.score.tau, "length-matching score threshold");
    cmd->add_option_function<std::string>(
           "--lms-mode",
           [&opt](const std::string& s) { opt.score.lms_mode = lms_mode_from_string(s); },
           "expectation | as-printed")
        ->check(CLI::IsMember({"expectation", "as-printed"}));
    cmd->add_option("--seed", opt.search.seed, "seed for stochastic components");
    cmd->add_flag("--trace,!--no-trace", opt.search.trace, "record per-rank score traces");
    cmd->add_flag("--timings", opt.timings,
                  "include wall-clock times in the results (breaks byte-determinism)");
    cmd->add_option("--threads", opt.threads, "worker threads for corpus decoding")
        ->check(CLI::PositiveNumber);
}

void finalize_decode_options(DecodeOptions& opt) {
    if (!opt.retain_given) opt.search.retain_size = 2 * opt.search.beam_size;
    if (opt.strategy != "sqd") opt.search.retain_size = std::max(opt.search.retain_size,
                                                                 opt.search.beam_size);
    opt.score.lmp_enabled = opt.score.gamma != 0.0;
    opt.search.validate();
}

json config_echo(const DecodeOptions& opt, const std::string& model_path) {
    return json{{"strategy", opt.strategy},
                {"model", model_path},
                {"beam_size", opt.search.beam_size},
                {"max_steps", opt.search.max_steps},
                {"retain_size", opt.search.retain_size},
                {"lambda", opt.score.lambda},
                {"alpha", opt.score.alpha},
                {"beta", opt.score.beta},
                {"gamma", opt.score.gamma},
                {"tau", opt.score.tau},
                {"lms_mode", to_string(opt.score.lms_mode)},
                {"seed", opt.search.seed},
                {"trace", opt.search.trace}};
}

DecodeResult decode_one(const SequenceModel& model, const LengthPredictor* predictor,
                        const SourceSentence& src, const DecodeOptions& opt) {
    if (opt.strategy == "beam")
        return beam_search(model, src, opt.search, BeamMode::Vanilla);
    if (opt.strategy == "beam-lnorm")
        return beam_search(model, src, opt.search, BeamMode::LengthNorm, opt.score.lambda);
    return single_queue_decode(model, src, opt.search, opt.score, predictor);
}

std::vector<DecodeResult> decode_corpus(const SequenceModel& model,
                                        const LengthPredictor* predictor,
                                        const std::vector<SourceSentence>& corpus,
                                        const DecodeOptions& opt) {
    std::vector<DecodeResult> results(corpus.size());
    int workers = std::min<int>(opt.threads, static_cast<int>(corpus.size()));
    if (workers <= 1) {
        for (size_t i = 0; i < corpus.size(); ++i)
            results[i] = decode_one(model, predictor, corpus[i], opt);
        return results;
    }
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr error;
    std::mutex error_mutex;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            try {
                for (size_t i = next.fetch_add(1); i < corpus.size(); i = next.fetch_add(1))
                    results[i] = decode_one(model, predictor, corpus[i], opt);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
    return results;
}

ResultsFile to_results_file(const std::vector<DecodeResult>& results, const Vocab& vocab,
                            const DecodeOptions& opt, const json& config) {
    ResultsFile out;
    json header;
    header["format"] = "sqd-results";
    header["version"] = 1;
    header["config"] = config;
    out.header_json = header.dump();
    double steps = 0.0, time = 0.0;
    for (size_t i = 0; i < results.size(); ++i) {
        const auto& r = results[i];
        ResultRecord rec;
        rec.line = static_cast<int>(i);
        for (TokenId t : r.best.tokens) rec.tokens.push_back(vocab.tokens[t]);
        rec.score = r.best.cached_score.value_or(0.0);
        rec.steps = r.steps_taken;
        rec.fallback = r.fallback;
        if (opt.timings) rec.time_ms = r.time_ms;
        if (opt.search.trace) rec.trace = r.rank_score_trace;
        steps += r.steps_taken;
        time += r.time_ms;
        out.records.push_back(std::move(rec));
    }
    if (!results.empty()) {
        out.mean_steps = steps / static_cast<double>(results.size());
        if (opt.timings) out.mean_time_ms = time / static_cast<double>(results.size());
    }
    return out;
}

std::shared_ptr<LengthPredictor> maybe_load_predictor(const std::string& model_path,
                                                      const DecodeOptions& opt) {
    if (!opt.score.lmp_enabled) return nullptr;
    return load_predictor_section(model_path);  // throws with a clear message if absent
}

// ---------------------------------------------------------------------------

int cmd_decode(const std::string& model_path, const std::string& corpus_path,
               const std::string& out_path, DecodeOptions opt) {
    finalize_decode_options(opt);
    auto model = load_model(model_path);
    auto predictor = maybe_load_predictor(model_path, opt);
    auto corpus = read_corpus(corpus_path, model->vocab());
    auto results = decode_corpus(*model, predictor.get(), corpus, opt);
    write_results(out_path, to_results_file(results, model->vocab(), opt,
                                            config_echo(opt, model_path)));
    return 0;
}

int cmd_train_lmp(const std::string& model_path, const std::string& corpus_path,
                  const std::string& out_path, const std::string& loss_path, int epochs,
                  double lr, int hidden, int head_hidden, int greedy_max_steps,
                  std::uint64_t seed) {
    auto model = load_model(model_path);
    auto pairs = read_parallel_corpus(corpus_path, model->vocab());
    if (pairs.empty()) throw std::invalid_argument("train-lmp: empty corpus");
    std::vector<TrainingExample> corpus;
    corpus.reserve(pairs.size());
    for (const auto& p : pairs)
        corpus.push_back(make_training_example(*model, p.source,
                                               static_cast<int>(p.target.size()),
                                               greedy_max_steps));

    PredictorConfig pcfg;
    pcfg.hidden_dim = hidden;
    pcfg.head_hidden_dim = head_hidden;
    pcfg.init_seed = seed;
    LengthPredictor predictor(pcfg, model->summary_dim(), model->embed_dim());

    nn::AdamConfig adam;
    adam.lr = lr;
    auto report = predictor.train(corpus, *model, epochs, adam, seed);

    if (out_path != model_path) {
        std::ifstream src(model_path, std::ios::binary);
        std::ofstream dst(out_path, std::ios::binary);
        if (!src || !dst) throw std::invalid_argument("train-lmp: cannot copy model file");
        dst << src.rdbuf();
    }
    save_predictor_section(out_path, predictor);

    std::ofstream loss(loss_path);
    if (!loss) throw std::invalid_argument("cannot write loss file: " + loss_path);
    for (double l : report.epoch_mean_loss) loss << json(l).dump() << "\n";
    return 0;
}

int cmd_rankstats(const std::vector<std::string>& result_paths, const std::string& out_path,
                  int beam_size) {
    std::vector<DecodeResult> decodes;
    for (const auto& path : result_paths) {
        auto file = read_results(path);
        for (const auto& rec : file.records) {
            if (rec.trace.empty())
                throw std::invalid_argument(path +
                                            ": results carry no rank-score traces; re-run "
                                            "decode with --trace");
            DecodeResult r;
            r.rank_score_trace = rec.trace;
            decodes.push_back(std::move(r));
        }
    }
    auto cells = collect_rank_stats(decodes, beam_size);
    std::ofstream out(out_path);
    if (!out) throw std::invalid_argument("cannot write csv file: " + out_path);
    out << "step,rank,mean_score,count\n";
    for (const auto& c : cells)
        out << c.step << "," << c.rank << "," << json(c.mean_score).dump() << "," << c.count
            << "\n";
    return 0;
}

int cmd_sweep(const std::string& model_path, const std::string& corpus_path,
              const std::string& grid_path, const std::string& out_path, DecodeOptions base) {
    std::ifstream gin(grid_path);
    if (!gin) throw std::invalid_argument("cannot open grid file: " + grid_path);
    json grid = json::parse(gin);

    // Cartesian product over the listed axes; unlisted parameters keep the
    // base flag values.
    std::vector<json> combos{json::object()};
    for (auto& [key, values] : grid.items()) {
        if (!values.is_array() || values.empty())
            throw std::invalid_argument("grid axis '" + key + "' must be a nonempty array");
        std::vector<json> expanded;
        for (const auto& combo : combos)
            for (const auto& v : values) {
                json c = combo;
                c[key] = v;
                expanded.push_back(std::move(c));
            }
        combos = std::move(expanded);
    }

    auto model = load_model(model_path);

    // References (if any) enable the exact-match objective.
    bool has_refs = false;
    {
        std::ifstream probe(corpus_path);
        std::string first;
        if (probe && std::getline(probe, first)) has_refs = first.find('\t') != std::string::npos;
    }
    std::vector<SourceSentence> sources;
    std::vector<std::vector<TokenId>> refs;
    if (has_refs) {
        for (auto& p : read_parallel_corpus(corpus_path, model->vocab())) {
            sources.push_back(std::move(p.source));
            refs.push_back(std::move(p.target));
        }
    } else {
        sources = read_corpus(corpus_path, model->vocab());
    }

    struct Row {
        json config;
        double objective = 0.0;
        size_t order = 0;
    };
    std::vector<Row> rows;
    for (size_t ci = 0; ci < combos.size(); ++ci) {
        DecodeOptions opt = base;
        const json& c = combos[ci];
        if (c.contains("strategy")) opt.strategy = c["strategy"].get<std::string>();
        if (c.contains("beam_size")) opt.search.beam_size = c["beam_size"].get<int>();
        if (c.contains("retain_size")) {
            opt.search.retain_size = c["retain_size"].get<int>();
            opt.retain_given = true;
        }
        if (c.contains("lambda")) opt.score.lambda = c["lambda"].get<double>();
        if (c.contains("alpha")) opt.score.alpha = c["alpha"].get<double>();
        if (c.contains("beta")) opt.score.beta = c["beta"].get<double>();
        if (c.contains("gamma")) opt.score.gamma = c["gamma"].get<double>();
        if (c.contains("tau")) opt.score.tau = c["tau"].get<double>();
        if (c.contains("lms_mode"))
            opt.score.lms_mode = lms_mode_from_string(c["lms_mode"].get<std::string>());
        finalize_decode_options(opt);
        auto predictor = maybe_load_predictor(model_path, opt);
        auto results = decode_corpus(*model, predictor.get(), sources, opt);

        double objective = 0.0;
        if (has_refs) {
            int matches = 0;
            for (size_t i = 0; i < results.size(); ++i) {
                auto tokens = results[i].best.tokens;
                if (!tokens.empty() && tokens.back() == model->vocab().eos_id) tokens.pop_back();
                if (tokens == refs[i]) ++matches;
            }
            objective = static_cast<double>(matches) / static_cast<double>(results.size());
        } else {
            for (const auto& r : results) objective += r.best.cached_score.value_or(0.0);
            objective /= static_cast<double>(results.size());
        }
        rows.push_back({config_echo(opt, model_path), objective, ci});
    }
    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
        if (a.objective != b.objective) return a.objective > b.objective;
        return a.order < b.order;
    });

    std::ofstream out(out_path);
    if (!out) throw std::invalid_argument("cannot write sweep file: " + out_path);
    json header;
    header["format"] = "sqd-sweep";
    header["version"] = 1;
    header["objective"] = has_refs ? "exact_match_rate" : "mean_score";
    out << header.dump() << "\n";
    for (const auto& r : rows) {
        json j;
        j["objective"] = r.objective;
        j["config"] = r.config;
        out << j.dump() << "\n";
    }
    return 0;
}

int cmd_make_fixture(const std::string& out_path, std::uint64_t seed, int vocab_size, int states,
                     double eos_weight, const std::string& summary_mode) {
    auto model = TabularModel::random_fixture(seed, vocab_size, states, eos_weight);
    if (summary_mode == "length") model->use_length_encoding_summary(2, 0.1);
    save_model(*model, out_path);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Single-queue decoding experiment runner"};
    app.require_subcommand(1);
    const char* env_config = std::getenv("SQD_CONFIG");
    app.set_config("--config", env_config ? env_config : "",
                   "Config file with default flag values");

    // decode
    auto* decode = app.add_subcommand("decode", "Decode a corpus with a chosen strategy");
    std::string model_path, corpus_path, out_path = "results.jsonl";
    decode->add_option("--model", model_path, "model file")->required();
    decode->add_option("--corpus", corpus_path, "corpus file, one sentence per line")->required();
    decode->add_option("--out", out_path, "results file (JSONL)");
    DecodeOptions decode_opt;
    add_decode_flags(decode, decode_opt);

    // train-lmp
    auto* train = app.add_subcommand("train-lmp", "Train the length predictor");
    std::string train_model, train_corpus, train_out, loss_out = "loss.txt";
    int epochs = 2, hidden = 16, head_hidden = 16, greedy_max_steps = 150;
    double lr = 0.001;
    std::uint64_t train_seed = 0;
    train->add_option("--model", train_model, "base model file")->required();
    train->add_option("--corpus", train_corpus, "parallel corpus (source<TAB>target)")->required();
    train->add_option("--out", train_out, "output model file with predictor section "
                                          "(default: update the input file)");
    train->add_option("--loss-out", loss_out, "per-epoch mean loss file");
    train->add_option("--epochs", epochs)->check(CLI::NonNegativeNumber);
    train->add_option("--lr", lr, "Adam learning rate");
    train->add_option("--hidden", hidden, "predictor LSTM size");
    train->add_option("--head-hidden", head_hidden, "hidden size of the two heads");
    train->add_option("--max-steps", greedy_max_steps, "greedy decoding step budget");
    train->add_option("--seed", train_seed, "init and shuffle seed");

    // sweep
    auto* sweep = app.add_subcommand("sweep", "Grid sweep over decoding hyperparameters");
    std::string sweep_model, sweep_corpus, sweep_grid, sweep_out = "sweep.jsonl";
    sweep->add_option("--model", sweep_model, "model file")->required();
    sweep->add_option("--corpus", sweep_corpus, "validation corpus (optionally with references)")
        ->required();
    sweep->add_option("--grid", sweep_grid, "JSON file mapping parameter names to value lists")
        ->required();
    sweep->add_option("--out", sweep_out, "ranked configurations file");
    DecodeOptions sweep_opt;
    add_decode_flags(sweep, sweep_opt);

    // rankstats
    auto* rank = app.add_subcommand("rankstats", "Aggregate rank-score traces into a CSV");
    std::vector<std::string> rank_inputs;
    std::string rank_out = "rankstats.csv";
    int rank_beam = 5;
    rank->add_option("results", rank_inputs, "results files with traces")->required();
    rank->add_option("--out", rank_out, "CSV output path");
    rank->add_option("--beam-size", rank_beam, "number of ranks to report");

    // make-fixture
    auto* fixture = app.add_subcommand("make-fixture", "Generate a seeded random tabular model");
    std::string fixture_out = "fixture.json";
    std::uint64_t fixture_seed = 0;
    int fixture_vocab = 6, fixture_states = 4;
    double fixture_eos = 1.0;
    std::string fixture_summary = "declared";
    fixture->add_option("--out", fixture_out, "output model file");
    fixture->add_option("--seed", fixture_seed);
    fixture->add_option("--vocab-size", fixture_vocab)->check(CLI::Range(3, 1000));
    fixture->add_option("--states", fixture_states)->check(CLI::PositiveNumber);
    fixture->add_option("--eos-weight", fixture_eos, "relative EOS probability weight");
    fixture->add_option("--summary", fixture_summary, "declared | length")
        ->check(CLI::IsMember({"declared", "length"}));

    try {
        app.parse(argc, argv);
        if (*decode) return cmd_decode(model_path, corpus_path, out_path, decode_opt);
        if (*train)
            return cmd_train_lmp(train_model, train_corpus,
                                 train_out.empty() ? train_model : train_out, loss_out, epochs,
                                 lr, hidden, head_hidden, greedy_max_steps, train_seed);
        if (*sweep) return cmd_sweep(sweep_model, sweep_corpus, sweep_grid, sweep_out, sweep_opt);
        if (*rank) return cmd_rankstats(rank_inputs, rank_out, rank_beam);
        if (*fixture)
            return cmd_make_fixture(fixture_out, fixture_seed, fixture_vocab, fixture_states,
                                    fixture_eos, fixture_summary);
        return 2;
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 2;
    }
}
