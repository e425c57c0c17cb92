// Command-line driver: corpus generation, training, retrieval evaluation,
// the six-row objective/filter ablation, and the inference-scaling benchmark.
// Every command echoes its fully resolved config into the output directory.

#include <cstdio>
#include <filesystem>
#include <future>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "twostream/checkpoint.hpp"
#include "twostream/config.hpp"
#include "twostream/io.hpp"
#include "twostream/twostream.hpp"

namespace fs = std::filesystem;
using namespace twostream;

namespace {

constexpr int kExitConfigError = 2;
constexpr int kExitFileError = 3;
constexpr int kExitEvalError = 4;

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    long long seed = -1;
    bool no_amf = false;
    std::string loss_weights;
};

ExperimentConfig resolve_config(const CommonArgs& args) {
    ExperimentConfig cfg;
    if (!args.config_path.empty())
        cfg = load_experiment_config(args.config_path);
    else
        cfg.derive_component_seeds();
    if (args.seed >= 0) {
        cfg.seed = static_cast<uint64_t>(args.seed);
        cfg.derive_component_seeds();
    }
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
    if (args.no_amf) cfg.train.amf_enabled = false;
    if (!args.loss_weights.empty()) {
        double a, b, c;
        if (std::sscanf(args.loss_weights.c_str(), "%lf,%lf,%lf", &a, &b, &c) != 3)
            throw ConfigError("--loss-weights expects three comma-separated numbers");
        cfg.train.weights = LossWeights{a, b, c};
    }
    cfg.validate();
    return cfg;
}

void echo_config(const ExperimentConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    write_json(cfg.out_dir + "/config.json", experiment_config_to_json(cfg));
}

// generate + noise-inject the train split, keep the eval tail clean
CorpusSplit build_split(const ExperimentConfig& cfg) {
    Corpus corpus = generate_corpus(cfg.corpus);
    CorpusSplit split = split_corpus(corpus, cfg.eval_fraction);
    if (cfg.corpus.noise_rate > 0.0)
        split.train = inject_noise(std::move(split.train), cfg.corpus.noise_rate,
                                   cfg.noise_seed());
    return split;
}

int cmd_generate(const CommonArgs& args, double noise_override) {
    ExperimentConfig cfg = resolve_config(args);
    if (noise_override >= 0.0) cfg.corpus.noise_rate = noise_override;
    cfg.validate();
    echo_config(cfg);
    CorpusSplit split = build_split(cfg);
    save_corpus(split.train, cfg.out_dir + "/train.jsonl");
    save_corpus(split.eval, cfg.out_dir + "/eval.jsonl");
    int flagged = 0;
    for (const auto& s : split.train) flagged += s.is_noise;
    std::printf("generate: %zu train pairs (%d flagged as noise), %zu eval pairs -> %s\n",
                split.train.size(), flagged, split.eval.size(), cfg.out_dir.c_str());
    return 0;
}

int cmd_train(const CommonArgs& args, const std::string& corpus_path) {
    ExperimentConfig cfg = resolve_config(args);
    echo_config(cfg);
    const std::string path =
        corpus_path.empty() ? cfg.out_dir + "/train.jsonl" : corpus_path;
    Corpus corpus = load_corpus(path);
    ModelConfig mc = model_config_from(cfg);
    check_corpus_vocab(corpus, mc);

    auto [model, momentum] = init_model(mc, cfg.model_seed());
    TrainResult result = run_training(model, momentum, corpus, cfg.train);
    write_metrics_jsonl(cfg.out_dir + "/metrics.jsonl", result.records);
    save_checkpoint(cfg.out_dir + "/checkpoint.json", model, momentum, result.total_steps);

    const auto& last = result.records.back();
    std::printf("train: %lld steps over %d epochs; final total loss %.4f -> %s\n",
                static_cast<long long>(result.total_steps), cfg.train.epochs,
                last.skipped ? 0.0 : last.breakdown.total, cfg.out_dir.c_str());
    return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& checkpoint_path,
             const std::string& corpus_path, bool video) {
    ExperimentConfig cfg = resolve_config(args);
    echo_config(cfg);
    const std::string ck_path =
        checkpoint_path.empty() ? cfg.out_dir + "/checkpoint.json" : checkpoint_path;
    const std::string cp_path =
        corpus_path.empty() ? cfg.out_dir + "/eval.jsonl" : corpus_path;
    Checkpoint ck = load_checkpoint(ck_path);
    Corpus corpus = load_corpus(cp_path);
    check_corpus_vocab(corpus, ck.model.cfg);

    auto reports = evaluate_pair_retrieval(ck.model, corpus, cfg.eval.ks);
    write_json(cfg.out_dir + "/report_i2t.json", report_to_json(reports.i2t));
    write_json(cfg.out_dir + "/report_t2i.json", report_to_json(reports.t2i));
    auto print_report = [](const MetricsReport& r) {
        std::printf("eval %s:", r.direction.c_str());
        for (const auto& [k, v] : r.r_at) std::printf(" R@%d=%.4f", k, v);
        std::printf(" MR=%.0f (%d queries)\n", r.median_rank, r.n_queries);
    };
    print_report(reports.i2t);
    print_report(reports.t2i);

    if (video) {
        auto videos = make_videos(corpus, cfg.eval.frames_per_video, cfg.video_seed());
        auto t2v = evaluate_t2v(ck.model, videos, cfg.eval.ks, cfg.eval.video_renorm);
        write_json(cfg.out_dir + "/report_t2v.json", report_to_json(t2v));
        print_report(t2v);
    }
    return 0;
}

struct AblationRow {
    std::string name;
    LossWeights weights;
    bool amf = false;
    bool disable_vision_mask = false;
};

const std::vector<AblationRow>& ablation_rows() {
    static const std::vector<AblationRow> rows = {
        {"inst", {1, 0, 0}, false, false},
        {"inst+cmlm", {1, 1, 0}, false, true},
        {"inst+token", {1, 1, 0}, false, false},
        {"inst+token+task", {1, 1, 1}, false, false},
        {"inst w/ amf", {1, 0, 0}, true, false},
        {"full", {1, 1, 1}, true, false},
    };
    return rows;
}

struct AblationCell {
    double i2t_r1 = 0, i2t_r5 = 0, i2t_r10 = 0;
    double t2i_r1 = 0, t2i_r5 = 0, t2i_r10 = 0;
};

AblationCell run_ablation_cell(const ExperimentConfig& base, const AblationRow& row,
                               uint64_t run_seed) {
    ExperimentConfig cfg = base;
    cfg.seed = run_seed;
    cfg.derive_component_seeds();
    cfg.train.weights = row.weights;
    cfg.train.amf_enabled = row.amf;
    if (row.disable_vision_mask) cfg.train.vision_mask_rate = 0.0;

    CorpusSplit split = build_split(cfg);
    auto [model, momentum] = init_model(model_config_from(cfg), cfg.model_seed());
    run_training(model, momentum, split.train, cfg.train);
    auto reports = evaluate_pair_retrieval(model, split.eval, {1, 5, 10});
    AblationCell cell;
    cell.i2t_r1 = reports.i2t.r_at.at(1);
    cell.i2t_r5 = reports.i2t.r_at.at(5);
    cell.i2t_r10 = reports.i2t.r_at.at(10);
    cell.t2i_r1 = reports.t2i.r_at.at(1);
    cell.t2i_r5 = reports.t2i.r_at.at(5);
    cell.t2i_r10 = reports.t2i.r_at.at(10);
    return cell;
}

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[(v.size() - 1) / 2];
}

int cmd_ablate(const CommonArgs& args, int n_seeds, int jobs) {
    ExperimentConfig cfg = resolve_config(args);
    echo_config(cfg);
    const auto& rows = ablation_rows();

    // all (row, seed) cells are independent; run a bounded number in parallel
    std::vector<std::vector<AblationCell>> cells(rows.size(),
                                                 std::vector<AblationCell>(n_seeds));
    std::vector<std::pair<int, int>> work;
    for (int r = 0; r < static_cast<int>(rows.size()); ++r)
        for (int s = 0; s < n_seeds; ++s) work.emplace_back(r, s);
    std::atomic<size_t> next{0};
    auto worker = [&] {
        while (true) {
            const size_t i = next.fetch_add(1);
            if (i >= work.size()) return;
            auto [r, s] = work[i];
            cells[r][s] = run_ablation_cell(cfg, rows[r], derive_seed(cfg.seed, "ablate", s));
        }
    };
    std::vector<std::future<void>> pool;
    for (int t = 0; t < std::max(1, jobs); ++t)
        pool.push_back(std::async(std::launch::async, worker));
    for (auto& f : pool) f.get();

    nlohmann::json out;
    std::string csv = "row,seed,i2t_r1,i2t_r5,i2t_r10,t2i_r1,t2i_r5,t2i_r10\n";
    std::printf("%-18s %8s %8s %8s %8s %8s %8s\n", "row", "I2T@1", "I2T@5", "I2T@10", "T2I@1",
                "T2I@5", "T2I@10");
    for (size_t r = 0; r < rows.size(); ++r) {
        std::vector<double> i1, i5, i10, t1, t5, t10;
        nlohmann::json per_seed = nlohmann::json::array();
        for (int s = 0; s < n_seeds; ++s) {
            const auto& c = cells[r][s];
            i1.push_back(c.i2t_r1);
            i5.push_back(c.i2t_r5);
            i10.push_back(c.i2t_r10);
            t1.push_back(c.t2i_r1);
            t5.push_back(c.t2i_r5);
            t10.push_back(c.t2i_r10);
            per_seed.push_back({{"i2t_r1", c.i2t_r1},
                                {"i2t_r5", c.i2t_r5},
                                {"i2t_r10", c.i2t_r10},
                                {"t2i_r1", c.t2i_r1},
                                {"t2i_r5", c.t2i_r5},
                                {"t2i_r10", c.t2i_r10}});
            char line[256];
            std::snprintf(line, sizeof(line), "%s,%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                          rows[r].name.c_str(), s, c.i2t_r1, c.i2t_r5, c.i2t_r10, c.t2i_r1,
                          c.t2i_r5, c.t2i_r10);
            csv += line;
        }
        out[rows[r].name] = {{"seeds", per_seed},
                             {"median",
                              {{"i2t_r1", median_of(i1)},
                               {"i2t_r5", median_of(i5)},
                               {"i2t_r10", median_of(i10)},
                               {"t2i_r1", median_of(t1)},
                               {"t2i_r5", median_of(t5)},
                               {"t2i_r10", median_of(t10)}}}};
        std::printf("%-18s %8.4f %8.4f %8.4f %8.4f %8.4f %8.4f\n", rows[r].name.c_str(),
                    median_of(i1), median_of(i5), median_of(i10), median_of(t1), median_of(t5),
                    median_of(t10));
    }
    write_json(cfg.out_dir + "/ablation.json", out);
    write_text(cfg.out_dir + "/ablation.csv", csv);
    return 0;
}

int cmd_bench(const CommonArgs& args, std::vector<int> sizes) {
    ExperimentConfig cfg = resolve_config(args);
    echo_config(cfg);
    if (sizes.empty()) sizes = {500, 1000, 2000};
    auto report = benchmark_efficiency(sizes, cfg.model.d_out);
    std::printf("%8s %14s %14s %14s %10s\n", "n", "precompute(s)", "query(s)", "single(s)",
                "ratio");
    for (const auto& r : report.rows)
        std::printf("%8d %14.4f %14.4f %14.4f %10.2f\n", r.n, r.t_precompute, r.t_query,
                    r.t_single, r.ratio);
    std::printf("fitted log-log slopes: pairwise-fusion %.3f, two-stream query %.3f\n",
                report.slope_single, report.slope_query);
    write_text(cfg.out_dir + "/bench.csv", bench_to_csv(report));
    nlohmann::json j;
    j["slope_single"] = report.slope_single;
    j["slope_query"] = report.slope_query;
    j["rows"] = nlohmann::json::array();
    for (const auto& r : report.rows)
        j["rows"].push_back({{"n", r.n},
                             {"t_precompute", r.t_precompute},
                             {"t_query", r.t_query},
                             {"t_single", r.t_single},
                             {"ratio", r.ratio}});
    write_json(cfg.out_dir + "/bench.json", j);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"two-stream vision-language pre-training testbed"};
    app.require_subcommand(1);

    CommonArgs args;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", args.config_path, "experiment config JSON");
        sub->add_option("--out", args.out_dir, "output directory (overrides config)");
        sub->add_option("--seed", args.seed, "root seed (overrides config)");
    };

    auto* generate = app.add_subcommand("generate", "generate a paired-token corpus");
    add_common(generate);
    double noise_override = -1.0;
    generate->add_option("--noise-rate", noise_override, "override corpus noise rate");

    auto* train = app.add_subcommand("train", "train on a corpus file");
    add_common(train);
    std::string corpus_path;
    train->add_option("--corpus", corpus_path, "corpus file (default <out>/train.jsonl)");
    train->add_flag("--no-amf", args.no_amf, "disable the adaptive momentum filter");
    train->add_option("--loss-weights", args.loss_weights, "inst,token,task coefficients");

    auto* eval = app.add_subcommand("eval", "retrieval evaluation from a checkpoint");
    add_common(eval);
    std::string checkpoint_path, eval_corpus_path;
    bool video = false;
    eval->add_option("--checkpoint", checkpoint_path,
                     "checkpoint file (default <out>/checkpoint.json)");
    eval->add_option("--corpus", eval_corpus_path, "corpus file (default <out>/eval.jsonl)");
    eval->add_flag("--video", video, "also evaluate text-to-video retrieval");

    auto* ablate = app.add_subcommand("ablate", "six-row objective/filter ablation");
    add_common(ablate);
    int n_seeds = 1, jobs = 2;
    ablate->add_option("--seeds", n_seeds, "number of seeds per row")->check(CLI::Range(1, 64));
    ablate->add_option("--jobs", jobs, "parallel runs")->check(CLI::Range(1, 16));

    auto* bench = app.add_subcommand("bench", "inference-efficiency scaling benchmark");
    add_common(bench);
    std::vector<int> sizes;
    bench->add_option("--sizes", sizes, "index sizes to benchmark")->delimiter(',');

    CLI11_PARSE(app, argc, argv);

    try {
        if (generate->parsed()) return cmd_generate(args, noise_override);
        if (train->parsed()) return cmd_train(args, corpus_path);
        if (eval->parsed()) return cmd_eval(args, checkpoint_path, eval_corpus_path, video);
        if (ablate->parsed()) return cmd_ablate(args, n_seeds, jobs);
        if (bench->parsed()) return cmd_bench(args, sizes);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfigError;
    } catch (const ParseError& e) {
        std::fprintf(stderr, "file error: %s\n", e.what());
        return kExitFileError;
    } catch (const FileError& e) {
        std::fprintf(stderr, "file error: %s\n", e.what());
        return kExitFileError;
    } catch (const EvalError& e) {
        std::fprintf(stderr, "evaluation error: %s\n", e.what());
        return kExitEvalError;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
