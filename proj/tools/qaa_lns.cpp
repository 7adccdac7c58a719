#include "qaalns/annealer.hpp"
#include "qaalns/cost.hpp"
#include "qaalns/nn/checkpoint.hpp"
#include "qaalns/nn/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace qaalns;
using namespace qaalns::nn;
using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

#ifndef QAALNS_VERSION
#define QAALNS_VERSION "0.0.0"
#endif

namespace {

enum Exit
{
    kOk = 0,
    kUsage = 2,
    kValidation = 3,
    kRuntime = 4
};

enum class LogLevel
{
    Quiet,
    Info,
    Debug
};

LogLevel log_level()
{
    const char* v = std::getenv("QAALNS_LOG_LEVEL");
    if (!v) {
        return LogLevel::Info;
    }
    const std::string s = v;
    if (s == "quiet" || s == "error") {
        return LogLevel::Quiet;
    }
    if (s == "debug") {
        return LogLevel::Debug;
    }
    return LogLevel::Info;
}

void info(const std::string& msg)
{
    if (log_level() != LogLevel::Quiet) {
        std::cerr << msg << '\n';
    }
}

std::string utc_now()
{
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string hex64(std::uint64_t v)
{
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string table_fingerprint(const DeltaTable& t)
{
    return hex64(fnv1a64(table_to_json(t)));
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out.write(text.data(), static_cast<std::streamsize>(text.size()))) {
        throw std::runtime_error("cannot write " + path.string());
    }
}

void write_manifest(const fs::path& path, const std::string& command, const std::vector<std::string>& argv,
                    ojson resolved, const std::string& started)
{
    ojson m;
    m["command"] = command;
    m["argv"] = argv;
    m["version"] = std::string("qaa-lns ") + QAALNS_VERSION;
    m["resolved"] = std::move(resolved);
    m["started"] = started;
    m["finished"] = utc_now();
    write_text(path, m.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

struct OptimizeArgs
{
    int total_bits = 12;
    int frac_bits = 6;
    int d_max = 12;
    std::uint64_t seed = 1;
    std::uint64_t iterations = 20000;
    std::size_t samples = 10000;
    double t0 = 0.0;
    std::size_t segments = 16;
    bool baseline_uniform = false;
    std::string progress;
    std::string out;
};

int cmd_table_optimize(const OptimizeArgs& a, const std::vector<std::string>& argv)
{
    const std::string started = utc_now();
    AnnealConfig cfg;
    try {
        cfg.format = LnsFormat::make(a.total_bits, a.frac_bits, ZeroMode::ZeroFlag, a.d_max);
        cfg.iterations = a.iterations;
        cfg.sample_count = a.samples;
        cfg.initial_temperature = a.t0;
        cfg.segments = a.segments;
        cfg.seed = a.seed;
        cfg.validate();
    } catch (const LnsError& e) {
        throw ConfigError(e.what());
    }

    DeltaTable table;
    ojson resolved = {{"total_bits", a.total_bits}, {"frac_bits", a.frac_bits}, {"d_max", a.d_max},
                      {"seed", a.seed},             {"samples", a.samples},     {"segments", a.segments}};
    if (a.baseline_uniform) {
        table = fit_uniform_table(cfg.format, a.segments);
        const SampleSet s = SampleSet::generate(cfg.format, a.samples, a.seed, cfg.sample_mean, cfg.sample_variance);
        table.metadata().seed = a.seed;
        table.metadata().qa_loss = format_loss(qa_loss(table, s));
        resolved["mode"] = "baseline-uniform";
        info("uniform table, QA loss " + table.metadata().qa_loss);
    } else {
        std::ofstream progress;
        if (!a.progress.empty()) {
            progress.open(a.progress, std::ios::binary);
            if (!progress) {
                throw std::runtime_error("cannot write " + a.progress);
            }
            progress << "iteration,temperature,current_loss,best_loss\n";
        }
        const bool debug = log_level() == LogLevel::Debug;
        const AnnealResult r = anneal(cfg, [&](const AnnealProgress& p) {
            if (progress) {
                progress << p.iteration << ',' << format_loss(p.temperature) << ',' << format_loss(p.current_loss)
                         << ',' << format_loss(p.best_loss) << '\n';
            }
            if (debug) {
                std::cerr << "iter " << p.iteration << " T=" << p.temperature << " best=" << p.best_loss << '\n';
            }
        });
        table = r.table;
        resolved["mode"] = "anneal";
        resolved["iterations"] = a.iterations;
        resolved["t0"] = a.t0;
        resolved["initial_loss"] = format_loss(r.initial_loss);
        resolved["best_loss"] = format_loss(r.best_loss);
        info("annealed " + cfg.format.describe() + ": QA loss " + format_loss(r.initial_loss) + " -> " +
             format_loss(r.best_loss));
    }
    save_table(table, a.out);
    resolved["table_fingerprint"] = table_fingerprint(table);
    write_manifest(a.out + ".manifest.json", "table optimize", argv, resolved, started);
    return kOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs
{
    std::string config;
    std::string table;
    std::string out;
    bool mirror_float = false;
    std::string ablation;
    std::optional<int> total_bits;
    std::optional<int> frac_bits;
    std::optional<std::string> zero_mode;
    std::optional<std::size_t> epochs;
};

void write_jsonl(std::ofstream& out, const EpochMetrics& m)
{
    out << m.to_json().dump() << '\n';
    out.flush();
}

int cmd_train(const TrainArgs& a, const std::vector<std::string>& argv)
{
    const std::string started = utc_now();
    TrainConfig cfg = TrainConfig::load(a.config);
    if (a.total_bits || a.frac_bits || a.zero_mode) {
        try {
            cfg.format = LnsFormat::make(a.total_bits.value_or(cfg.format.total_bits),
                                         a.frac_bits.value_or(cfg.format.fractional_bits),
                                         a.zero_mode ? zero_mode_from_string(*a.zero_mode) : cfg.format.zero_mode,
                                         cfg.format.d_max);
        } catch (const LnsError& e) {
            throw ConfigError(e.what());
        }
    }
    if (a.epochs) {
        cfg.epochs = *a.epochs;
    }
    if (!a.table.empty()) {
        cfg.table = a.table;
    }
    cfg.validate();

    // Resolve the table before any training work.
    std::string kind = "qa";
    DeltaTable table;
    if (a.ablation == "not-qa") {
        kind = "not-qa";
        table = fit_uniform_table(cfg.format);
    } else if (a.ablation.rfind("cross-bitwidth=", 0) == 0) {
        const std::string path = a.ablation.substr(std::string("cross-bitwidth=").size());
        const DeltaTable src = load_table(path);
        if (src.format().d_max != cfg.format.d_max) {
            throw FingerprintMismatchError("cross-bitwidth table has d_max " + std::to_string(src.format().d_max) +
                                           ", run uses " + std::to_string(cfg.format.d_max));
        }
        table = rescale_table(src, cfg.format);
        kind = "cross-bitwidth:T" + std::to_string(src.format().total_bits);
    } else if (!a.ablation.empty()) {
        throw CLI::ValidationError("--ablation", "expected not-qa or cross-bitwidth=<path>");
    } else {
        if (cfg.table.empty()) {
            throw ConfigError("no addition table: pass --table or set \"table\" in the config");
        }
        table = load_table(cfg.table, cfg.format);
    }
    const LnsArith arith = make_train_arith(cfg, table);

    fs::create_directories(a.out);
    const fs::path out(a.out);

    if (a.mirror_float) {
        std::ofstream fm(out / "metrics_float.jsonl", std::ios::binary);
        info("float mirror: " + std::to_string(cfg.epochs) + " epochs");
        const TrainRun fr = float_mirror_train(cfg, [&](const EpochMetrics& m) { write_jsonl(fm, m); });
        info("float mirror final test accuracy " + std::to_string(fr.final_accuracy()));
    }

    std::ofstream metrics(out / "metrics.jsonl", std::ios::binary);
    if (!metrics) {
        throw std::runtime_error("cannot write metrics in " + a.out);
    }
    info("training " + cfg.format.describe() + " table=" + kind);
    const bool debug = log_level() == LogLevel::Debug;
    std::unique_ptr<Network<LnsArith>> net;
    counters().reset();
    const TrainRun run = train_lns(
        cfg, arith,
        [&](const EpochMetrics& m) {
            write_jsonl(metrics, m);
            if (debug) {
                std::cerr << "epoch " << m.epoch << " loss " << m.train_loss << " test " << m.test_acc << '\n';
            }
        },
        &net);
    save_checkpoint(make_checkpoint(*net, static_cast<std::uint32_t>(cfg.epochs)), out / "checkpoint.bin");
    info("final test accuracy " + std::to_string(run.final_accuracy()) + ", median of last 10 " +
         std::to_string(run.median_last10()));

    ojson resolved;
    resolved["config"] = cfg.to_json();
    resolved["table_kind"] = kind;
    resolved["table_fingerprint"] = table_fingerprint(table);
    resolved["table_path"] = a.ablation.empty() ? cfg.table : "";
    resolved["spec_hash"] = hex64(cfg.network.hash());
    resolved["mirror_float"] = a.mirror_float;
    resolved["saturations"] = counters().saturations.load();
    write_manifest(out / "manifest.json", "train", argv, resolved, started);
    return kOk;
}

// ---------------------------------------------------------------------------

struct DatasetArgs
{
    std::string generator;
    std::size_t n = 2000;
    double noise = 0.2;
    int centers = 3;
    std::uint64_t seed = 1;
    std::string csv;
    std::string idx_images;
    std::string idx_labels;
    std::string out;
};

int cmd_dataset_gen(const DatasetArgs& a)
{
    Dataset ds;
    if (a.generator == "two-moons") {
        ds = make_two_moons(a.n, a.noise, a.seed);
    } else if (a.generator == "blobs") {
        ds = make_blobs(a.n, a.centers, a.noise, a.seed);
    } else {
        throw CLI::ValidationError("generator", "expected two-moons or blobs");
    }
    write_csv(ds, a.out);
    info("wrote " + std::to_string(ds.size()) + " rows to " + a.out);
    return kOk;
}

int cmd_dataset_ingest(const DatasetArgs& a)
{
    Dataset ds;
    if (!a.csv.empty()) {
        ds = read_csv(a.csv);
    } else if (!a.idx_images.empty() && !a.idx_labels.empty()) {
        ds = read_idx(a.idx_images, a.idx_labels);
    } else {
        throw CLI::ValidationError("ingest", "pass --csv, or both --idx-images and --idx-labels");
    }
    minmax_scale(ds);
    write_csv(ds, a.out);
    info("ingested " + std::to_string(ds.size()) + " rows, " + std::to_string(ds.feature_count) + " features");
    return kOk;
}

// ---------------------------------------------------------------------------

int cmd_profile(const std::vector<int>& bits, std::size_t samples, bool csv)
{
    const CostReport r = profile_macs(bits, samples);
    std::cout << (csv ? r.to_csv() : r.to_text());
    for (const CostRow& row : r.rows) {
        if (row.mismatches != 0) {
            std::cerr << "instrumented LNS MAC disagreed with the library at " << row.total_bits << " bits\n";
            return kRuntime;
        }
    }
    return kOk;
}

// ---------------------------------------------------------------------------

struct ReportRow
{
    std::string run;
    std::string arithmetic;
    std::string table;
    std::size_t epochs = 0;
    double final_acc = 0.0;
    double median10 = 0.0;
    bool is_float = false;
};

bool read_metrics(const fs::path& path, std::vector<double>& acc)
{
    std::ifstream in(path);
    if (!in) {
        return false;
    }
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) {
            acc.push_back(ojson::parse(line).at("test_acc").get<double>());
        }
    }
    return !acc.empty();
}

int cmd_report(const std::vector<std::string>& dirs, bool csv)
{
    std::vector<ReportRow> rows;
    std::vector<std::string> skipped;
    for (const std::string& d : dirs) {
        const fs::path dir(d);
        std::string arith = "?";
        std::string table = "?";
        if (std::ifstream mf(dir / "manifest.json"); mf) {
            const ojson m = ojson::parse(mf);
            const ojson& r = m.at("resolved");
            if (r.contains("config")) {
                const ojson& f = r.at("config").at("format");
                arith = "LNS T=" + std::to_string(f.at("total_bits").get<int>()) +
                        " F=" + std::to_string(f.at("fractional_bits").get<int>()) + " " +
                        f.at("zero_mode").get<std::string>();
            }
            if (r.contains("table_kind")) {
                table = r.at("table_kind").get<std::string>();
            }
        }
        std::vector<double> acc;
        if (read_metrics(dir / "metrics_float.jsonl", acc)) {
            rows.push_back({d, "float64", "-", acc.size(), acc.back(), median_last(acc, 10), true});
        }
        acc.clear();
        if (read_metrics(dir / "metrics.jsonl", acc)) {
            rows.push_back({d, arith, table, acc.size(), acc.back(), median_last(acc, 10), false});
        } else {
            skipped.push_back(d);
        }
    }
    std::optional<double> base;
    for (const ReportRow& r : rows) {
        if (r.is_float) {
            base = r.median10;
            break;
        }
    }
    auto degradation = [&](const ReportRow& r) -> std::string {
        if (!base || r.is_float) {
            return "";
        }
        char buf[32];
        std::snprintf(buf, sizeof buf, "%+.2f", 100.0 * (r.median10 - *base));
        return buf;
    };
    if (csv) {
        std::cout << "run,arithmetic,table,epochs,final_acc,median_last10,degradation_pts\n";
        for (const ReportRow& r : rows) {
            std::cout << r.run << ',' << r.arithmetic << ',' << r.table << ',' << r.epochs << ',' << r.final_acc
                      << ',' << r.median10 << ',' << degradation(r) << '\n';
        }
    } else {
        std::printf("%-28s %-28s %-18s %6s %9s %9s %8s\n", "run", "arithmetic", "table", "epochs", "final", "med10",
                    "vs float");
        for (const ReportRow& r : rows) {
            std::printf("%-28s %-28s %-18s %6zu %8.2f%% %8.2f%% %8s\n", r.run.c_str(), r.arithmetic.c_str(),
                        r.table.c_str(), r.epochs, 100.0 * r.final_acc, 100.0 * r.median10, degradation(r).c_str());
        }
    }
    for (const std::string& s : skipped) {
        std::cerr << "skipped " << s << ": no metrics.jsonl\n";
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv)
{
    const std::vector<std::string> args(argv, argv + argc);
    CLI::App app{"QAA-LNS: quantization-aware LNS arithmetic, table optimization and training"};
    app.set_version_flag("--version", std::string("qaa-lns ") + QAALNS_VERSION);
    app.require_subcommand(1);

    auto* table = app.add_subcommand("table", "addition table tools");
    table->require_subcommand(1);
    OptimizeArgs opt;
    auto* optimize = table->add_subcommand("optimize", "anneal a table for one format");
    optimize->add_option("--total-bits", opt.total_bits, "arithmetic bits T")->required()->check(CLI::Range(2, 30));
    optimize->add_option("--frac-bits", opt.frac_bits, "fractional bits F")->required()->check(CLI::Range(1, 29));
    optimize->add_option("--d-max", opt.d_max, "table range in log2 units")->check(CLI::Range(1, 64));
    optimize->add_option("--seed", opt.seed, "sample and proposal seed")->required();
    optimize->add_option("--iterations", opt.iterations, "annealing steps");
    optimize->add_option("--samples", opt.samples, "operand pairs in the loss")->check(CLI::PositiveNumber);
    optimize->add_option("--t0", opt.t0, "initial temperature (0: 0.1 x initial loss)")->check(CLI::NonNegativeNumber);
    optimize->add_option("--segments", opt.segments, "segments per curve")->check(CLI::Range(2, 4096));
    optimize->add_flag("--baseline-uniform", opt.baseline_uniform, "write the uniform non-QA table instead");
    optimize->add_option("--progress", opt.progress, "CSV file for loss history");
    optimize->add_option("-o,--out", opt.out, "output table JSON")->required();

    TrainArgs tr;
    auto* train = app.add_subcommand("train", "train a network in bit-true LNS");
    train->add_option("--config", tr.config, "training config JSON")->required()->check(CLI::ExistingFile);
    train->add_option("--table", tr.table, "addition table JSON");
    train->add_option("--out", tr.out, "output directory")->required();
    train->add_flag("--mirror-float", tr.mirror_float, "also run the double-precision mirror");
    train->add_option("--ablation", tr.ablation, "not-qa | cross-bitwidth=<table path>");
    train->add_option("--total-bits", tr.total_bits, "override T");
    train->add_option("--frac-bits", tr.frac_bits, "override F");
    train->add_option("--zero-mode", tr.zero_mode, "zero-flag | smallest-value");
    train->add_option("--epochs", tr.epochs, "override epochs")->check(CLI::PositiveNumber);

    DatasetArgs ds;
    auto* dataset = app.add_subcommand("dataset", "generate or ingest datasets");
    dataset->require_subcommand(1);
    auto* gen = dataset->add_subcommand("gen", "synthetic dataset to CSV");
    gen->add_option("generator", ds.generator, "two-moons | blobs")->required();
    gen->add_option("--n", ds.n, "samples")->check(CLI::PositiveNumber);
    gen->add_option("--noise", ds.noise, "Gaussian noise stddev")->check(CLI::NonNegativeNumber);
    gen->add_option("--centers", ds.centers, "blob count");
    gen->add_option("--seed", ds.seed, "seed");
    gen->add_option("-o,--out", ds.out, "output CSV")->required();
    auto* ingest = dataset->add_subcommand("ingest", "validate CSV or IDX and scale to [-1, 1]");
    ingest->add_option("--csv", ds.csv, "label,features CSV")->check(CLI::ExistingFile);
    ingest->add_option("--idx-images", ds.idx_images, "IDX image file")->check(CLI::ExistingFile);
    ingest->add_option("--idx-labels", ds.idx_labels, "IDX label file")->check(CLI::ExistingFile);
    ingest->add_option("-o,--out", ds.out, "output CSV")->required();

    std::vector<int> bits{14, 16, 18, 20, 22};
    std::size_t prof_samples = 1000;
    bool prof_csv = false;
    auto* profile = app.add_subcommand("profile", "operation counts for LNS vs INT MACs");
    profile->add_option("--bits", bits, "total bitwidths (T + 2)")->delimiter(',')->check(CLI::Range(8, 32));
    profile->add_option("--samples", prof_samples, "random operand triples")->check(CLI::PositiveNumber);
    profile->add_flag("--csv", prof_csv, "CSV output");

    std::vector<std::string> dirs;
    bool report_csv = false;
    auto* report = app.add_subcommand("report", "summarize training runs");
    report->add_option("dirs", dirs, "run directories")->required();
    report->add_flag("--csv", report_csv, "CSV output");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (optimize->parsed()) {
            return cmd_table_optimize(opt, args);
        }
        if (train->parsed()) {
            return cmd_train(tr, args);
        }
        if (gen->parsed()) {
            return cmd_dataset_gen(ds);
        }
        if (ingest->parsed()) {
            return cmd_dataset_ingest(ds);
        }
        if (profile->parsed()) {
            return cmd_profile(bits, prof_samples, prof_csv);
        }
        if (report->parsed()) {
            return cmd_report(dirs, report_csv);
        }
    } catch (const CLI::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUsage;
    } catch (const FormatMismatchError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kValidation;
    } catch (const TableParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kValidation;
    } catch (const TableInvariantError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kValidation;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kValidation;
    } catch (const DatasetError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kValidation;
    } catch (const ShapeError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntime;
    }
    return kUsage;
}
