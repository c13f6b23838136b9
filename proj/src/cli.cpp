#include "dconn/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "dconn/check_suite.hpp"
#include "dconn/codec.hpp"
#include "dconn/losses.hpp"
#include "dconn/metrics.hpp"
#include "dconn/net.hpp"
#include "dconn/synth.hpp"
#include "dconn/train.hpp"

namespace dconn {

namespace fs = std::filesystem;

namespace {

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw FormatError("cannot write '" + path.string() + "'");
}

void ensure_dir(const std::string& dir) {
    if (dir.empty()) throw FormatError("output directory is empty");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw FormatError("cannot create directory '" + dir + "': " + ec.message());
}

RunConfig load_config(const std::string& path) {
    RunConfig cfg = parse_run_config(read_text_file(path));
    if (const char* env = std::getenv("DCONN_SEED"); env && *env) {
        char* end = nullptr;
        const unsigned long long v = std::strtoull(env, &end, 10);
        if (*end != '\0') throw FormatError(std::string("bad DCONN_SEED value '") + env + "'");
        cfg.seed = v;
    }
    return cfg;
}

std::vector<Sample> sorted_samples(std::vector<Sample> samples) {
    std::sort(samples.begin(), samples.end(), [](const Sample& a, const Sample& b) { return a.name < b.name; });
    return samples;
}

struct GenArgs {
    std::string kind = "blobs";
    std::size_t n = 20;
    std::size_t size = 64;
    std::uint64_t seed = 1;
    double noise = 0.05;
    std::string out;
};

int cmd_gen(const GenArgs& a, std::ostream& out) {
    DatasetSpec spec;
    spec.kind = parse_kind(a.kind);
    spec.count = a.n;
    spec.size = a.size;
    spec.seed = a.seed;
    spec.noise = a.noise;
    spec.validate();
    const auto samples = generate(spec);
    ensure_dir(a.out);
    write_dataset(a.out, samples, spec.classes());
    out << "wrote " << samples.size() << " " << kind_name(spec.kind) << " samples to " << a.out << "\n";
    return kExitOk;
}

struct EncodeArgs {
    std::string seg, out, dtype = "u8";
    std::size_t classes = 1;
};

int cmd_encode(const EncodeArgs& a, std::ostream& out) {
    const SegMask mask = mask_from_gray(read_pgm_file(a.seg));
    if (mask.max_label() > a.classes) {
        throw FormatError("bad mask field 'label': value " + std::to_string(mask.max_label()) + " exceeds --classes " +
                          std::to_string(a.classes));
    }
    const CmkDtype dtype = a.dtype == "f32" ? CmkDtype::F32 : CmkDtype::U8;
    write_cmk_file(a.out, encode_connectivity(mask, a.classes), dtype);
    out << "encoded " << mask.height << "x" << mask.width << " mask with " << a.classes << " class(es)\n";
    return kExitOk;
}

struct DecodeArgs {
    std::string conn, out;
    double threshold = 0.5;
};

int cmd_decode(const DecodeArgs& a, std::ostream& out) {
    const ConnectivityMask conn = read_cmk_file(a.conn);
    const SegMask mask = decode_segmentation(conn, a.threshold);
    write_pgm_file(a.out, to_gray(mask));
    out << "decoded " << mask.height << "x" << mask.width << " mask\n";
    return kExitOk;
}

struct TrainArgs {
    std::string config, data, out;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
    RunConfig cfg = load_config(a.config);
    if (!a.data.empty()) cfg.data_dir = a.data;
    if (!a.out.empty()) cfg.out_dir = a.out;
    if (cfg.data_dir.empty()) throw FormatError("bad config field 'data_dir': no dataset directory given");
    if (cfg.out_dir.empty()) throw FormatError("bad config field 'out_dir': no output directory given");
    const Dataset ds = read_dataset(cfg.data_dir);
    if (ds.classes != cfg.net.classes) {
        throw FormatError("bad config field 'net.classes': dataset has " + std::to_string(ds.classes) + " class(es)");
    }
    const auto samples = sorted_samples(ds.samples);
    ensure_dir(cfg.out_dir);
    const fs::path dir(cfg.out_dir);
    write_text_file(dir / "config.json", dump_run_config(cfg) + "\n");

    std::ofstream log(dir / "loss_log.tsv", std::ios::binary);
    log << step_log_header() << "\n";
    const std::size_t every = std::max<std::size_t>(1, cfg.optimizer.steps / 20);
    TrainResult result = train(cfg, samples, [&](const StepLog& s) {
        write_step_log(log, s);
        if (s.step % every == 0 || s.step + 1 == cfg.optimizer.steps) {
            char line[160];
            std::snprintf(line, sizeof line, "step %zu  lr %.5f  total %.6f  main %.6f  prior %.6f\n", s.step, s.lr,
                          s.total, s.main, s.prior);
            out << line << std::flush;
        }
    });
    log.close();
    if (!log) throw FormatError("cannot write loss log");
    write_checkpoint_file((dir / "checkpoint.dcw").string(), result.params);
    {
        std::ofstream pdf(dir / "size_pdf.txt", std::ios::binary);
        write_size_pdf(pdf, result.pdf);
    }
    out << "checkpoint written to " << (dir / "checkpoint.dcw").string() << "\n";
    return kExitOk;
}

struct EvalArgs {
    std::string data, checkpoint, config, predictions, report, overlays, save_predictions;
    double threshold = -1.0;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
    const Dataset ds = read_dataset(a.data);
    const auto samples = sorted_samples(ds.samples);
    std::vector<SegMask> preds;
    if (!a.predictions.empty()) {
        for (const auto& s : samples) {
            preds.push_back(mask_from_gray(read_pgm_file((fs::path(a.predictions) / ("pred_" + s.name + ".pgm")).string())));
        }
    } else {
        if (a.checkpoint.empty() || a.config.empty()) {
            throw FormatError("eval needs --checkpoint and --config, or --predictions");
        }
        const RunConfig cfg = load_config(a.config);
        if (cfg.net.classes != ds.classes) {
            throw FormatError("bad config field 'net.classes': dataset has " + std::to_string(ds.classes) +
                              " class(es)");
        }
        NetParams params = init_params(cfg.net, 0);
        load_checkpoint_file(a.checkpoint, params);
        const double threshold = a.threshold > 0.0 ? a.threshold : cfg.threshold;
        for (const auto& s : samples) {
            if (s.image.height != cfg.net.input_size || s.image.width != cfg.net.input_size) {
                throw ShapeError("sample '" + s.name + "' does not match net.input_size");
            }
            preds.push_back(predict(params, cfg.net, s.image, threshold));
        }
    }
    const MetricsReport report = evaluate_predictions(samples, preds, ds.classes);
    if (!a.report.empty()) {
        std::ofstream f(a.report, std::ios::binary);
        write_report(f, report);
        if (!f) throw FormatError("cannot write report '" + a.report + "'");
    } else {
        write_report(out, report);
    }
    if (!a.save_predictions.empty()) {
        ensure_dir(a.save_predictions);
        for (std::size_t i = 0; i < samples.size(); ++i) {
            write_pgm_file((fs::path(a.save_predictions) / ("pred_" + samples[i].name + ".pgm")).string(),
                           to_gray(preds[i]));
        }
    }
    if (!a.overlays.empty()) {
        ensure_dir(a.overlays);
        for (std::size_t i = 0; i < samples.size(); ++i) {
            write_pgm_file((fs::path(a.overlays) / ("overlay_" + samples[i].name + ".pgm")).string(),
                           overlay(preds[i], samples[i].mask));
        }
    }
    if (!a.report.empty()) {
        out << "mean_dice " << report.mean_dice << "  betti0_error " << report.betti0_error << "\n";
    }
    return kExitOk;
}

struct GradcheckArgs {
    std::string scope = "all";
    double eps = 0.0;  // 0: per-target default
    std::uint64_t seed = 0;
    bool list = false;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out, std::ostream& err) {
    const auto targets = gradcheck_targets();
    if (a.list) {
        for (const auto& t : targets) out << t.name << "\n";
        return kExitOk;
    }
    std::vector<const CheckTarget*> chosen;
    for (const auto& t : targets)
        if (a.scope == "all" || a.scope == t.name) chosen.push_back(&t);
    if (chosen.empty()) {
        err << "error: unknown gradcheck scope '" << a.scope << "' (use --list)\n";
        return kExitUsage;
    }
    if (a.eps != 0.0 && !(a.eps >= 1e-6 && a.eps <= 1e-3)) {
        err << "error: --eps must lie in [1e-6, 1e-3]\n";
        return kExitUsage;
    }
    std::vector<std::string> failures;
    for (const CheckTarget* t : chosen) {
        GradCheckOptions opt;
        opt.eps = a.eps != 0.0 ? a.eps : t->default_eps;
        opt.seed = a.seed;
        const GradCheckResult r = t->run(opt);
        const bool ok = r.max_rel_error < t->threshold && r.checked > 0;
        char line[256];
        std::snprintf(line, sizeof line, "%-16s max_rel_err %.3e  threshold %.0e  checked %zu  skipped %zu  %s\n",
                      t->name.c_str(), r.max_rel_error, t->threshold, r.checked, r.skipped, ok ? "ok" : "FAIL");
        out << line << std::flush;
        if (!ok) {
            std::ostringstream f;
            f << t->name << " (worst " << r.worst_param << "[" << r.worst_index << "]: analytic " << r.worst_analytic
              << ", numeric " << r.worst_numeric << ")";
            failures.push_back(f.str());
        }
    }
    if (!failures.empty()) {
        err << "gradient check failed for:\n";
        for (const auto& f : failures) err << "  " << f << "\n";
        return kExitCheckFailed;
    }
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Directional connectivity segmentation toolkit"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* g = app.add_subcommand("gen", "Generate a synthetic dataset");
    g->add_option("--kind", gen.kind, "blobs | rings | vessels | multiclass");
    g->add_option("--n", gen.n, "Number of samples");
    g->add_option("--size", gen.size, "Image side length (multiple of 16)");
    g->add_option("--seed", gen.seed, "Dataset seed");
    g->add_option("--noise", gen.noise, "Gaussian noise sigma");
    g->add_option("--out", gen.out, "Output directory")->required();

    EncodeArgs enc;
    auto* e = app.add_subcommand("encode", "Encode a label PGM into a CMK1 connectivity mask");
    e->add_option("--seg", enc.seg, "Label PGM")->required();
    e->add_option("--classes", enc.classes, "Number of foreground classes")->check(CLI::Range(1, 255));
    e->add_option("--out", enc.out, "Output .cmk")->required();
    e->add_option("--dtype", enc.dtype, "u8 | f32")->check(CLI::IsMember({"u8", "f32"}));

    DecodeArgs dec;
    auto* d = app.add_subcommand("decode", "Decode a CMK1 connectivity mask into a label PGM");
    d->add_option("--conn", dec.conn, "Input .cmk")->required();
    d->add_option("--threshold", dec.threshold, "Foreground threshold in (0,1)");
    d->add_option("--out", dec.out, "Output PGM")->required();

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train a network");
    t->add_option("--config", tr.config, "JSON run config")->required();
    t->add_option("--data", tr.data, "Dataset directory (overrides data_dir)");
    t->add_option("--out", tr.out, "Output directory (overrides out_dir)");

    EvalArgs ev;
    auto* v = app.add_subcommand("eval", "Evaluate predictions against ground truth");
    v->add_option("--data", ev.data, "Dataset directory")->required();
    v->add_option("--checkpoint", ev.checkpoint, "DCW1 checkpoint");
    v->add_option("--config", ev.config, "JSON run config matching the checkpoint");
    v->add_option("--predictions", ev.predictions, "Directory of pred_<name>.pgm masks to score instead");
    v->add_option("--threshold", ev.threshold, "Override the config threshold");
    v->add_option("--report", ev.report, "Write the TSV report here instead of stdout");
    v->add_option("--overlays", ev.overlays, "Directory for overlay PGMs");
    v->add_option("--save-predictions", ev.save_predictions, "Directory for predicted label PGMs");

    GradcheckArgs gc;
    auto* c = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
    c->add_option("--scope", gc.scope, "all, net, or an op name");
    c->add_option("--eps", gc.eps, "Central difference step (default: per target)");
    c->add_option("--seed", gc.seed, "Seed for random inputs");
    c->add_flag("--list", gc.list, "List available targets");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& ex) {
        const int code = app.exit(ex, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (g->parsed()) return cmd_gen(gen, out);
        if (e->parsed()) return cmd_encode(enc, out);
        if (d->parsed()) return cmd_decode(dec, out);
        if (t->parsed()) return cmd_train(tr, out);
        if (v->parsed()) return cmd_eval(ev, out);
        if (c->parsed()) return cmd_gradcheck(gc, out, err);
    } catch (const NonFiniteLossError& ex) {
        err << "error: " << ex.what() << "\n";
        return kExitCheckFailed;
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}

}  // namespace dconn
