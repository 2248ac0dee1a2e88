// End-to-end acceptance run: one PASS/FAIL line per criterion, exit status 0
// only when every criterion passes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "layer_gradchecks.hpp"
#include "loss_gradchecks.hpp"
#include "lpr/app.hpp"
#include "lpr/checkpoint.hpp"
#include "lpr/error.hpp"
#include "lpr/labels.hpp"
#include "lpr/metrics.hpp"
#include "oracle_trials.hpp"

using namespace lpr;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

struct Outcome {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what)
    {
        if (!ok) pass = false;
        if (!detail.empty()) detail += "; ";
        detail += (ok ? "" : "FAILED ") + what;
    }
};

int failures = 0;

void report(int id, const std::string& name, const Outcome& o)
{
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << id << ". " << name << ": " << o.detail << std::endl;
}

double pct(std::optional<double> v) { return v ? 100.0 * *v : std::nan(""); }

// ---------------------------------------------------------------------------

Outcome metric_arithmetic()
{
    Outcome o;
    const double p2 = pct(precision(511, 1)), r2 = pct(recall(511, 9)), a2 = pct(accuracy(511, 0, 1, 9));
    o.require(std::abs(p2 - 99.81) <= 0.01 && std::abs(r2 - 98.27) <= 0.01 && std::abs(a2 - 98.08) <= 0.01,
              fmt("511/1/9 -> P %.3f R %.3f A %.3f", p2, r2, a2));
    const double p4 = pct(precision(4061, 4)), r4 = pct(recall(4061, 42)), a4 = pct(accuracy(4061, 0, 4, 42));
    o.require(std::abs(r4 - 98.97) <= 0.05 && std::abs(p4 - 99.90) <= 0.05 && std::abs(a4 - 98.88) <= 0.05,
              fmt("4061/4/42 -> R %.3f P %.3f A %.3f", r4, p4, a4));
    EvalReport table;
    table.classes.push_back({0, "plate", {511, 1, 9, {}}, std::nullopt});
    finalize_totals(table);
    const auto text = format_table(table);
    o.require(text.find("98.27%") != std::string::npos && text.find("99.80%") != std::string::npos &&
                  text.find("98.08%") != std::string::npos,
              "report table prints the rounded percentages");
    return o;
}

Outcome geometry()
{
    Outcome o;
    NoGradGuard guard;
    std::mt19937_64 rng(1);
    YoloConfig yc;
    yc.backbone = {BackboneFamily::darknet53, 1.0, false};
    yc.num_classes = 1;
    yc.input_size = 320;
    YoloDetector det(yc, AnchorSet::fallback(), 1);
    const auto raw = det.forward(TensorF::randn({1, 3, 320, 320}, rng), false);
    const bool shapes = raw.size() == 3 && raw[0].shape() == Shape{1, 18, 10, 10} &&
                        raw[1].shape() == Shape{1, 18, 20, 20} && raw[2].shape() == Shape{1, 18, 40, 40};
    o.require(shapes, "darknet53 heads 1x18x10x10 / 20x20 / 40x40");
    const auto boxes = det.decode(raw).size();
    o.require(boxes == 6300, fmt("%zu decoded boxes", boxes));

    Recognizer rec(RecognizerConfig{}, 1);
    const auto feats = rec.features(TensorF::randn({1, 3, kPlateHeight, kPlateWidth}, rng), false);
    o.require(rec.anchors().size() == 3840, fmt("%d RPN anchors", rec.anchors().size()));
    const std::vector<BBox> rois{{100, 60, 40, 80}, {320, 64, 640, 128}, {600, 20, 30, 30}, {20, 20, 8, 8}};
    const auto pooled = roi_pool_boxes(feats, rois, 7, 16);
    o.require(pooled.shape() == Shape{4, 512, 7, 7}, "ROI pooling 4x512x7x7");
    return o;
}

Outcome gradients()
{
    Outcome o;
    const auto t0 = Clock::now();
    const int configs = 20;
    double worst = 0;
    std::string worst_kind;
    const auto layers = testing::layer_gradient_errors(configs, 2024);
    for (const auto& [kind, err] : layers) {
        if (err > worst) {
            worst = err;
            worst_kind = kind;
        }
        if (!(err < 1e-4)) o.require(false, fmt("%s error %.2e", kind.c_str(), err));
    }
    o.require(layers.size() == 14, fmt("%zu layer kinds, worst %s %.2e", layers.size(), worst_kind.c_str(), worst));
    const double yolo = testing::yolo_loss_gradient_error(configs, 2025);
    const double rpn = testing::rpn_loss_gradient_error(configs, 2026);
    const double head = testing::detector_loss_gradient_error(configs, 2027);
    o.require(yolo < 1e-4 && rpn < 1e-4 && head < 1e-4,
              fmt("losses: yolo %.2e, rpn %.2e, roi head %.2e", yolo, rpn, head));
    const double s = seconds_since(t0);
    o.require(s < 120, fmt("%d configs each in %.0f s", configs, s));
    return o;
}

Outcome oracles()
{
    Outcome o;
    const auto t0 = Clock::now();
    auto check = [&](const char* name, const trials::Result& r) {
        o.require(r.instances == 1000 && r.mismatches == 0,
                  fmt("%s %d/%d", name, r.instances - r.mismatches, r.instances) +
                      (r.first_failure.empty() ? "" : " (" + r.first_failure + ")"));
    };
    check("nms", trials::nms(1000, 31));
    check("matching", trials::matching(1000, 32));
    check("proposals", trials::proposals(1000, 33));
    check("ap", trials::average_precision(1000, 34));
    const double s = seconds_since(t0);
    o.require(s < 60, fmt("%.1f s", s));
    return o;
}

// ---------------------------------------------------------------------------

struct CsvColumns {
    std::vector<std::string> header;
    std::vector<std::vector<double>> columns;

    const std::vector<double>& operator[](const std::string& name) const
    {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (header[i] == name) return columns[i];
        }
        throw DataError("no column " + name);
    }
    bool has(const std::string& name) const { return std::find(header.begin(), header.end(), name) != header.end(); }
};

CsvColumns read_csv(const fs::path& path)
{
    CsvColumns c;
    std::istringstream in(read_text_file(path));
    std::string line, cell;
    std::getline(in, line);
    std::stringstream hs(line);
    while (std::getline(hs, cell, ',')) c.header.push_back(cell);
    c.columns.resize(c.header.size());
    while (std::getline(in, line)) {
        std::stringstream ls(line);
        for (std::size_t i = 0; std::getline(ls, cell, ','); ++i) c.columns.at(i).push_back(std::stod(cell));
    }
    return c;
}

std::string without_timing(EvalReport r)
{
    r.timing.reset();
    return to_jsonl(r);
}

RunConfig toy_config(std::uint64_t seed)
{
    RunConfig c;
    c.seed = seed;
    c.synth_count = 600;
    c.train_fraction = 500.0 / 600.0;
    c.log_every = 100;
    c.checkpoint_every = 0;
    return c;
}

struct ToyRun {
    EvalSummary eval;
    fs::path out;
    double train_seconds = 0, total_seconds = 0;
    std::size_t train_scenes = 0, test_scenes = 0;
};

ToyRun toy_run(const fs::path& work, const RunConfig& config)
{
    ToyRun run;
    const auto t0 = Clock::now();
    const auto data = work / "data";
    run.out = work / "runs";
    fs::remove_all(work);
    cmd_synth(config, data, std::cerr);
    const auto manifest = parse_manifest(read_text_file(data / "manifest.tsv"));
    for (const auto& e : manifest) (e.split == Split::train ? run.train_scenes : run.test_scenes)++;
    cmd_train(Stage::detector, config, data, run.out, std::nullopt, std::cerr);
    cmd_train(Stage::recognizer, config, data, run.out, std::nullopt, std::cerr);
    run.train_seconds = seconds_since(t0);
    std::ostringstream table;
    run.eval = cmd_eval(run.out / "detector.lprc", run.out / "recognizer.lprc", data, config,
                        config.eval_noise_snr, run.out / "eval", table);
    std::cerr << table.str();
    run.total_seconds = seconds_since(t0);
    return run;
}

Outcome toy_end_to_end(const ToyRun& r)
{
    Outcome o;
    o.require(r.train_scenes == 500 && r.test_scenes == 100, fmt("%zu train / %zu test", r.train_scenes, r.test_scenes));
    const double rec = pct(r.eval.detector.recall), map = pct(r.eval.detector.map);
    o.require(rec >= 90 && map >= 90, fmt("plate recall %.2f%% mAP %.2f%%", rec, map));
    const double acc = pct(r.eval.recognizer.accuracy);
    o.require(acc >= 90, fmt("char accuracy %.2f%% (TP %lld FP %lld FN %lld)", acc,
                             static_cast<long long>(r.eval.recognizer.total.tp),
                             static_cast<long long>(r.eval.recognizer.total.fp),
                             static_cast<long long>(r.eval.recognizer.total.fn)));
    const auto& p = r.eval.plates;
    o.require(p.fraction_correct() >= 0.90, fmt("full text %d/%d = %.2f%%", p.fully_correct, p.plates,
                                                 100 * p.fraction_correct()));
    o.require(r.total_seconds <= 3600, fmt("%.1f min", r.total_seconds / 60));
    return o;
}

Outcome noise(const ToyRun& r)
{
    Outcome o;
    if (!r.eval.noisy_detector || !r.eval.noisy_recognizer) {
        o.require(false, "noisy pass missing");
        return o;
    }
    const double d0 = pct(r.eval.detector.accuracy), d1 = pct(r.eval.noisy_detector->accuracy);
    const double c0 = pct(r.eval.recognizer.accuracy), c1 = pct(r.eval.noisy_recognizer->accuracy);
    o.require(d0 - d1 <= 5, fmt("detection accuracy %.2f%% -> %.2f%% (drop %.2f pp)", d0, d1, d0 - d1));
    o.require(c0 - c1 <= 5, fmt("recognition accuracy %.2f%% -> %.2f%% (drop %.2f pp)", c0, c1, c0 - c1));
    return o;
}

Outcome loss_curves(const ToyRun& r)
{
    Outcome o;
    const std::vector<double> constant(6, 2.5);
    const auto fixed = ema_smooth(constant, 0.6);
    o.require(std::all_of(fixed.begin(), fixed.end(), [](double v) { return v == 2.5; }), "constant is a fixed point");
    const std::vector<double> two{1.0, 0.0};
    const auto step = ema_smooth(two, 0.6);
    o.require(step.size() == 2 && step[0] == 1.0 && std::abs(step[1] - 0.6) < 1e-15, "[1, 0] -> [1, 0.6]");
    for (const char* stage : {"detector", "recognizer"}) {
        const auto csv = read_csv(r.out / (std::string(stage) + "_loss.csv"));
        bool ok = csv.has("loss_total") && csv.has("ema_loss_total");
        for (const auto& h : csv.header) {
            if (h != "step" && h != "lr" && h.rfind("ema_", 0) != 0) ok = ok && csv.has("ema_" + h);
        }
        if (ok) {
            const auto& raw = csv["loss_total"];
            const auto recomputed = ema_smooth(raw, 0.6);
            const auto& ema = csv["ema_loss_total"];
            for (std::size_t i = 0; i < raw.size(); ++i) ok = ok && std::abs(ema[i] - recomputed[i]) <= 1e-9 * (1 + ema[i]);
        }
        o.require(ok, fmt("%s log: %zu columns, EMA-0.6 twins", stage, csv.header.size()));
        if (ok) {
            const auto& ema = csv["ema_loss_total"];
            const double ratio = ema.back() / ema.front();
            if (std::string(stage) == "detector") {
                o.require(ratio < 0.1, fmt("%s EMA loss %.3f -> %.3f (x%.3f)", stage, ema.front(), ema.back(), ratio));
            } else {
                // Falls below a tenth of the initial loss within 6600 steps.
                const auto& steps = csv["step"];
                std::size_t k = 0;
                while (k < ema.size() && ema[k] >= 0.1 * ema.front()) ++k;
                const bool crossed = k < ema.size() && steps[k] < 6600;
                o.require(crossed, fmt("%s EMA loss %.3f below x0.1 at step %s, final %.3f (x%.3f)", stage,
                                       ema.front(), crossed ? std::to_string(int(steps[k])).c_str() : "never",
                                       ema.back(), ratio));
            }
        }
    }
    return o;
}

Outcome determinism(const fs::path& work, const ToyRun& toy)
{
    Outcome o;
    RunConfig c;
    c.seed = 11;
    c.synth_count = 24;
    c.det_steps = 30;
    c.det_warmup = 5;
    c.rec_steps = 20;
    c.rec_warmup = 5;
    c.log_every = 1000;
    c.checkpoint_every = 15;
    c.eval_noise_snr = 30;
    auto run_once = [&](const fs::path& dir) {
        fs::remove_all(dir);
        cmd_synth(c, dir / "data", std::cerr);
        cmd_train(Stage::detector, c, dir / "data", dir / "runs", std::nullopt, std::cerr);
        cmd_train(Stage::recognizer, c, dir / "data", dir / "runs", std::nullopt, std::cerr);
        std::ostringstream sink;
        return cmd_eval(dir / "runs" / "detector.lprc", dir / "runs" / "recognizer.lprc", dir / "data", c,
                        std::nullopt, dir / "runs" / "eval", sink);
    };
    const auto a = run_once(work / "a"), b = run_once(work / "b");
    auto bytes = [](const fs::path& p) { return serialize(load_checkpoint(p)); };
    o.require(bytes(work / "a/runs/detector.lprc") == bytes(work / "b/runs/detector.lprc") &&
                  bytes(work / "a/runs/recognizer.lprc") == bytes(work / "b/runs/recognizer.lprc"),
              "identical checkpoints from identical runs");
    o.require(without_timing(a.detector) == without_timing(b.detector) &&
                  without_timing(a.recognizer) == without_timing(b.recognizer) &&
                  without_timing(*a.noisy_detector) == without_timing(*b.noisy_detector) &&
                  without_timing(*a.noisy_recognizer) == without_timing(*b.noisy_recognizer) &&
                  a.plates.fully_correct == b.plates.fully_correct,
              "identical metric reports");

    // The toy models' evaluation, repeated.
    std::ostringstream sink;
    RunConfig tc = toy_config(7);
    const auto again = cmd_eval(toy.out / "detector.lprc", toy.out / "recognizer.lprc", work / "toy" / "data", tc,
                                0.0, work / "toy_eval_again", sink);
    o.require(without_timing(again.detector) == without_timing(toy.eval.detector) &&
                  without_timing(again.recognizer) == without_timing(toy.eval.recognizer),
              "toy evaluation repeats exactly");

    bool round_trip = true;
    for (const char* name : {"detector", "recognizer"}) {
        const auto path = work / "toy" / "runs" / (std::string(name) + ".lprc");
        const auto file = read_text_file(path);
        const auto re = serialize(load_checkpoint(path));
        round_trip = round_trip && std::string(re.begin(), re.end()) == file;
    }
    o.require(round_trip, "checkpoint load->save byte-exact");

    bool resumed = true;
    for (auto stage : {Stage::detector, Stage::recognizer}) {
        const std::string name = stage == Stage::detector ? "detector" : "recognizer";
        cmd_train(stage, c, work / "a" / "data", work / "resume", work / "a" / "runs" / (name + "_step15.lprc"),
                  std::cerr);
        resumed = resumed && bytes(work / "resume" / (name + ".lprc")) == bytes(work / "a" / "runs" / (name + ".lprc"));
    }
    o.require(resumed, "resume from step 15 matches uninterrupted run bit-exactly");
    return o;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Acceptance run"};
    std::string work = (fs::temp_directory_path() / "lpr_acceptance").string();
    std::set<int> only;
    app.add_option("--work-dir", work, "Scratch directory");
    app.add_option("--only", only, "Run only these criteria (5-8 share one toy run)")->delimiter(',');
    CLI11_PARSE(app, argc, argv);
    auto want = [&](int id) { return only.empty() || only.count(id) > 0; };
    const fs::path dir(work);
    const auto t0 = Clock::now();

    auto guarded = [&](int id, const std::string& name, auto&& fn) {
        if (!want(id)) return;
        try {
            report(id, name, fn());
        } catch (const std::exception& e) {
            Outcome o;
            o.require(false, std::string("exception: ") + e.what());
            report(id, name, o);
        }
    };

    guarded(1, "metric arithmetic", metric_arithmetic);
    guarded(2, "geometry constants", geometry);
    guarded(3, "gradient correctness", gradients);
    guarded(4, "oracle equivalence", oracles);

    if (want(5) || want(6) || want(7) || want(8)) {
        std::optional<ToyRun> toy;
        std::string error;
        try {
            toy = toy_run(dir / "toy", toy_config(7));
        } catch (const std::exception& e) {
            error = e.what();
        }
        auto with_toy = [&](int id, const std::string& name, auto&& fn) {
            guarded(id, name, [&] {
                if (!toy) throw std::runtime_error("toy run failed: " + error);
                return fn(*toy);
            });
        };
        with_toy(5, "toy end-to-end", toy_end_to_end);
        with_toy(6, "noise robustness", noise);
        with_toy(7, "loss-curve convention", loss_curves);
        with_toy(8, "determinism and persistence", [&](const ToyRun& r) { return determinism(dir, r); });
    }
    std::cout << (failures == 0 ? "ALL PASS" : fmt("%d criteria failed", failures)) << " ("
              << fmt("%.1f", seconds_since(t0) / 60) << " min)" << std::endl;
    return failures == 0 ? 0 : 1;
}
