#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "lpr/app.hpp"
#include "lpr/error.hpp"
#include "lpr/imageio.hpp"
#include "lpr/labels.hpp"

using namespace lpr;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch_dir(const std::string& name)
{
    auto p = fs::temp_directory_path() / ("lpr_app_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args)
{
    args.insert(args.begin(), "lpr");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = run_app(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

std::vector<json> json_lines(const std::string& text)
{
    std::vector<json> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) out.push_back(json::parse(line));
    }
    return out;
}

std::map<std::string, std::string> tree(const fs::path& root)
{
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) {
            std::ifstream in(e.path(), std::ios::binary);
            std::ostringstream ss;
            ss << in.rdbuf();
            files[fs::relative(e.path(), root).string()] = ss.str();
        }
    }
    return files;
}

// Tiny models so the command tests stay fast.
const std::vector<std::string> kTiny = {
    "--set", "det.width=0.0625", "--set", "det.input=96", "--set", "det.neck=1", "--set", "det.batch=2",
    "--set", "rec.width=0.0625", "--set", "rec.feature=8", "--set", "rec.rpn=8", "--set", "rec.hidden=16",
    "--set", "rec.batch=2", "--set", "log_every=1", "--set", "threads=2"};

std::vector<std::string> with_tiny(std::vector<std::string> args)
{
    args.insert(args.begin(), kTiny.begin(), kTiny.end());
    return args;
}

}  // namespace

TEST_CASE("synth is deterministic and writes a consistent dataset")
{
    const auto a = scratch_dir("synth_a"), b = scratch_dir("synth_b");
    REQUIRE(run({"--seed", "7", "synth", "--count", "10", "--out", a.string()}).code == exit_ok);
    REQUIRE(run({"--seed", "7", "synth", "--count", "10", "--out", b.string()}).code == exit_ok);
    CHECK(tree(a) == tree(b));

    const auto manifest = parse_manifest(read_text_file(a / "manifest.tsv"));
    CHECK(manifest.size() == 10);
    CHECK(std::count_if(manifest.begin(), manifest.end(), [](const auto& e) { return e.split == Split::test; }) == 2);

    // Reloaded annotations match the generator.
    SynthConfig sc;
    const auto scenes = generate_corpus(sc, 10, 7);
    const auto data = load_dataset(a);
    CHECK(data.train.size() + data.test.size() == 10);
    for (const auto& set : {data.train, data.test}) {
        for (const auto& ex : set) {
            const auto it = std::find_if(scenes.begin(), scenes.end(),
                                         [&](const SyntheticScene& s) { return s.image.pixels == ex.image->pixels; });
            REQUIRE(it != scenes.end());
            REQUIRE(ex.plates.size() == it->plates.size());
            for (std::size_t k = 0; k < ex.plates.size(); ++k) {
                CHECK(ex.plates[k].text == it->plates[k].text);
                CHECK(ex.plates[k].box.cx == doctest::Approx(it->plates[k].box.cx).epsilon(1e-5));
                CHECK(ex.plates[k].box.w == doctest::Approx(it->plates[k].box.w).epsilon(1e-5));
                REQUIRE(ex.plates[k].chars.size() == it->plates[k].chars.size());
                for (std::size_t c = 0; c < ex.plates[k].chars.size(); ++c) {
                    CHECK(ex.plates[k].chars[c].class_id == it->plates[k].chars[c].class_id);
                }
            }
        }
    }
}

TEST_CASE("synth with zero scenes writes an empty manifest")
{
    const auto dir = scratch_dir("synth_empty");
    const auto r = run({"synth", "--count", "0", "--out", dir.string()});
    CHECK(r.code == exit_ok);
    CHECK(read_text_file(dir / "manifest.tsv").empty());
}

TEST_CASE("default synth count gives an 80/20 manifest")
{
    RunConfig c;
    CHECK(c.synth_count == 500);
    const auto [train, test] = split_indices(c.synth_count, c.train_fraction, 1 - c.train_fraction, c.seed);
    CHECK(train.size() == 400);
    CHECK(test.size() == 100);
}

TEST_CASE("usage and data errors map to exit codes")
{
    CHECK(run({}).code == exit_usage);
    CHECK(run({"frobnicate"}).code == exit_usage);
    CHECK(run({"--set", "no.such=1", "synth", "--count", "0", "--out", scratch_dir("x").string()}).code ==
          exit_usage);
    CHECK(run({"--config", "/nonexistent/config.txt", "synth"}).code == exit_data);
    CHECK(run({"train", "sideways"}).code == exit_usage);
    const auto empty = scratch_dir("nodata");
    CHECK(run({"train", "detector", "--data", empty.string(), "--out", empty.string()}).code == exit_data);
    CHECK(run({"detect", "--model", (empty / "missing.lprc").string(), "img.png"}).code == exit_data);
    CHECK(run({"--help"}).code == exit_ok);
}

TEST_CASE("train, persist and run every inference command")
{
    const auto data = scratch_dir("e2e_data"), out = scratch_dir("e2e_out");
    REQUIRE(run({"--seed", "3", "synth", "--count", "5", "--out", data.string()}).code == exit_ok);

    // Zero steps: the checkpoint holds the initialization.
    auto r = run(with_tiny({"--set", "det.steps=0", "train", "detector", "--data", data.string(), "--out",
                            (out / "zero").string()}));
    REQUIRE(r.code == exit_ok);
    const auto zero = load_checkpoint(out / "zero" / "detector.lprc");
    CHECK(zero.meta("train.step") == "0");

    r = run(with_tiny({"--set", "det.steps=3", "--set", "checkpoint_every=2", "train", "detector", "--data",
                       data.string(), "--out", out.string()}));
    REQUIRE(r.code == exit_ok);
    CHECK(json_lines(r.out).at(0)["steps"] == 3);
    CHECK(fs::exists(out / "detector_step2.lprc"));
    const auto csv = read_text_file(out / "detector_loss.csv");
    CHECK(csv.rfind("step,lr,loss_total,coord,objectness,no_object,classification,ema_loss_total", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);

    // Resuming from step 2 reproduces the uninterrupted run.
    r = run(with_tiny({"--set", "det.steps=3", "train", "detector", "--data", data.string(), "--out",
                       (out / "resumed").string(), "--resume", (out / "detector_step2.lprc").string()}));
    REQUIRE(r.code == exit_ok);
    auto strip = [](Checkpoint c) {
        c.metadata.erase("train.final_loss");
        return serialize(c);
    };
    CHECK(strip(load_checkpoint(out / "resumed" / "detector.lprc")) == strip(load_checkpoint(out / "detector.lprc")));

    r = run(with_tiny({"--set", "rec.steps=2", "train", "recognizer", "--data", data.string(), "--out",
                       out.string()}));
    REQUIRE(r.code == exit_ok);
    const auto det = (out / "detector.lprc").string(), rec = (out / "recognizer.lprc").string();

    // Model-kind mismatch is a data error.
    CHECK(run({"detect", "--model", rec, "x.ppm"}).code == exit_data);

    const auto blank_path = out / "blank.ppm";
    Image blank(320, 240);
    std::fill(blank.pixels.begin(), blank.pixels.end(), std::uint8_t{128});
    save_image(blank, blank_path);
    r = run(with_tiny({"detect", "--model", det, blank_path.string()}));
    CHECK(r.code == exit_ok);
    CHECK(r.out.empty());
    CHECK(run({"detect", "--model", det, (out / "unreadable.ppm").string()}).code == exit_data);

    const auto scene = (data / parse_manifest(read_text_file(data / "manifest.tsv")).at(0).image).string();
    r = run(with_tiny({"detect", "--model", det, "--conf", "0", "--annotate", "--out", (out / "ann").string(),
                       scene}));
    REQUIRE(r.code == exit_ok);
    const auto dets = json_lines(r.out);
    CHECK(!dets.empty());
    for (const auto& d : dets) CHECK(d["detect_ms"].get<double>() > 0);
    CHECK(!fs::is_empty(out / "ann"));

    r = run(with_tiny({"recognize", "--model", rec, "--conf", "0", scene}));
    REQUIRE(r.code == exit_ok);
    const auto reading = json_lines(r.out).at(0);
    CHECK(reading["recognize_ms"].get<double>() > 0);
    CHECK(reading.contains("layout"));

    r = run(with_tiny({"pipeline", "--detector", det, "--recognizer", rec, "--conf", "0", scene, scene}));
    REQUIRE(r.code == exit_ok);
    const auto plates = json_lines(r.out);
    REQUIRE(!plates.empty());
    CHECK(plates.size() % 2 == 0);
    CHECK(plates.front()["image"] == scene);
    for (const auto& p : plates) {
        CHECK(p["detect_ms"].get<double>() > 0);
        CHECK(p["recognize_ms"].get<double>() > 0);
        CHECK(p["box"].size() == 4);
    }
    // Output follows input order, so both copies of the scene print identical records.
    for (std::size_t i = 0; i < plates.size() / 2; ++i) {
        CHECK(plates[i]["text"] == plates[i + plates.size() / 2]["text"]);
    }

    r = run(with_tiny({"eval", "--detector", det, "--recognizer", rec, "--data", data.string(), "--out",
                       (out / "eval").string(), "--noise-snr", "30"}));
    REQUIRE(r.code == exit_ok);
    CHECK(r.out.find("detector noisy (30 dB)") != std::string::npos);
    const auto cmp = read_text_file(out / "eval" / "eval_comparison.txt");
    CHECK(cmp.find("detector") != std::string::npos);
    const auto twin = from_jsonl(read_text_file(out / "eval" / "eval_detector.jsonl"));
    CHECK(format_table(twin) == read_text_file(out / "eval" / "eval_detector.txt"));
    CHECK(fs::exists(out / "eval" / "eval_recognizer_noisy.jsonl"));

    r = run(with_tiny({"eval", "--detector", det, "--recognizer", rec, "--data", data.string(), "--out",
                       (out / "eval2").string(), "--noise-snr", "0"}));
    CHECK(r.code == exit_ok);
    CHECK(!fs::exists(out / "eval2" / "eval_comparison.txt"));
    const auto again = from_jsonl(read_text_file(out / "eval2" / "eval_detector.jsonl"));
    CHECK(again.total.tp == twin.total.tp);
    CHECK(again.total.fp == twin.total.fp);
    CHECK(again.map == twin.map);
}
