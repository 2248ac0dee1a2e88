#include "lpr/app.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "lpr/error.hpp"
#include "lpr/imageio.hpp"
#include "lpr/labels.hpp"

namespace lpr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string image_extension() { return png_supported() ? ".png" : ".ppm"; }

void ensure_dir(const fs::path& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw DataError("cannot create directory " + dir.string());
}

json box_json(const BBox& b) { return json::array({b.x1(), b.y1(), b.x2(), b.y2()}); }

YoloConfig detector_config(const RunConfig& c)
{
    YoloConfig y;
    y.backbone.family = BackboneFamily::tiny_darknet;
    y.backbone.width_multiplier = c.det_width;
    y.num_classes = 1;
    y.input_size = c.det_input;
    y.neck_convs = c.det_neck;
    return y;
}

RecognizerConfig recognizer_config(const RunConfig& c)
{
    RecognizerConfig r;
    r.backbone.family = BackboneFamily::tiny_resnet;
    r.backbone.width_multiplier = c.rec_width;
    r.feature_channels = c.rec_feature;
    r.rpn_channels = c.rec_rpn;
    r.fc_hidden = c.rec_hidden;
    r.roi_sampling.background_low = static_cast<float>(c.rec_bg_low);
    return r;
}

AnchorSet detector_anchors(const RunConfig& c, std::span<const SceneExample> train)
{
    if (c.det_anchors == "auto") return fit_anchors(train, c.det_input, c.seed);
    if (c.det_anchors == "fallback") return AnchorSet::fallback();
    std::array<AnchorWH, 9> a{};
    std::stringstream ss(c.det_anchors);
    std::string pair;
    int n = 0;
    while (std::getline(ss, pair, ';')) {
        float w = 0, h = 0;
        char extra = 0;
        if (n >= 9 || std::sscanf(pair.c_str(), " %f , %f %c", &w, &h, &extra) != 2 || !(w > 0 && h > 0)) {
            throw ConfigError("det.anchors must be auto, fallback or nine w,h pairs separated by ';'");
        }
        a[static_cast<std::size_t>(n++)] = {w, h};
    }
    if (n != 9) throw ConfigError("det.anchors must list nine w,h pairs");
    return AnchorSet(a);
}

EvalSettings eval_settings(const RunConfig& c)
{
    EvalSettings s;
    s.metrics.iou_threshold = static_cast<float>(c.eval_iou);
    s.metrics.interpolation = c.eval_ap == "voc11" ? ApInterpolation::voc11 : ApInterpolation::all_points;
    s.noise_seed = mix_seed(c.seed, 0x6e6f697365ULL);
    s.threads = c.threads;
    return s;
}

DetectOptions detect_options(const RunConfig& c, const InferenceFlags& f)
{
    return {f.conf.value_or(static_cast<float>(c.det_conf)), f.nms_iou.value_or(static_cast<float>(c.det_nms_iou))};
}

std::string stem_of(const fs::path& p) { return p.stem().string(); }

void write_annotated(const Image& image, std::span<const Annotation> boxes, const InferenceFlags& flags,
                     const fs::path& source)
{
    if (!flags.annotate_dir) return;
    ensure_dir(*flags.annotate_dir);
    save_image(annotate(image, boxes), *flags.annotate_dir / (stem_of(source) + "_annotated" + image_extension()));
}

void write_lines(const fs::path& path, const std::string& text) { write_text_file(path, text); }

// Per-image JSONL lines written in input order regardless of worker completion order.
void for_each_image(const std::vector<fs::path>& images, int threads, std::ostream& out,
                    const std::function<std::string(const fs::path&)>& fn)
{
    std::vector<std::string> lines(images.size());
    parallel_for(static_cast<int>(images.size()), worker_threads(threads),
                 [&](int i) { lines[static_cast<std::size_t>(i)] = fn(images[static_cast<std::size_t>(i)]); });
    for (const auto& l : lines) out << l;
}

}  // namespace

// ---------------------------------------------------------------------------

int cmd_synth(const RunConfig& config, const fs::path& dir, std::ostream& log)
{
    SynthConfig sc;
    sc.min_plates = config.synth_min_plates;
    sc.max_plates = config.synth_max_plates;
    ensure_dir(dir / "images");
    ensure_dir(dir / "labels");
    ensure_dir(dir / "chars");
    const auto scenes = generate_corpus(sc, config.synth_count, config.seed);
    const auto [train, test] =
        split_indices(config.synth_count, config.train_fraction, 1.0 - config.train_fraction, config.seed);
    std::vector<Split> split(static_cast<std::size_t>(config.synth_count), Split::train);
    for (int i : test) split[static_cast<std::size_t>(i)] = Split::test;

    std::vector<ManifestEntry> manifest;
    for (int i = 0; i < config.synth_count; ++i) {
        const auto& s = scenes[static_cast<std::size_t>(i)];
        char name[32];
        std::snprintf(name, sizeof name, "scene_%05d", i);
        ManifestEntry e;
        e.image = "images/" + std::string(name) + image_extension();
        e.labels = "labels/" + std::string(name) + ".txt";
        e.split = split[static_cast<std::size_t>(i)];
        std::vector<YoloLabelRecord> records;
        for (std::size_t k = 0; k < s.plates.size(); ++k) {
            const auto& p = s.plates[k];
            records.push_back(YoloLabelRecord::from_pixels(0, p.box, s.image.width, s.image.height));
            e.chars.push_back("chars/" + std::string(name) + "_p" + std::to_string(k) + ".chars");
            write_text_file(dir / e.chars.back(), format_char_annotations(p.chars));
        }
        save_image(s.image, dir / e.image);
        write_text_file(dir / e.labels, format_yolo_labels(records));
        manifest.push_back(std::move(e));
    }
    write_text_file(dir / "manifest.tsv", format_manifest(manifest));
    log << "wrote " << config.synth_count << " scenes (" << train.size() << " train, " << test.size() << " test) to "
        << dir.string() << '\n';
    return config.synth_count;
}

Dataset load_dataset(const fs::path& dir)
{
    const auto manifest_path = dir / "manifest.tsv";
    if (!fs::exists(manifest_path)) throw DataError("no manifest at " + manifest_path.string());
    const auto entries = parse_manifest(read_text_file(manifest_path));
    const CharClassTable table;
    Dataset d;
    for (const auto& e : entries) {
        auto image = std::make_shared<const Image>(load_image(dir / e.image));
        const auto labels = parse_yolo_labels(read_text_file(dir / e.labels));
        if (!e.chars.empty() && e.chars.size() != labels.records.size()) {
            throw DataError(e.labels + ": " + std::to_string(labels.records.size()) + " plates but " +
                            std::to_string(e.chars.size()) + " character files");
        }
        SceneExample ex{image, {}};
        for (std::size_t k = 0; k < labels.records.size(); ++k) {
            PlateTruth p;
            p.box = labels.records[k].to_pixels(image->width, image->height);
            if (!e.chars.empty()) {
                p.chars = parse_char_annotations(read_text_file(dir / e.chars[k]), table.size(), p.box.w, p.box.h);
                auto ordered = p.chars;
                std::stable_sort(ordered.begin(), ordered.end(),
                                 [](const CharAnnotation& a, const CharAnnotation& b) { return a.box.cx < b.box.cx; });
                for (const auto& c : ordered) p.text.push_back(table[c.class_id].glyph);
            }
            ex.plates.push_back(std::move(p));
        }
        (e.split == Split::train ? d.train : d.test).push_back(std::move(ex));
    }
    return d;
}

Stage parse_stage(std::string_view name)
{
    if (name == "detector") return Stage::detector;
    if (name == "recognizer") return Stage::recognizer;
    throw ConfigError("stage must be detector or recognizer, got '" + std::string(name) + "'");
}

TrainSummary cmd_train(Stage stage, const RunConfig& config, const fs::path& data_dir, const fs::path& out_dir,
                       const std::optional<fs::path>& resume, std::ostream& log)
{
    auto data = load_dataset(data_dir);
    if (data.train.empty()) throw DataError("training split is empty");
    ensure_dir(out_dir);
    const std::string name = stage == Stage::detector ? "detector" : "recognizer";
    TrainOptions o;
    o.seed = config.seed;
    o.steps = stage == Stage::detector ? config.det_steps : config.rec_steps;
    o.batch = stage == Stage::detector ? config.det_batch : config.rec_batch;
    o.learning_rate = stage == Stage::detector ? config.det_lr : config.rec_lr;
    o.warmup_steps = stage == Stage::detector ? config.det_warmup : config.rec_warmup;

    LossLog losses;
    const std::map<std::string, std::string> meta{{"train.seed", std::to_string(config.seed)},
                                                  {"train.total_steps", std::to_string(o.steps)}};
    const auto t0 = std::chrono::steady_clock::now();
    auto hook = [&](int step, const LossLog::Row& row) {
        if ((step + 1) % config.log_every == 0 || step + 1 == o.steps) {
            const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            log << name << " step " << step + 1 << "/" << o.steps << " loss " << row.total << " lr " << row.lr << " ("
                << static_cast<int>(s) << " s)\n";
        }
    };

    auto train_with = [&](auto& trainer) {
        if (resume) {
            trainer.restore(load_checkpoint(*resume));
            log << "resumed " << name << " at step " << trainer.step() << '\n';
        }
        while (trainer.step() < o.steps) {
            const int every = config.checkpoint_every > 0 ? config.checkpoint_every : o.steps;
            const int next = std::min(o.steps, (trainer.step() / every + 1) * every);
            trainer.run(next, losses, hook);
            if (config.checkpoint_every > 0 && next < o.steps) {
                save_checkpoint(trainer.checkpoint(meta),
                                out_dir / (name + "_step" + std::to_string(next) + ".lprc"));
            }
        }
        auto final_meta = meta;
        if (!losses.rows.empty()) final_meta["train.final_loss"] = std::to_string(losses.rows.back().total);
        save_checkpoint(trainer.checkpoint(final_meta), out_dir / (name + ".lprc"));
        return trainer.step();
    };

    TrainSummary summary;
    if (stage == Stage::detector) {
        YoloDetector net(detector_config(config), detector_anchors(config, data.train), mix_seed(config.seed, 1));
        DetectorTrainer trainer(net, std::move(data.train), o, static_cast<float>(config.det_ignore_iou));
        summary.steps = train_with(trainer);
    } else {
        Recognizer net(recognizer_config(config), mix_seed(config.seed, 2));
        RecognizerTrainer trainer(net, plate_examples(data.train), o, config.rec_jitter);
        summary.steps = train_with(trainer);
    }
    summary.checkpoint = out_dir / (name + ".lprc");
    summary.loss_log = out_dir / (name + "_loss.csv");
    write_lines(summary.loss_log, losses.to_csv(0.6));
    summary.final_loss = losses.rows.empty() ? 0.0 : losses.rows.back().total;
    return summary;
}

// ---------------------------------------------------------------------------

void cmd_detect(const fs::path& detector, const std::vector<fs::path>& images, const RunConfig& config,
                const InferenceFlags& flags, std::ostream& out)
{
    auto net = load_detector(load_checkpoint(detector));
    const auto options = detect_options(config, flags);
    for_each_image(images, config.threads, out, [&](const fs::path& path) {
        const auto image = load_image(path);
        const auto t0 = std::chrono::steady_clock::now();
        const auto dets = detect_plates(*net, image, options);
        const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        std::string lines;
        std::vector<Annotation> boxes;
        for (const auto& d : dets) {
            json j{{"image", path.string()}, {"box", box_json(d.box)}, {"score", d.score()}, {"detect_ms", ms}};
            lines += j.dump() + "\n";
            char label[32];
            std::snprintf(label, sizeof label, "PLATE %.2f", d.score());
            boxes.push_back({d.box, label});
        }
        write_annotated(image, boxes, flags, path);
        return lines;
    });
}

void cmd_recognize(const fs::path& recognizer, const std::vector<fs::path>& images, const RunConfig& config,
                   const InferenceFlags& flags, std::ostream& out)
{
    auto net = load_recognizer(load_checkpoint(recognizer));
    const float score = flags.conf.value_or(static_cast<float>(config.rec_score));
    const float nms = flags.nms_iou.value_or(static_cast<float>(config.rec_nms_iou));
    for_each_image(images, config.threads, out, [&](const fs::path& path) {
        const auto image = load_image(path);
        const auto t0 = std::chrono::steady_clock::now();
        const auto chars = recognize_characters(*net, image, score, nms);
        const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        const auto reading = assemble(chars);
        json glyphs = json::array();
        std::vector<Annotation> boxes;
        for (const auto& g : reading.glyphs) {
            const auto& b = g.box;
            glyphs.push_back({{"char", std::string(1, g.cls.glyph)}, {"score", g.score}, {"box", box_json(b)}});
            boxes.push_back({b, std::string(1, g.cls.glyph)});
        }
        write_annotated(image, boxes, flags, path);
        json j{{"image", path.string()},         {"layout", to_string(reading.layout)}, {"text", reading.text},
               {"mean_score", reading.mean_score}, {"chars", glyphs},                   {"recognize_ms", ms}};
        return j.dump() + "\n";
    });
}

std::string plate_record_json(const std::string& image, const PlateRecord& r)
{
    json chars = json::array();
    for (const auto& g : r.reading.glyphs) chars.push_back({{"char", std::string(1, g.cls.glyph)}, {"score", g.score}});
    json j{{"image", image},
           {"box", box_json(r.box)},
           {"plate_score", r.plate_score},
           {"layout", to_string(r.reading.layout)},
           {"text", r.reading.text},
           {"mean_score", r.reading.mean_score},
           {"chars", chars},
           {"detect_ms", r.detect_ms},
           {"recognize_ms", r.recognize_ms}};
    return j.dump();
}

void cmd_pipeline(const fs::path& detector, const fs::path& recognizer, const std::vector<fs::path>& images,
                  const RunConfig& config, const InferenceFlags& flags, std::ostream& out)
{
    auto det = load_detector(load_checkpoint(detector));
    auto rec = load_recognizer(load_checkpoint(recognizer));
    PipelineOptions options;
    options.detect = detect_options(config, InferenceFlags{std::nullopt, std::nullopt, std::nullopt});
    if (flags.conf) options.detect.conf_threshold = *flags.conf;
    if (flags.nms_iou) options.detect.nms_iou = *flags.nms_iou;
    options.char_score = static_cast<float>(config.rec_score);
    options.char_nms_iou = static_cast<float>(config.rec_nms_iou);
    for_each_image(images, config.threads, out, [&](const fs::path& path) {
        const auto image = load_image(path);
        const auto records = run_pipeline(*det, *rec, image, options);
        std::string lines;
        std::vector<Annotation> boxes;
        for (const auto& r : records) {
            lines += plate_record_json(path.string(), r) + "\n";
            boxes.push_back({r.box, r.reading.text});
        }
        write_annotated(image, boxes, flags, path);
        return lines;
    });
}

EvalSummary cmd_eval(const fs::path& detector, const fs::path& recognizer, const fs::path& data_dir,
                     const RunConfig& config, std::optional<double> noise_snr, const fs::path& out_dir,
                     std::ostream& out)
{
    auto det = load_detector(load_checkpoint(detector));
    auto rec = load_recognizer(load_checkpoint(recognizer));
    const auto data = load_dataset(data_dir);
    if (data.test.empty()) throw DataError("test split is empty");
    ensure_dir(out_dir);

    auto settings = eval_settings(config);
    const DetectOptions detect{static_cast<float>(config.det_conf), static_cast<float>(config.det_nms_iou)};
    PipelineOptions pipe;
    pipe.detect = detect;
    pipe.char_score = static_cast<float>(config.rec_score);
    pipe.char_nms_iou = static_cast<float>(config.rec_nms_iou);
    const float score = pipe.char_score, nms = pipe.char_nms_iou;

    EvalSummary s;
    s.detector = evaluate_detector(*det, data.test, detect, settings);
    s.recognizer = evaluate_recognizer(*rec, data.test, score, nms, settings);
    s.plates = evaluate_plate_text(*det, *rec, data.test, pipe, settings);
    out << format_table(s.detector) << '\n' << format_table(s.recognizer) << '\n';
    char line[160];
    std::snprintf(line, sizeof line, "plates %d  detected %d  fully correct %d (%.2f%%)  standard layout %d\n",
                  s.plates.plates, s.plates.detected, s.plates.fully_correct, 100.0 * s.plates.fraction_correct(),
                  s.plates.standard_layout);
    out << line;
    write_lines(out_dir / "eval_detector.txt", format_table(s.detector));
    write_lines(out_dir / "eval_detector.jsonl", to_jsonl(s.detector));
    write_lines(out_dir / "eval_recognizer.txt", format_table(s.recognizer));
    write_lines(out_dir / "eval_recognizer.jsonl", to_jsonl(s.recognizer));
    const json plates{{"plates", s.plates.plates},
                      {"detected", s.plates.detected},
                      {"fully_correct", s.plates.fully_correct},
                      {"standard_layout", s.plates.standard_layout}};
    write_lines(out_dir / "eval_plates.json", plates.dump() + "\n");

    const double snr = noise_snr.value_or(config.eval_noise_snr);
    if (snr > 0) {
        settings.noise_snr = snr;
        s.noisy_detector = evaluate_detector(*det, data.test, detect, settings);
        s.noisy_recognizer = evaluate_recognizer(*rec, data.test, score, nms, settings);
        char title[64];
        std::snprintf(title, sizeof title, " (%.4g dB)", snr);
        s.noisy_detector->title = "detector noisy" + std::string(title);
        s.noisy_recognizer->title = "recognizer noisy" + std::string(title);
        const std::vector<EvalReport> cmp{s.detector, *s.noisy_detector, s.recognizer, *s.noisy_recognizer};
        const auto table = format_comparison(cmp);
        out << '\n' << table;
        write_lines(out_dir / "eval_comparison.txt", table);
        write_lines(out_dir / "eval_detector_noisy.jsonl", to_jsonl(*s.noisy_detector));
        write_lines(out_dir / "eval_recognizer_noisy.jsonl", to_jsonl(*s.noisy_recognizer));
    }
    return s;
}

// ---------------------------------------------------------------------------

int run_app(int argc, const char* const* argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Two-stage license plate detection and recognition"};
    app.require_subcommand(1);
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> overrides;
    app.add_option("--config", config_path, "key=value configuration file");
    app.add_option("--seed", seed, "Random seed (overrides the config)");
    app.add_option("--set", overrides, "Extra key=value override, repeatable");

    std::string out_dir, data_dir, detector, recognizer, resume, stage;
    std::vector<std::string> images;
    std::optional<float> conf, nms_iou;
    std::optional<double> noise_snr;
    std::optional<int> count;
    bool annotate_flag = false;

    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
    synth->add_option("--out", out_dir, "Output directory (default: data_dir)");
    synth->add_option("--count", count, "Number of scenes (overrides synth.count)");

    auto* train = app.add_subcommand("train", "Train the detector or the recognizer");
    train->add_option("stage", stage, "detector or recognizer")->required();
    train->add_option("--data", data_dir, "Dataset directory (default: data_dir)");
    train->add_option("--out", out_dir, "Output directory (default: out_dir)");
    train->add_option("--resume", resume, "Checkpoint to resume from");

    auto add_inference = [&](CLI::App* sub) {
        sub->add_option("images", images, "Input images")->required();
        sub->add_option("--conf", conf, "Score threshold");
        sub->add_option("--nms-iou", nms_iou, "NMS IoU threshold");
        sub->add_option("--out", out_dir, "Directory for annotated images (default: out_dir)");
        sub->add_flag("--annotate", annotate_flag, "Write annotated copies of the inputs");
    };
    auto* detect = app.add_subcommand("detect", "Detect plates");
    detect->add_option("--model", detector, "Detector checkpoint")->required();
    add_inference(detect);
    auto* recognize = app.add_subcommand("recognize", "Read characters from plate crops");
    recognize->add_option("--model", recognizer, "Recognizer checkpoint")->required();
    add_inference(recognize);
    auto* pipeline = app.add_subcommand("pipeline", "Detect, crop, recognize and assemble");
    pipeline->add_option("--detector", detector, "Detector checkpoint")->required();
    pipeline->add_option("--recognizer", recognizer, "Recognizer checkpoint")->required();
    add_inference(pipeline);

    auto* eval = app.add_subcommand("eval", "Evaluate both stages on the test split");
    eval->add_option("--detector", detector, "Detector checkpoint")->required();
    eval->add_option("--recognizer", recognizer, "Recognizer checkpoint")->required();
    eval->add_option("--data", data_dir, "Dataset directory (default: data_dir)");
    eval->add_option("--out", out_dir, "Report directory (default: out_dir)");
    eval->add_option("--noise-snr", noise_snr, "SNR in dB of the noisy pass; <= 0 disables it");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? exit_ok : exit_usage;
    }

    try {
        RunConfig config;
        if (!config_path.empty()) config.apply(read_text_file(config_path));
        for (const auto& o : overrides) {
            const auto eq = o.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + o + "'");
            config.set(o.substr(0, eq), o.substr(eq + 1));
        }
        if (seed) config.seed = *seed;
        if (count) config.set("synth.count", std::to_string(*count));
        if (data_dir.empty()) data_dir = config.data_dir;
        const fs::path out_path = out_dir.empty() ? fs::path(config.out_dir) : fs::path(out_dir);
        std::vector<fs::path> paths(images.begin(), images.end());
        InferenceFlags flags{conf, nms_iou, std::nullopt};
        if (annotate_flag) flags.annotate_dir = out_path;

        if (*synth) {
            cmd_synth(config, out_dir.empty() ? fs::path(config.data_dir) : fs::path(out_dir), err);
        } else if (*train) {
            std::optional<fs::path> from;
            if (!resume.empty()) from = resume;
            const auto s = cmd_train(parse_stage(stage), config, data_dir, out_path, from, err);
            out << json{{"stage", stage},
                        {"checkpoint", s.checkpoint.string()},
                        {"loss_log", s.loss_log.string()},
                        {"steps", s.steps},
                        {"final_loss", s.final_loss}}
                       .dump()
                << '\n';
        } else if (*detect) {
            cmd_detect(detector, paths, config, flags, out);
        } else if (*recognize) {
            cmd_recognize(recognizer, paths, config, flags, out);
        } else if (*pipeline) {
            cmd_pipeline(detector, recognizer, paths, config, flags, out);
        } else if (*eval) {
            cmd_eval(detector, recognizer, data_dir, config, noise_snr, out_path, out);
        }
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return exit_usage;
    } catch (const ArgumentError& e) {
        err << "error: " << e.what() << '\n';
        return exit_usage;
    } catch (const NumericError& e) {
        err << "numeric failure: " << e.what() << '\n';
        return exit_numeric;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return exit_data;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return exit_data;
    }
    return exit_ok;
}

}  // namespace lpr
