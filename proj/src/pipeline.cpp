#include "lpr/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <mutex>
#include <numbers>
#include <numeric>
#include <sstream>
#include <thread>

#include "lpr/error.hpp"
#include "lpr/ops.hpp"

namespace lpr {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0)
{
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::string fmt(double v)
{
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

double parse_double(const std::string& s, const std::string& key)
{
    double v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw DataError("metadata '" + key + "' is not a number");
    return v;
}

int parse_int(const std::string& s, const std::string& key)
{
    int v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) throw DataError("metadata '" + key + "' is not an integer");
    return v;
}

std::vector<double> parse_list(const std::string& s, const std::string& key)
{
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_double(item, key));
    return out;
}

std::string join(const std::vector<double>& v)
{
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt(v[i]);
    return out;
}

// Clips the global gradient norm; returns the norm before clipping.
double clip_gradients(Optimizer& opt, double max_norm)
{
    double sq = 0;
    for (const auto& [name, t] : opt.params()) {
        for (float g : t.grad()) sq += static_cast<double>(g) * g;
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0 && norm > max_norm) {
        const auto scale = static_cast<float>(max_norm / norm);
        for (const auto& [name, t] : opt.params()) {
            TensorF p = t;
            for (float& g : p.grad()) g *= scale;
        }
    }
    return norm;
}

void zero_grads(Optimizer& opt)
{
    for (const auto& [name, t] : opt.params()) {
        TensorF p = t;
        p.zero_grad();
    }
}

// Stacks 1 x C x H x W tensors along the batch axis.
TensorF stack(const std::vector<TensorF>& items)
{
    Shape shape = items.front().shape();
    const auto per = static_cast<std::size_t>(items.front().numel());
    std::vector<float> data;
    data.reserve(per * items.size());
    for (const auto& t : items) data.insert(data.end(), t.data().begin(), t.data().end());
    shape[0] = static_cast<int>(items.size());
    return TensorF::from_data(std::move(shape), std::move(data));
}

void flip_horizontal(TensorF& t)
{
    const int c = t.dim(1), h = t.dim(2), w = t.dim(3);
    auto d = t.data();
    for (int ch = 0; ch < c; ++ch) {
        for (int y = 0; y < h; ++y) {
            float* row = &d[(static_cast<std::size_t>(ch) * h + y) * w];
            std::reverse(row, row + w);
        }
    }
}

OptimizerConfig adam(const TrainOptions& o)
{
    OptimizerConfig c;
    c.kind = OptimizerKind::adam;
    c.learning_rate = o.learning_rate;
    return c;
}

void check_finite(double loss, int step, double lr)
{
    if (!std::isfinite(loss)) {
        throw NumericError("non-finite loss at step " + std::to_string(step) + " (lr " + fmt(lr) + ")");
    }
}

Checkpoint make_checkpoint(ModelKind kind, std::map<std::string, std::string> meta, const Optimizer::NamedTensors& model,
                           const Optimizer& opt, int step)
{
    Checkpoint c;
    c.kind = kind;
    c.metadata = std::move(meta);
    c.metadata["train.step"] = std::to_string(step);
    c.metadata["train.optimizer_steps"] = std::to_string(opt.steps());
    for (const auto& [name, t] : model) c.tensors.emplace_back("model." + name, t.clone());
    for (const auto& [name, t] : opt.state_tensors()) c.tensors.emplace_back("optim." + name, t);
    return c;
}

void restore_training(const Checkpoint& c, const Optimizer::NamedTensors& model, Optimizer& opt, int& step)
{
    copy_tensors(c.tensors, model, "model.");
    Optimizer::NamedTensors state;
    for (const auto& [name, t] : c.tensors) {
        if (name.rfind("optim.", 0) == 0) state.emplace_back(name.substr(6), t);
    }
    opt.load_state(state, std::stoll(c.meta("train.optimizer_steps")));
    step = parse_int(c.meta("train.step"), "train.step");
}

// Network-input boxes of an example after letterboxing.
std::vector<BBox> letterboxed_boxes(const SceneExample& ex, const LetterboxTransform& t)
{
    std::vector<BBox> out;
    for (const auto& p : ex.plates) {
        out.push_back(t.map(p.box).clipped(static_cast<float>(t.target), static_cast<float>(t.target)));
    }
    return out;
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream)
{
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

int worker_threads(int requested)
{
    if (requested > 0) return requested;
    if (const char* env = std::getenv("LPR_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(int n, int threads, const std::function<void(int)>& fn)
{
    threads = std::max(1, std::min(threads, n));
    if (threads == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (int i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

std::vector<SceneExample> scene_examples(std::vector<SyntheticScene> scenes)
{
    std::vector<SceneExample> out;
    for (auto& s : scenes) out.push_back({std::make_shared<const Image>(std::move(s.image)), std::move(s.plates)});
    return out;
}

std::vector<PlateExample> plate_examples(std::span<const SceneExample> scenes)
{
    std::vector<PlateExample> out;
    for (const auto& s : scenes) {
        for (const auto& p : s.plates) out.push_back({s.image, p});
    }
    return out;
}

Window plate_window(const BBox& box)
{
    const double w = box.w * 1.06, h = box.h * 1.16;
    return {box.cx - w / 2, box.cy - h / 2, w, h};
}

AnchorSet fit_anchors(std::span<const SceneExample> scenes, int input_size, std::uint64_t seed)
{
    std::vector<AnchorWH> sizes;
    for (const auto& s : scenes) {
        const auto t = letterbox_transform(s.image->width, s.image->height, input_size);
        for (const auto& p : s.plates) {
            const auto b = t.map(p.box);
            sizes.push_back({b.w, b.h});
        }
    }
    return kmeans_anchors(sizes, seed);
}

double scheduled_lr(const TrainOptions& o, int step)
{
    if (o.warmup_steps > 0 && step < o.warmup_steps) return o.learning_rate * (step + 1) / o.warmup_steps;
    const int span = std::max(1, o.steps - o.warmup_steps);
    const double t = std::clamp(static_cast<double>(step - o.warmup_steps) / span, 0.0, 1.0);
    const double floor = o.final_lr_fraction;
    return o.learning_rate * (floor + (1 - floor) * 0.5 * (1 + std::cos(std::numbers::pi * t)));
}

std::string LossLog::to_csv(double ema_factor) const
{
    std::ostringstream os;
    os << "step,lr,loss_total";
    for (const auto& p : parts) os << ',' << p;
    os << ",ema_loss_total";
    for (const auto& p : parts) os << ",ema_" << p;
    os << '\n';
    std::vector<std::vector<double>> series(parts.size() + 1);
    for (const auto& r : rows) {
        series[0].push_back(r.total);
        for (std::size_t k = 0; k < parts.size(); ++k) series[k + 1].push_back(r.parts.at(k));
    }
    std::vector<std::vector<double>> ema;
    for (const auto& s : series) ema.push_back(ema_smooth(s, ema_factor));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        os << rows[i].step << ',' << fmt(rows[i].lr) << ',' << fmt(rows[i].total);
        for (double v : rows[i].parts) os << ',' << fmt(v);
        for (const auto& e : ema) os << ',' << fmt(e[i]);
        os << '\n';
    }
    return os.str();
}

std::vector<double> LossLog::totals() const
{
    std::vector<double> out;
    for (const auto& r : rows) out.push_back(r.total);
    return out;
}

std::vector<int> batch_indices(int dataset_size, int batch, int step, std::uint64_t seed)
{
    if (dataset_size <= 0) throw DataError("training set is empty");
    std::vector<int> out;
    std::vector<int> perm;
    std::int64_t cached_epoch = -1;
    for (int b = 0; b < batch; ++b) {
        const std::int64_t flat = static_cast<std::int64_t>(step) * batch + b;
        const std::int64_t epoch = flat / dataset_size;
        if (epoch != cached_epoch) {
            perm.resize(static_cast<std::size_t>(dataset_size));
            std::iota(perm.begin(), perm.end(), 0);
            std::mt19937_64 rng(mix_seed(seed, 0x100000000ULL + static_cast<std::uint64_t>(epoch)));
            std::shuffle(perm.begin(), perm.end(), rng);
            cached_epoch = epoch;
        }
        out.push_back(perm[static_cast<std::size_t>(flat % dataset_size)]);
    }
    return out;
}

// ---------------------------------------------------------------------------

DetectorTrainer::DetectorTrainer(YoloDetector& net, std::vector<SceneExample> data, TrainOptions options,
                                 float ignore_iou)
    : net_(net),
      data_(std::move(data)),
      options_(options),
      ignore_iou_(ignore_iou),
      optimizer_(adam(options), net.network().named_parameters(""))
{
    if (data_.empty()) throw DataError("detector training set is empty");
}

void DetectorTrainer::run(int until, LossLog& log, const StepHook& hook)
{
    if (log.parts.empty()) log.parts = {"coord", "objectness", "no_object", "classification"};
    until = std::min(until, options_.steps);
    const int size = net_.config().input_size;
    for (; step_ < until; ++step_) {
        std::mt19937_64 rng(mix_seed(options_.seed, static_cast<std::uint64_t>(step_)));
        std::vector<TensorF> images;
        std::vector<YoloTargets> targets;
        for (int idx : batch_indices(static_cast<int>(data_.size()), options_.batch, step_, options_.seed)) {
            const auto& ex = data_[static_cast<std::size_t>(idx)];
            auto lb = letterbox(*ex.image, size);
            auto boxes = letterboxed_boxes(ex, lb.transform);
            if (std::bernoulli_distribution(0.5)(rng)) {
                flip_horizontal(lb.tensor);
                for (auto& b : boxes) b.cx = static_cast<float>(size) - b.cx;
            }
            std::vector<int> classes(boxes.size(), 0);
            targets.push_back(assign_targets(boxes, classes, net_.anchors(), size, ignore_iou_));
            images.push_back(std::move(lb.tensor));
        }
        const double lr = scheduled_lr(options_, step_);
        zero_grads(optimizer_);
        auto raw = net_.forward(stack(images), true);
        auto loss = yolo_loss(raw, targets, YoloLossConfig{net_.config().num_classes, 5.0});
        const double total = loss.total.item();
        check_finite(total, step_, lr);
        loss.total.backward();
        clip_gradients(optimizer_, options_.grad_clip_norm);
        optimizer_.step(lr);
        const auto n = static_cast<double>(options_.batch);
        LossLog::Row row{step_, lr, total, {loss.coord / n, loss.objectness / n, loss.no_object / n, loss.classification / n}};
        log.rows.push_back(row);
        if (hook) hook(step_, row);
    }
}

Checkpoint DetectorTrainer::checkpoint(const std::map<std::string, std::string>& extra) const
{
    auto meta = describe(net_.config(), net_.anchors());
    meta.insert(extra.begin(), extra.end());
    return make_checkpoint(ModelKind::detector, meta, net_.network().named_tensors(""), optimizer_, step_);
}

void DetectorTrainer::restore(const Checkpoint& c)
{
    if (c.kind != ModelKind::detector) throw DataError("checkpoint holds a " + to_string(c.kind) + ", not a detector");
    restore_training(c, net_.network().named_tensors(""), optimizer_, step_);
}

RecognizerTrainer::RecognizerTrainer(Recognizer& net, std::vector<PlateExample> data, TrainOptions options,
                                     double jitter)
    : net_(net),
      data_(std::move(data)),
      options_(options),
      jitter_(jitter),
      optimizer_(adam(options), net.named_parameters())
{
    if (data_.empty()) throw DataError("recognizer training set is empty");
}

void RecognizerTrainer::run(int until, LossLog& log, const StepHook& hook)
{
    if (log.parts.empty()) log.parts = {"rpn_objectness", "rpn_localization", "classification", "localization"};
    until = std::min(until, options_.steps);
    for (; step_ < until; ++step_) {
        std::mt19937_64 rng(mix_seed(options_.seed, static_cast<std::uint64_t>(step_)));
        std::uniform_real_distribution<double> u(-jitter_, jitter_);
        std::vector<TensorF> crops;
        std::vector<std::vector<BBox>> gt;
        std::vector<std::vector<int>> classes;
        for (int idx : batch_indices(static_cast<int>(data_.size()), options_.batch, step_, options_.seed)) {
            const auto& ex = data_[static_cast<std::size_t>(idx)];
            auto win = plate_window(ex.plate.box);
            const double sw = 1 + u(rng), sh = 1 + 2 * u(rng);
            const double cx = win.x0 + win.w / 2 + u(rng) * win.w * 0.5, cy = win.y0 + win.h / 2 + u(rng) * win.h;
            win = {cx - win.w * sw / 2, cy - win.h * sh / 2, win.w * sw, win.h * sh};
            crops.push_back(resample_window(*ex.image, win.x0, win.y0, win.w, win.h, kPlateWidth, kPlateHeight));
            std::vector<BBox> boxes;
            std::vector<int> ids;
            for (const auto& c : chars_in_window(ex.plate, win.x0, win.y0, win.w, win.h, kPlateWidth, kPlateHeight)) {
                boxes.push_back(c.box);
                ids.push_back(c.class_id);
            }
            gt.push_back(std::move(boxes));
            classes.push_back(std::move(ids));
        }
        const double lr = scheduled_lr(options_, step_);
        zero_grads(optimizer_);
        auto losses = net_.losses(stack(crops), gt, classes, rng);
        auto total = losses.total();
        const double value = total.item();
        check_finite(value, step_, lr);
        total.backward();
        clip_gradients(optimizer_, options_.grad_clip_norm);
        optimizer_.step(lr);
        LossLog::Row row{step_, lr, value,
                         {losses.rpn_objectness.item(), losses.rpn_localization.item(), losses.classification.item(),
                          losses.localization.item()}};
        log.rows.push_back(row);
        if (hook) hook(step_, row);
    }
}

Checkpoint RecognizerTrainer::checkpoint(const std::map<std::string, std::string>& extra) const
{
    auto meta = describe(net_.config());
    meta.insert(extra.begin(), extra.end());
    return make_checkpoint(ModelKind::recognizer, meta, net_.named_tensors(), optimizer_, step_);
}

void RecognizerTrainer::restore(const Checkpoint& c)
{
    if (c.kind != ModelKind::recognizer) {
        throw DataError("checkpoint holds a " + to_string(c.kind) + ", not a recognizer");
    }
    restore_training(c, net_.named_tensors(), optimizer_, step_);
}

// ---------------------------------------------------------------------------

std::map<std::string, std::string> describe(const YoloConfig& c, const AnchorSet& anchors)
{
    std::vector<double> a;
    for (const auto& wh : anchors.anchors()) {
        a.push_back(wh.w);
        a.push_back(wh.h);
    }
    return {{"model.backbone", to_string(c.backbone.family)},
            {"model.width", fmt(c.backbone.width_multiplier)},
            {"model.num_classes", std::to_string(c.num_classes)},
            {"model.input_size", std::to_string(c.input_size)},
            {"model.neck_convs", std::to_string(c.neck_convs)},
            {"model.anchors", join(a)}};
}

std::map<std::string, std::string> describe(const RecognizerConfig& c)
{
    const auto& p = c.proposals;
    const auto& r = c.rpn_sampling;
    const auto& s = c.roi_sampling;
    return {{"model.backbone", to_string(c.backbone.family)},
            {"model.width", fmt(c.backbone.width_multiplier)},
            {"model.feature_channels", std::to_string(c.feature_channels)},
            {"model.rpn_channels", std::to_string(c.rpn_channels)},
            {"model.fc_hidden", std::to_string(c.fc_hidden)},
            {"model.num_classes", std::to_string(c.num_classes)},
            {"model.pool_size", std::to_string(c.pool_size)},
            {"model.anchor_areas", join(c.anchors.areas)},
            {"model.anchor_ratios", join(c.anchors.ratios)},
            {"model.proposals", join({double(p.pre_nms_top), double(p.post_nms_top), p.nms_iou, p.min_size})},
            {"model.rpn_sampling", join({double(r.batch), r.positive_fraction, r.positive_iou, r.negative_iou})},
            {"model.roi_sampling", join({double(s.batch), s.positive_fraction, s.foreground_iou, s.background_low})}};
}

YoloConfig detector_config_from(const Checkpoint& ck)
{
    if (ck.kind != ModelKind::detector) throw DataError("checkpoint holds a " + to_string(ck.kind) + ", not a detector");
    YoloConfig c;
    try {
        c.backbone.family = parse_backbone_family(ck.meta("model.backbone"));
    } catch (const ArgumentError& e) {
        throw DataError(e.what());
    }
    c.backbone.width_multiplier = parse_double(ck.meta("model.width"), "model.width");
    c.num_classes = parse_int(ck.meta("model.num_classes"), "model.num_classes");
    c.input_size = parse_int(ck.meta("model.input_size"), "model.input_size");
    c.neck_convs = parse_int(ck.meta("model.neck_convs"), "model.neck_convs");
    return c;
}

AnchorSet anchors_from(const Checkpoint& ck)
{
    const auto v = parse_list(ck.meta("model.anchors"), "model.anchors");
    if (v.size() != 18) throw DataError("model.anchors must hold 9 w,h pairs");
    std::array<AnchorWH, 9> a{};
    for (int i = 0; i < 9; ++i) a[static_cast<std::size_t>(i)] = {static_cast<float>(v[2 * i]), static_cast<float>(v[2 * i + 1])};
    return AnchorSet(a);
}

RecognizerConfig recognizer_config_from(const Checkpoint& ck)
{
    if (ck.kind != ModelKind::recognizer) {
        throw DataError("checkpoint holds a " + to_string(ck.kind) + ", not a recognizer");
    }
    RecognizerConfig c;
    try {
        c.backbone.family = parse_backbone_family(ck.meta("model.backbone"));
    } catch (const ArgumentError& e) {
        throw DataError(e.what());
    }
    c.backbone.width_multiplier = parse_double(ck.meta("model.width"), "model.width");
    c.feature_channels = parse_int(ck.meta("model.feature_channels"), "model.feature_channels");
    c.rpn_channels = parse_int(ck.meta("model.rpn_channels"), "model.rpn_channels");
    c.fc_hidden = parse_int(ck.meta("model.fc_hidden"), "model.fc_hidden");
    c.num_classes = parse_int(ck.meta("model.num_classes"), "model.num_classes");
    c.pool_size = parse_int(ck.meta("model.pool_size"), "model.pool_size");
    c.anchors.areas = parse_list(ck.meta("model.anchor_areas"), "model.anchor_areas");
    c.anchors.ratios = parse_list(ck.meta("model.anchor_ratios"), "model.anchor_ratios");
    const auto p = parse_list(ck.meta("model.proposals"), "model.proposals");
    const auto r = parse_list(ck.meta("model.rpn_sampling"), "model.rpn_sampling");
    const auto s = parse_list(ck.meta("model.roi_sampling"), "model.roi_sampling");
    if (p.size() != 4 || r.size() != 4 || s.size() != 4) throw DataError("malformed recognizer metadata");
    c.proposals = {static_cast<int>(p[0]), static_cast<int>(p[1]), static_cast<float>(p[2]), static_cast<float>(p[3])};
    c.rpn_sampling = {static_cast<int>(r[0]), r[1], static_cast<float>(r[2]), static_cast<float>(r[3])};
    c.roi_sampling = {static_cast<int>(s[0]), s[1], static_cast<float>(s[2]), static_cast<float>(s[3])};
    return c;
}

std::unique_ptr<YoloDetector> load_detector(const Checkpoint& ck)
{
    std::unique_ptr<YoloDetector> net;
    try {
        net = std::make_unique<YoloDetector>(detector_config_from(ck), anchors_from(ck), 0);
    } catch (const ArgumentError& e) {
        throw DataError(std::string("invalid detector description: ") + e.what());
    }
    copy_tensors(ck.tensors, net->network().named_tensors(""), "model.");
    return net;
}

std::unique_ptr<Recognizer> load_recognizer(const Checkpoint& ck)
{
    std::unique_ptr<Recognizer> net;
    try {
        net = std::make_unique<Recognizer>(recognizer_config_from(ck), 0);
    } catch (const ArgumentError& e) {
        throw DataError(std::string("invalid recognizer description: ") + e.what());
    }
    copy_tensors(ck.tensors, net->named_tensors(), "model.");
    return net;
}

// ---------------------------------------------------------------------------

std::vector<CharDetection> recognize_window(Recognizer& net, const Image& image, const Window& w, float score_threshold,
                                            float nms_iou)
{
    return recognize_tensor(net, resample_window(image, w.x0, w.y0, w.w, w.h, kPlateWidth, kPlateHeight),
                            score_threshold, nms_iou);
}

std::vector<PlateRecord> run_pipeline(YoloDetector& detector, Recognizer& recognizer, const Image& image,
                                      const PipelineOptions& options)
{
    auto t0 = Clock::now();
    const auto plates = detect_plates(detector, image, options.detect);
    const double detect_ms = ms_since(t0);
    std::vector<PlateRecord> out;
    for (const auto& d : plates) {
        if (d.box.w < 1 || d.box.h < 1) continue;
        auto t1 = Clock::now();
        const auto chars = recognize_window(recognizer, image, plate_window(d.box), options.char_score,
                                            options.char_nms_iou);
        PlateRecord r;
        r.box = d.box;
        r.plate_score = d.score();
        r.reading = assemble(chars);
        r.detect_ms = detect_ms;
        r.recognize_ms = ms_since(t1);
        out.push_back(std::move(r));
    }
    return out;
}

// ---------------------------------------------------------------------------

Image eval_image(const SceneExample& scene, int index, const EvalSettings& s)
{
    if (!s.noise_snr) return *scene.image;
    return add_gaussian_noise(*scene.image, *s.noise_snr, mix_seed(s.noise_seed, static_cast<std::uint64_t>(index)));
}

EvalReport evaluate_detector(YoloDetector& net, std::span<const SceneExample> test, const DetectOptions& detect,
                             const EvalSettings& settings)
{
    if (test.empty()) throw DataError("evaluation split is empty");
    const int n = static_cast<int>(test.size());
    std::vector<EvalImage> images(static_cast<std::size_t>(n));
    std::vector<double> times(static_cast<std::size_t>(n));
    parallel_for(n, worker_threads(settings.threads), [&](int i) {
        const auto img = eval_image(test[static_cast<std::size_t>(i)], i, settings);
        const auto t0 = Clock::now();
        const auto dets = detect_plates(net, img, detect);
        times[static_cast<std::size_t>(i)] = ms_since(t0);
        auto& e = images[static_cast<std::size_t>(i)];
        for (const auto& d : dets) e.detections.push_back({d.box, d.class_id, d.score()});
        for (const auto& p : test[static_cast<std::size_t>(i)].plates) e.ground_truth.push_back({p.box, 0});
    });
    const std::vector<std::string> names{"plate"};
    auto report = evaluate(images, names, settings.metrics, times);
    report.title = settings.noise_snr ? "detector (noisy)" : "detector";
    return report;
}

EvalReport evaluate_recognizer(Recognizer& net, std::span<const SceneExample> test, float score, float nms_iou,
                               const EvalSettings& settings)
{
    if (test.empty()) throw DataError("evaluation split is empty");
    struct Item {
        int scene;
        const PlateTruth* plate;
    };
    std::vector<Item> items;
    for (int i = 0; i < static_cast<int>(test.size()); ++i) {
        for (const auto& p : test[static_cast<std::size_t>(i)].plates) items.push_back({i, &p});
    }
    const int n = static_cast<int>(items.size());
    std::vector<EvalImage> images(static_cast<std::size_t>(n));
    std::vector<double> times(static_cast<std::size_t>(n));
    parallel_for(n, worker_threads(settings.threads), [&](int k) {
        const auto& it = items[static_cast<std::size_t>(k)];
        const auto img = eval_image(test[static_cast<std::size_t>(it.scene)], it.scene, settings);
        const auto win = plate_window(it.plate->box);
        const auto t0 = Clock::now();
        const auto dets = recognize_window(net, img, win, score, nms_iou);
        times[static_cast<std::size_t>(k)] = ms_since(t0);
        auto& e = images[static_cast<std::size_t>(k)];
        for (const auto& d : dets) e.detections.push_back({d.box, d.class_id, d.score});
        for (const auto& c : chars_in_window(*it.plate, win.x0, win.y0, win.w, win.h, kPlateWidth, kPlateHeight)) {
            e.ground_truth.push_back({c.box, c.class_id});
        }
    });
    std::vector<std::string> names;
    const CharClassTable table;
    for (const auto& c : table.classes()) names.emplace_back(1, c.glyph);
    auto report = evaluate(images, names, settings.metrics, times);
    report.title = settings.noise_snr ? "recognizer (noisy)" : "recognizer";
    return report;
}

PlateTextResult evaluate_plate_text(YoloDetector& detector, Recognizer& recognizer, std::span<const SceneExample> test,
                                    const PipelineOptions& options, const EvalSettings& settings)
{
    if (test.empty()) throw DataError("evaluation split is empty");
    const int n = static_cast<int>(test.size());
    std::vector<PlateTextResult> per(static_cast<std::size_t>(n));
    parallel_for(n, worker_threads(settings.threads), [&](int i) {
        const auto& scene = test[static_cast<std::size_t>(i)];
        const auto img = eval_image(scene, i, settings);
        const auto records = run_pipeline(detector, recognizer, img, options);
        auto& r = per[static_cast<std::size_t>(i)];
        for (const auto& p : scene.plates) {
            ++r.plates;
            const PlateRecord* best = nullptr;
            for (const auto& rec : records) {
                if (iou(rec.box, p.box) < settings.metrics.iou_threshold) continue;
                if (!best || rec.plate_score > best->plate_score) best = &rec;
            }
            if (!best) continue;
            ++r.detected;
            std::string plain;
            for (const auto& g : best->reading.glyphs) plain.push_back(g.cls.glyph);
            if (best->reading.layout == PlateLayout::standard_iranian) ++r.standard_layout;
            if (plain == p.text) ++r.fully_correct;
        }
    });
    PlateTextResult total;
    for (const auto& r : per) {
        total.plates += r.plates;
        total.detected += r.detected;
        total.fully_correct += r.fully_correct;
        total.standard_layout += r.standard_layout;
    }
    return total;
}

}  // namespace lpr
