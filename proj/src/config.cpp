#include "lpr/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>

#include "lpr/error.hpp"

namespace lpr {

namespace {

template <typename T>
T parse_value(std::string_view key, std::string_view text)
{
    T v{};
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end) {
        throw ConfigError("'" + std::string(key) + "': '" + std::string(text) + "' is not a valid number");
    }
    if constexpr (std::is_floating_point_v<T>) {
        if (std::isnan(v)) throw ConfigError("'" + std::string(key) + "' is NaN");
    }
    return v;
}

template <typename T>
void check_range(std::string_view key, T v, T lo, T hi)
{
    if (!(v >= lo && v <= hi)) {
        throw ConfigError("'" + std::string(key) + "' = " + std::to_string(v) + " outside [" + std::to_string(lo) +
                          ", " + std::to_string(hi) + "]");
    }
}

std::string format_double(double v)
{
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

struct Field {
    const char* key;
    std::function<void(RunConfig&, std::string_view)> set;
    std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field num(const char* key, T RunConfig::*member, T lo, T hi)
{
    return {key,
            [=](RunConfig& c, std::string_view v) {
                const T x = parse_value<T>(key, v);
                check_range<T>(key, x, lo, hi);
                c.*member = x;
            },
            [=](const RunConfig& c) {
                if constexpr (std::is_floating_point_v<T>) {
                    return format_double(c.*member);
                } else {
                    return std::to_string(c.*member);
                }
            }};
}

Field text(const char* key, std::string RunConfig::*member, std::function<void(std::string_view)> check = {})
{
    return {key,
            [=](RunConfig& c, std::string_view v) {
                if (check) check(v);
                c.*member = std::string(v);
            },
            [=](const RunConfig& c) { return c.*member; }};
}

const std::vector<Field>& fields()
{
    constexpr double inf = std::numeric_limits<double>::infinity();
    static const std::vector<Field> f = {
        num<std::uint64_t>("seed", &RunConfig::seed, 0, std::numeric_limits<std::uint64_t>::max()),
        text("data_dir", &RunConfig::data_dir,
             [](std::string_view v) {
                 if (v.empty()) throw ConfigError("'data_dir' is empty");
             }),
        text("out_dir", &RunConfig::out_dir,
             [](std::string_view v) {
                 if (v.empty()) throw ConfigError("'out_dir' is empty");
             }),
        num("threads", &RunConfig::threads, 0, 256),
        num("synth.count", &RunConfig::synth_count, 0, 1000000),
        num("synth.train_fraction", &RunConfig::train_fraction, 0.0, 1.0),
        num("synth.min_plates", &RunConfig::synth_min_plates, 1, 3),
        num("synth.max_plates", &RunConfig::synth_max_plates, 1, 3),
        num("det.width", &RunConfig::det_width, 1e-3, 1.0),
        num("det.neck", &RunConfig::det_neck, 1, 5),
        num("det.input", &RunConfig::det_input, 64, 1024),
        num("det.steps", &RunConfig::det_steps, 0, 10000000),
        num("det.batch", &RunConfig::det_batch, 1, 256),
        num("det.lr", &RunConfig::det_lr, 1e-7, 1.0),
        num("det.warmup", &RunConfig::det_warmup, 0, 1000000),
        num("det.ignore_iou", &RunConfig::det_ignore_iou, 0.0, 1.0),
        num("det.conf", &RunConfig::det_conf, 0.0, 1.0),
        num("det.nms_iou", &RunConfig::det_nms_iou, 0.0, 1.0),
        text("det.anchors", &RunConfig::det_anchors),
        num("rec.width", &RunConfig::rec_width, 1e-3, 1.0),
        num("rec.feature", &RunConfig::rec_feature, 1, 4096),
        num("rec.rpn", &RunConfig::rec_rpn, 1, 4096),
        num("rec.hidden", &RunConfig::rec_hidden, 1, 8192),
        num("rec.steps", &RunConfig::rec_steps, 0, 10000000),
        num("rec.batch", &RunConfig::rec_batch, 1, 256),
        num("rec.lr", &RunConfig::rec_lr, 1e-7, 1.0),
        num("rec.warmup", &RunConfig::rec_warmup, 0, 1000000),
        num("rec.score", &RunConfig::rec_score, 0.0, 1.0),
        num("rec.nms_iou", &RunConfig::rec_nms_iou, 0.0, 1.0),
        num("rec.jitter", &RunConfig::rec_jitter, 0.0, 0.5),
        num("rec.bg_low", &RunConfig::rec_bg_low, 0.0, 0.5),
        num("eval.iou", &RunConfig::eval_iou, 0.0, 1.0),
        num("eval.noise_snr", &RunConfig::eval_noise_snr, -inf, inf),
        text("eval.ap", &RunConfig::eval_ap,
             [](std::string_view v) {
                 if (v != "all_points" && v != "voc11") throw ConfigError("'eval.ap' must be all_points or voc11");
             }),
        num("log_every", &RunConfig::log_every, 1, 1000000),
        num("checkpoint_every", &RunConfig::checkpoint_every, 0, 10000000),
    };
    return f;
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value)
{
    key = trim(key);
    value = trim(value);
    for (const auto& f : fields()) {
        if (key == f.key) {
            RunConfig next = *this;
            f.set(next, value);
            if (next.det_input % 32 != 0) throw ConfigError("'det.input' must be a multiple of 32");
            if (next.det_neck != 1 && next.det_neck != 3 && next.det_neck != 5) {
                throw ConfigError("'det.neck' must be 1, 3 or 5");
            }
            *this = std::move(next);
            return;
        }
    }
    throw ConfigError("unknown key '" + std::string(key) + "'");
}

void RunConfig::apply(std::string_view text)
{
    int line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        ++line_no;
        auto line = text.substr(start, end - start);
        start = end + 1;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        try {
            if (eq == std::string_view::npos) throw ConfigError("expected key=value");
            set(line.substr(0, eq), line.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (synth_min_plates > synth_max_plates) throw ConfigError("synth.min_plates exceeds synth.max_plates");
}

std::string RunConfig::to_text() const
{
    std::string out;
    for (const auto& f : fields()) out += std::string(f.key) + "=" + f.get(*this) + "\n";
    return out;
}

std::vector<std::string> RunConfig::keys()
{
    std::vector<std::string> out;
    for (const auto& f : fields()) out.emplace_back(f.key);
    return out;
}

}  // namespace lpr
