#include "lpr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "lpr/error.hpp"

namespace lpr {

namespace {

std::vector<int> score_order(std::span<const ScoredBox> dets)
{
    std::vector<int> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return dets[a].score > dets[b].score; });
    return order;
}

std::string percent(const std::optional<double>& v)
{
    if (!v) return "n/a";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f%%", *v * 100.0);
    return buf;
}

std::string cell(const std::string& s, int width)
{
    std::string out = s;
    if (static_cast<int>(out.size()) < width) out.insert(0, static_cast<std::size_t>(width) - out.size(), ' ');
    return out;
}

nlohmann::json optional_json(const std::optional<double>& v)
{
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<double> optional_from(const nlohmann::json& j, const char* key)
{
    const auto& v = j.at(key);
    if (v.is_null()) return std::nullopt;
    return v.get<double>();
}

}  // namespace

MatchResult& MatchResult::operator+=(const MatchResult& other)
{
    tp += other.tp;
    fp += other.fp;
    fn += other.fn;
    pairs.insert(pairs.end(), other.pairs.begin(), other.pairs.end());
    return *this;
}

MatchResult match_detections(std::span<const ScoredBox> dets, std::span<const GroundTruth> gts, float iou_threshold)
{
    MatchResult r;
    std::vector<char> taken(gts.size(), 0);
    for (int d : score_order(dets)) {
        int best = -1;
        float best_iou = -1.0f;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (taken[g] || gts[g].class_id != dets[d].class_id) continue;
            const float v = iou(dets[d].box, gts[g].box);
            if (v >= iou_threshold && v > best_iou) {
                best = static_cast<int>(g);
                best_iou = v;
            }
        }
        if (best >= 0) {
            taken[static_cast<std::size_t>(best)] = 1;
            r.pairs.push_back({d, best, best_iou});
            ++r.tp;
        } else {
            ++r.fp;
        }
    }
    r.fn = static_cast<std::int64_t>(gts.size()) - r.tp;
    return r;
}

std::optional<double> precision(std::int64_t tp, std::int64_t fp)
{
    if (tp < 0 || fp < 0) throw ArgumentError("precision: negative count");
    if (tp + fp == 0) return std::nullopt;
    return static_cast<double>(tp) / static_cast<double>(tp + fp);
}

std::optional<double> recall(std::int64_t tp, std::int64_t fn)
{
    if (tp < 0 || fn < 0) throw ArgumentError("recall: negative count");
    if (tp + fn == 0) return std::nullopt;
    return static_cast<double>(tp) / static_cast<double>(tp + fn);
}

std::optional<double> accuracy(std::int64_t tp, std::int64_t tn, std::int64_t fp, std::int64_t fn)
{
    if (tp < 0 || tn < 0 || fp < 0 || fn < 0) throw ArgumentError("accuracy: negative count");
    const std::int64_t all = tp + tn + fp + fn;
    if (all == 0) return std::nullopt;
    return static_cast<double>(tp + tn) / static_cast<double>(all);
}

std::optional<double> average_precision(std::span<const bool> correct, std::int64_t num_gt, ApInterpolation mode)
{
    if (num_gt < 0) throw ArgumentError("average_precision: negative ground-truth count");
    if (num_gt == 0) return std::nullopt;
    const std::size_t n = correct.size();
    std::vector<double> prec(n), rec(n);
    std::int64_t tp = 0;
    for (std::size_t k = 0; k < n; ++k) {
        if (correct[k]) ++tp;
        prec[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
        rec[k] = static_cast<double>(tp) / static_cast<double>(num_gt);
    }
    // Precision envelope: best precision at this rank or any later one.
    std::vector<double> env(prec);
    for (std::size_t k = n; k-- > 1;) env[k - 1] = std::max(env[k - 1], env[k]);

    double ap = 0;
    if (mode == ApInterpolation::all_points) {
        for (std::size_t k = 0; k < n; ++k) {
            if (correct[k]) ap += env[k] / static_cast<double>(num_gt);
        }
        return ap;
    }
    for (int t = 0; t <= 10; ++t) {
        const double level = t / 10.0;
        double best = 0;
        for (std::size_t k = 0; k < n; ++k) {
            if (rec[k] >= level - 1e-12) best = std::max(best, prec[k]);
        }
        ap += best / 11.0;
    }
    return ap;
}

std::optional<double> average_precision(std::span<const EvalImage> images, int class_id, float iou_threshold,
                                        ApInterpolation mode)
{
    struct Ranked {
        float score;
        bool correct;
    };
    std::vector<Ranked> all;
    std::int64_t num_gt = 0;
    for (const auto& img : images) {
        std::vector<ScoredBox> dets;
        std::vector<GroundTruth> gts;
        for (const auto& d : img.detections) {
            if (d.class_id == class_id) dets.push_back(d);
        }
        for (const auto& g : img.ground_truth) {
            if (g.class_id == class_id) gts.push_back(g);
        }
        num_gt += static_cast<std::int64_t>(gts.size());
        const auto m = match_detections(dets, gts, iou_threshold);
        std::vector<char> hit(dets.size(), 0);
        for (const auto& p : m.pairs) hit[static_cast<std::size_t>(p.detection)] = 1;
        for (int d : score_order(dets)) all.push_back({dets[d].score, hit[static_cast<std::size_t>(d)] != 0});
    }
    std::stable_sort(all.begin(), all.end(), [](const Ranked& a, const Ranked& b) { return a.score > b.score; });
    // std::vector<bool> has no contiguous storage to span over.
    const auto flags = std::make_unique<bool[]>(all.size() + 1);
    for (std::size_t i = 0; i < all.size(); ++i) flags[i] = all[i].correct;
    return average_precision(std::span<const bool>(flags.get(), all.size()), num_gt, mode);
}

MeanAp mean_average_precision(std::span<const ClassAp> per_class)
{
    MeanAp out;
    out.per_class.assign(per_class.begin(), per_class.end());
    double sum = 0;
    int count = 0;
    for (const auto& c : per_class) {
        if (c.ap) {
            sum += *c.ap;
            ++count;
        } else {
            out.classes_without_gt.push_back(c.class_id);
        }
    }
    if (count > 0) out.map = sum / count;
    return out;
}

std::vector<double> ema_smooth(std::span<const double> series, double factor)
{
    if (!(factor >= 0.0 && factor < 1.0)) throw ArgumentError("ema_smooth: factor must lie in [0, 1)");
    std::vector<double> out;
    out.reserve(series.size());
    for (std::size_t i = 0; i < series.size(); ++i) {
        out.push_back(i == 0 ? series[0] : factor * out.back() + (1.0 - factor) * series[i]);
    }
    return out;
}

TimingStats timing_stats(std::span<const double> samples_ms)
{
    if (samples_ms.empty()) throw ArgumentError("timing_stats: no samples");
    std::vector<double> sorted(samples_ms.begin(), samples_ms.end());
    std::sort(sorted.begin(), sorted.end());
    const auto rank = [&](double p) {
        auto k = static_cast<std::size_t>(std::ceil(p * static_cast<double>(sorted.size())));
        return sorted[std::clamp<std::size_t>(k, 1, sorted.size()) - 1];
    };
    TimingStats t;
    t.mean_ms = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(sorted.size());
    t.p50_ms = rank(0.5);
    t.p95_ms = rank(0.95);
    return t;
}

void finalize_totals(EvalReport& report)
{
    const auto& t = report.total;
    report.precision = precision(t.tp, t.fp);
    report.recall = recall(t.tp, t.fn);
    report.accuracy = accuracy(t.tp, 0, t.fp, t.fn);
}

EvalReport evaluate(std::span<const EvalImage> images, std::span<const std::string> class_names,
                    const EvalOptions& options, std::span<const double> latencies_ms)
{
    EvalReport report;
    std::vector<ClassAp> aps;
    double iou_sum = 0;
    for (int c = 0; c < static_cast<int>(class_names.size()); ++c) {
        ClassRow row{c, class_names[static_cast<std::size_t>(c)], {}, std::nullopt};
        for (const auto& img : images) {
            std::vector<ScoredBox> dets;
            std::vector<GroundTruth> gts;
            for (const auto& d : img.detections) {
                if (d.class_id == c) dets.push_back(d);
            }
            for (const auto& g : img.ground_truth) {
                if (g.class_id == c) gts.push_back(g);
            }
            auto m = match_detections(dets, gts, options.iou_threshold);
            for (const auto& p : m.pairs) iou_sum += p.iou;
            m.pairs.clear();
            row.counts += m;
        }
        row.ap = average_precision(images, c, options.iou_threshold, options.interpolation);
        aps.push_back({c, row.ap});
        report.total += row.counts;
        report.classes.push_back(std::move(row));
    }
    if (report.total.tp > 0) report.average_iou = iou_sum / static_cast<double>(report.total.tp);
    report.map = mean_average_precision(aps).map;
    if (!latencies_ms.empty()) report.timing = timing_stats(latencies_ms);
    finalize_totals(report);
    return report;
}

std::string format_table(const EvalReport& report)
{
    std::ostringstream os;
    if (!report.title.empty()) os << report.title << '\n';
    os << cell("class", 10) << cell("TP", 8) << cell("FP", 8) << cell("FN", 8) << cell("recall", 10)
       << cell("precision", 11) << cell("accuracy", 10) << cell("AP", 9) << '\n';
    const auto row = [&](const std::string& name, const MatchResult& m, const std::optional<double>& ap) {
        os << cell(name, 10) << cell(std::to_string(m.tp), 8) << cell(std::to_string(m.fp), 8)
           << cell(std::to_string(m.fn), 8) << cell(percent(recall(m.tp, m.fn)), 10)
           << cell(percent(precision(m.tp, m.fp)), 11) << cell(percent(accuracy(m.tp, 0, m.fp, m.fn)), 10)
           << cell(percent(ap), 9) << '\n';
    };
    for (const auto& c : report.classes) row(c.name, c.counts, c.ap);
    row("total", report.total, report.map);
    os << "average IoU " << percent(report.average_iou) << ", mAP " << percent(report.map);
    if (report.timing) {
        char buf[96];
        std::snprintf(buf, sizeof buf, ", time mean %.2f ms (p50 %.2f, p95 %.2f)", report.timing->mean_ms,
                      report.timing->p50_ms, report.timing->p95_ms);
        os << buf;
    }
    os << '\n';
    return os.str();
}

std::string format_comparison(std::span<const EvalReport> reports)
{
    std::ostringstream os;
    os << cell("run", 16) << cell("recall", 10) << cell("precision", 11) << cell("accuracy", 10) << cell("mAP", 9)
       << '\n';
    for (const auto& r : reports) {
        os << cell(r.title, 16) << cell(percent(r.recall), 10) << cell(percent(r.precision), 11)
           << cell(percent(r.accuracy), 10) << cell(percent(r.map), 9) << '\n';
    }
    return os.str();
}

std::string to_jsonl(const EvalReport& report)
{
    std::string out;
    for (const auto& c : report.classes) {
        nlohmann::json j{{"record", "class"}, {"class_id", c.class_id}, {"name", c.name},
                         {"tp", c.counts.tp},  {"fp", c.counts.fp},       {"fn", c.counts.fn},
                         {"ap", optional_json(c.ap)}};
        out += j.dump() + '\n';
    }
    nlohmann::json s{{"record", "summary"},
                     {"title", report.title},
                     {"tp", report.total.tp},
                     {"fp", report.total.fp},
                     {"fn", report.total.fn},
                     {"precision", optional_json(report.precision)},
                     {"recall", optional_json(report.recall)},
                     {"accuracy", optional_json(report.accuracy)},
                     {"average_iou", optional_json(report.average_iou)},
                     {"map", optional_json(report.map)}};
    if (report.timing) {
        s["time_mean_ms"] = report.timing->mean_ms;
        s["time_p50_ms"] = report.timing->p50_ms;
        s["time_p95_ms"] = report.timing->p95_ms;
    }
    out += s.dump() + '\n';
    return out;
}

EvalReport from_jsonl(const std::string& text)
{
    EvalReport r;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    bool summary = false;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            const auto kind = j.at("record").get<std::string>();
            if (kind == "class") {
                ClassRow c;
                c.class_id = j.at("class_id").get<int>();
                c.name = j.at("name").get<std::string>();
                c.counts.tp = j.at("tp").get<std::int64_t>();
                c.counts.fp = j.at("fp").get<std::int64_t>();
                c.counts.fn = j.at("fn").get<std::int64_t>();
                c.ap = optional_from(j, "ap");
                r.classes.push_back(std::move(c));
            } else if (kind == "summary") {
                r.title = j.at("title").get<std::string>();
                r.total.tp = j.at("tp").get<std::int64_t>();
                r.total.fp = j.at("fp").get<std::int64_t>();
                r.total.fn = j.at("fn").get<std::int64_t>();
                r.precision = optional_from(j, "precision");
                r.recall = optional_from(j, "recall");
                r.accuracy = optional_from(j, "accuracy");
                r.average_iou = optional_from(j, "average_iou");
                r.map = optional_from(j, "map");
                if (j.contains("time_mean_ms")) {
                    r.timing = TimingStats{j.at("time_mean_ms").get<double>(), j.at("time_p50_ms").get<double>(),
                                           j.at("time_p95_ms").get<double>()};
                }
                summary = true;
            } else {
                throw DataError("unknown record kind '" + kind + "'");
            }
        } catch (const nlohmann::json::exception& e) {
            throw DataError("report line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (!summary) throw DataError("report has no summary record");
    return r;
}

}  // namespace lpr
