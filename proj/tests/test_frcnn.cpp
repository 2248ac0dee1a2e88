#include <cmath>
#include <random>

#include "doctest.h"
#include "loss_gradchecks.hpp"
#include "lpr/error.hpp"
#include "lpr/frcnn.hpp"
#include "oracle_trials.hpp"
#include "oracles.hpp"

using namespace lpr;

namespace {

RecognizerConfig small_config()
{
    RecognizerConfig cfg;
    cfg.backbone.width_multiplier = 0.125;
    cfg.feature_channels = 16;
    cfg.rpn_channels = 16;
    cfg.fc_hidden = 32;
    return cfg;
}

}  // namespace

TEST_CASE("character class table")
{
    CharClassTable table;
    CHECK(table.size() == 25);
    int digits = 0, letters = 0;
    for (const auto& c : table.classes()) (c.kind == GlyphKind::digit ? digits : letters)++;
    CHECK(digits == 10);
    CHECK(letters == 15);
    CHECK(table[3].glyph == '3');
    CHECK(table.id_of('B') == 10);
    CHECK(!table.id_of('?'));
    CHECK_THROWS_AS(CharClassTable("ABC"), ArgumentError);
    CHECK_THROWS_AS(CharClassTable("BBDGHJLMNPSTVYZ"), ArgumentError);
    CHECK_THROWS_AS(CharClassTable("1CDGHJLMNPSTVYZ"), ArgumentError);
}

TEST_CASE("plate resize")
{
    Image same(640, 128);
    for (std::size_t i = 0; i < same.pixels.size(); ++i) same.pixels[i] = static_cast<std::uint8_t>(i * 31 % 251);
    auto t = resize_plate(same);
    CHECK(t.shape() == Shape{1, 3, 128, 640});
    const std::size_t plane = 128 * 640;
    bool identical = true;
    for (int y = 0; y < 128; ++y) {
        for (int x = 0; x < 640; ++x) {
            for (int c = 0; c < 3; ++c) {
                identical = identical && t.data()[c * plane + y * 640 + x] == same.at(x, y)[c] / 255.0f;
            }
        }
    }
    CHECK(identical);
    CHECK(resize_plate(Image(320, 64)).shape() == Shape{1, 3, 128, 640});
    auto flat = resize_plate(Image(97, 23, 120));
    for (float v : flat.data()) CHECK(v == doctest::Approx(120 / 255.0).epsilon(1e-6));
    CHECK_THROWS_AS(resize_plate(Image()), ArgumentError);
}

TEST_CASE("rpn anchor grid")
{
    auto grid = build_rpn_anchors();
    CHECK(grid.size() == 3840);
    CHECK(grid.size() == 8 * 40 * 12);
    const RpnAnchorConfig cfg;
    for (int i = 0; i < grid.size(); ++i) {
        const auto& a = grid.anchors[static_cast<std::size_t>(i)];
        const int cell = i / 12, k = i % 12;
        CHECK(a.cx == (cell % 40 + 0.5f) * 16);
        CHECK(a.cy == (cell / 40 + 0.5f) * 16);
        const double area = cfg.areas[static_cast<std::size_t>(k / 3)];
        CHECK(std::abs(double(a.w) * a.h - area) / area < 1e-6);
    }
    // area 256, ratio 1
    CHECK(grid.anchors[1].w == 16.0f);
    CHECK(grid.anchors[1].h == 16.0f);
    RpnAnchorConfig bad;
    bad.areas = {0};
    CHECK_THROWS_AS(build_rpn_anchors(8, 40, bad), ArgumentError);
    bad = {};
    bad.ratios = {-1};
    CHECK_THROWS_AS(build_rpn_anchors(8, 40, bad), ArgumentError);
}

TEST_CASE("full-width recognizer geometry on a 128x640 plate")
{
    RecognizerConfig cfg;
    Recognizer net(cfg, 1);
    NoGradGuard guard;
    std::mt19937_64 rng(2);
    auto feats = net.features(TensorF::randn({1, 3, 128, 640}, rng), false);
    CHECK(feats.shape() == Shape{1, 512, 8, 40});
    CHECK(net.anchors().size() == 3840);
    auto rpn = net.rpn_forward(feats);
    CHECK(rpn.logits.shape() == Shape{1, 24, 8, 40});
    CHECK(rpn.deltas.shape() == Shape{1, 48, 8, 40});
    std::vector<BBox> rois{{100, 60, 40, 80}, {320, 64, 640, 128}, {600, 20, 30, 30}};
    auto pooled = roi_pool_boxes(feats, rois, 7, 16);
    CHECK(pooled.shape() == Shape{3, 512, 7, 7});
    auto head = net.classify_rois(pooled);
    CHECK(head.scores.shape() == Shape{3, 26});
    CHECK(head.deltas.shape() == Shape{3, 25, 4});
}

TEST_CASE("rpn outputs are deterministic across a batch and valid probabilities")
{
    Recognizer net(small_config(), 3);
    NoGradGuard guard;
    std::mt19937_64 rng(4);
    auto f = TensorF::randn({1, 16, 8, 40}, rng);
    std::vector<float> two(f.data().begin(), f.data().end());
    two.insert(two.end(), f.data().begin(), f.data().end());
    auto rpn = net.rpn_forward(TensorF::from_data({2, 16, 8, 40}, two));
    const auto half = rpn.logits.data().size() / 2;
    for (std::size_t i = 0; i < half; ++i) CHECK(rpn.logits.data()[i] == rpn.logits.data()[half + i]);
    auto p = rpn_objectness(rpn.logits, 1);
    CHECK(p.size() == 3840);
    for (float v : p) {
        CHECK(v > 0.0f);
        CHECK(v < 1.0f);
    }
    // pair sums: recompute background probability from the logits
    const std::size_t plane = 320;
    for (int k = 0; k < 12; ++k) {
        const double bg = rpn.logits.data()[(2 * k) * plane], ob = rpn.logits.data()[(2 * k + 1) * plane];
        const double pb = std::exp(bg) / (std::exp(bg) + std::exp(ob));
        CHECK(pb + p[static_cast<std::size_t>(k)] == doctest::Approx(1.0).epsilon(1e-6));
    }
    CHECK_THROWS_AS(net.rpn_forward(TensorF::zeros({1, 8, 8, 40})), ShapeError);
}

TEST_CASE("delta coding")
{
    BBox anchor{100, 64, 16, 16};
    CHECK(apply_deltas(anchor, {0, 0, 0, 0}) == anchor);
    auto moved = apply_deltas(anchor, {0.5f, 0, 0, static_cast<float>(std::log(2.0))});
    CHECK(moved.cx == doctest::Approx(108));
    CHECK(moved.cy == doctest::Approx(64));
    CHECK(moved.h == doctest::Approx(32));
    CHECK(moved.w == doctest::Approx(16));

    std::mt19937_64 rng(5);
    std::uniform_real_distribution<float> u(1, 300);
    std::uniform_real_distribution<float> side(4, 100);
    for (int trial = 0; trial < 1000; ++trial) {
        BBox a{u(rng), u(rng), side(rng), side(rng)};
        BBox g{u(rng), u(rng), side(rng), side(rng)};
        for (const auto& w : {kRpnDeltaWeights, kHeadDeltaWeights}) {
            auto back = apply_deltas(a, encode_deltas(a, g, w), w);
            CHECK(back.cx == doctest::Approx(g.cx).epsilon(1e-5));
            CHECK(back.cy == doctest::Approx(g.cy).epsilon(1e-5));
            CHECK(back.w == doctest::Approx(g.w).epsilon(1e-5));
            CHECK(back.h == doctest::Approx(g.h).epsilon(1e-5));
        }
    }
}

TEST_CASE("proposal selection examples")
{
    auto grid = build_rpn_anchors();
    std::vector<Deltas> zero(3840, Deltas{0, 0, 0, 0});
    ProposalConfig pc;
    auto props = propose(std::vector<float>(3840, 0.5f), zero, grid, pc, 640, 128);
    CHECK(props.size() <= 300);
    CHECK(!props.empty());
    for (const auto& p : props) {
        CHECK(p.box == grid.anchors[static_cast<std::size_t>(p.anchor_index)].clipped(640, 128));
    }
    std::vector<float> scores(3840, 0.01f);
    scores[1234] = 0.99f;
    props = propose(scores, zero, grid, pc, 640, 128);
    CHECK(props[0].anchor_index == 1234);
    CHECK(props[0].box == grid.anchors[1234].clipped(640, 128));
}

TEST_CASE("proposals stay inside the image and under budget")
{
    auto grid = build_rpn_anchors();
    std::mt19937_64 rng(6);
    std::normal_distribution<float> n(0, 1);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<float> s(3840);
        std::vector<Deltas> d(3840);
        for (int i = 0; i < 3840; ++i) {
            s[static_cast<std::size_t>(i)] = std::uniform_real_distribution<float>(0, 1)(rng);
            d[static_cast<std::size_t>(i)] = {n(rng), n(rng), n(rng), n(rng)};
        }
        ProposalConfig pc;
        pc.post_nms_top = 50 + trial * 20;
        auto props = propose(s, d, grid, pc, 640, 128);
        CHECK(static_cast<int>(props.size()) <= pc.post_nms_top);
        for (const auto& p : props) {
            CHECK(p.box.x1() >= 0.0f);
            CHECK(p.box.y1() >= 0.0f);
            CHECK(p.box.x2() <= 640.0f);
            CHECK(p.box.y2() <= 128.0f);
        }
    }
}

TEST_CASE("proposal selection matches the brute-force oracle")
{
    const auto r = trials::proposals(1000, 7);
    CHECK(r.instances == 1000);
    CHECK_MESSAGE(r.mismatches == 0, r.first_failure);
}

TEST_CASE("roi pooling")
{
    std::mt19937_64 rng(8);
    auto feat = TensorF::randn({1, 4, 8, 40}, rng);
    auto whole = roi_pool_boxes(feat, std::vector<BBox>{{320, 64, 640, 128}}, 1, 16);
    CHECK(whole.shape() == Shape{1, 4, 1, 1});
    for (int c = 0; c < 4; ++c) {
        const float* plane = &feat.data()[static_cast<std::size_t>(c) * 320];
        CHECK(whole.data()[static_cast<std::size_t>(c)] == *std::max_element(plane, plane + 320));
    }
    auto constant = roi_pool_boxes(TensorF::full({1, 2, 8, 40}, 0.25f),
                                   std::vector<BBox>{{100, 50, 60, 40}, {10, 10, 4, 4}}, 7, 16);
    CHECK(constant.shape() == Shape{2, 2, 7, 7});
    for (float v : constant.data()) CHECK(v == 0.25f);
    CHECK_THROWS_AS(roi_pool_boxes(feat, std::vector<BBox>{{1000, 500, 10, 10}}, 7, 16), ArgumentError);

    // A thin region at the bottom-right border rounds onto the last cell (row 7, column 39).
    auto edge = roi_pool_boxes(feat, std::vector<BBox>{BBox::from_corners(634.5f, 111.7f, 640, 122)}, 1, 16);
    for (int c = 0; c < 4; ++c) {
        const float* plane = &feat.data()[static_cast<std::size_t>(c) * 320];
        CHECK(edge.data()[static_cast<std::size_t>(c)] == plane[7 * 40 + 39]);
    }
}

TEST_CASE("roi pooling ignores jitter below the quantisation step")
{
    std::mt19937_64 rng(9);
    auto feat = TensorF::randn({1, 3, 8, 40}, rng);
    std::uniform_int_distribution<int> cell(0, 30);
    std::uniform_real_distribution<float> jitter(-3.0f, 3.0f);
    for (int trial = 0; trial < 200; ++trial) {
        const float x1 = 16.0f * cell(rng), y1 = 16.0f * (cell(rng) % 5);
        const float x2 = x1 + 16.0f * (1 + cell(rng) % 8), y2 = std::min(128.0f, y1 + 16.0f * (1 + cell(rng) % 3));
        auto base = roi_pool_boxes(feat, std::vector<BBox>{BBox::from_corners(x1, y1, x2, y2)}, 7, 16);
        auto moved = roi_pool_boxes(
            feat,
            std::vector<BBox>{BBox::from_corners(x1 + jitter(rng), y1 + jitter(rng), x2 + jitter(rng), y2 + jitter(rng))},
            7, 16);
        CHECK(std::equal(base.data().begin(), base.data().end(), moved.data().begin()));
    }
}

TEST_CASE("roi head output shapes and distributions")
{
    Recognizer net(small_config(), 10);
    NoGradGuard guard;
    std::mt19937_64 rng(11);
    auto one = TensorF::randn({1, 16, 7, 7}, rng);
    std::vector<float> data;
    for (int i = 0; i < 10; ++i) data.insert(data.end(), one.data().begin(), one.data().end());
    auto head = net.classify_rois(TensorF::from_data({10, 16, 7, 7}, data));
    CHECK(head.scores.shape() == Shape{10, 26});
    CHECK(head.deltas.shape() == Shape{10, 25, 4});
    for (int r = 0; r < 10; ++r) {
        double s = 0;
        for (int c = 0; c < 26; ++c) {
            const float v = head.scores.data()[static_cast<std::size_t>(r * 26 + c)];
            CHECK(v >= 0.0f);
            s += v;
            CHECK(v == head.scores.data()[static_cast<std::size_t>(c)]);
        }
        CHECK(std::abs(s - 1.0) <= 1e-6);
    }
}

TEST_CASE("rpn target sampling")
{
    auto grid = build_rpn_anchors();
    std::mt19937_64 rng(12);
    RpnSamplingConfig sc;
    auto empty = sample_rpn_targets(grid, {}, sc, rng);
    CHECK(empty.anchors.size() == 256);
    for (auto l : empty.labels) CHECK(l == 0);

    std::vector<BBox> gt{{100, 64, 45, 90}, {200, 64, 45, 90}};
    auto t = sample_rpn_targets(grid, gt, sc, rng);
    CHECK(t.anchors.size() == 256);
    int pos = 0;
    for (std::size_t i = 0; i < t.labels.size(); ++i) {
        if (t.labels[i] == 1) {
            ++pos;
            const auto& a = grid.anchors[static_cast<std::size_t>(t.anchors[i])];
            CHECK(std::max(iou(a, gt[0]), iou(a, gt[1])) > 0.3f);
        }
    }
    CHECK(pos >= 2);
    CHECK(pos <= 128);
}

TEST_CASE("roi target sampling adds ground truth and caps the foreground share")
{
    std::mt19937_64 rng(13);
    std::vector<BBox> gt{{100, 64, 45, 90}};
    std::vector<Proposal> props;
    for (int i = 0; i < 200; ++i) props.push_back({{100.0f + (i % 20), 64, 45, 90}, 0.9f, i});
    for (int i = 0; i < 200; ++i) props.push_back({{130.0f + (i % 10), 64, 45, 90}, 0.5f, 200 + i});
    auto t = sample_roi_targets(props, gt, std::vector<int>{7}, {}, rng);
    int fg = 0;
    for (int l : t.labels) fg += l != 0;
    CHECK(fg == 32);
    CHECK(t.rois.size() == 128);
    for (std::size_t i = 0; i < t.labels.size(); ++i) {
        if (t.labels[i] != 0) CHECK(t.labels[i] == 8);
    }
    auto only_gt = sample_roi_targets({}, gt, std::vector<int>{3}, {}, rng);
    REQUIRE(only_gt.rois.size() == 1);
    CHECK(only_gt.labels[0] == 4);
    CHECK(only_gt.regression[0][0] == 0.0f);
}

TEST_CASE("rpn loss limit cases")
{
    auto grid = build_rpn_anchors();
    std::mt19937_64 rng(14);
    auto neg = sample_rpn_targets(grid, {}, {}, rng);
    auto logits = TensorD::zeros({1, 24, 8, 40});
    for (int k = 0; k < 12; ++k) {
        for (int p = 0; p < 320; ++p) logits.data()[static_cast<std::size_t>(2 * k * 320 + p)] = 40;
    }
    auto l = rpn_loss<double>(logits, TensorD::zeros({1, 48, 8, 40}), neg);
    CHECK(l.localization.item() == 0.0);
    CHECK(l.classification.item() < 1e-12);

    std::vector<BBox> gt{{100, 64, 45, 90}};
    auto t = sample_rpn_targets(grid, gt, {}, rng);
    auto lg = TensorD::zeros({1, 24, 8, 40});
    auto dl = TensorD::zeros({1, 48, 8, 40});
    for (std::size_t s = 0; s < t.anchors.size(); ++s) {
        const int idx = t.anchors[s], p = idx / 12, k = idx % 12;
        lg.data()[static_cast<std::size_t>((2 * k + t.labels[s]) * 320 + p)] = 40;
        lg.data()[static_cast<std::size_t>((2 * k + 1 - t.labels[s]) * 320 + p)] = -40;
        for (int j = 0; j < 4; ++j) dl.data()[static_cast<std::size_t>((4 * k + j) * 320 + p)] = t.regression[s][static_cast<std::size_t>(j)];
    }
    auto perfect = rpn_loss<double>(lg, dl, t);
    CHECK(perfect.classification.item() < 1e-12);
    CHECK(perfect.localization.item() < 1e-12);
}

TEST_CASE("detector loss limit cases")
{
    RoiTargets bgt;
    for (int i = 0; i < 5; ++i) {
        bgt.rois.push_back({10, 10, 5, 5});
        bgt.labels.push_back(0);
        bgt.regression.push_back({0, 0, 0, 0});
    }
    auto logits = TensorD::zeros({5, 26});
    for (int i = 0; i < 5; ++i) logits.data()[static_cast<std::size_t>(i * 26)] = 50;
    auto l = detector_loss<double>(logits, TensorD::full({5, 25, 4}, 3.0), bgt);
    CHECK(l.localization.item() == 0.0);
    CHECK(l.classification.item() < 1e-12);

    RoiTargets fg = bgt;
    for (int i = 0; i < 5; ++i) fg.labels[static_cast<std::size_t>(i)] = 1 + i * 3;
    auto onehot = TensorD::full({5, 26}, -30.0);
    for (int i = 0; i < 5; ++i) onehot.data()[static_cast<std::size_t>(i * 26 + 1 + i * 3)] = 30;
    auto p = detector_loss<double>(onehot, TensorD::zeros({5, 25, 4}), fg);
    CHECK(p.classification.item() < 1e-12);
    CHECK(p.localization.item() == 0.0);
}

TEST_CASE("all four loss terms are finite and non-negative on random inputs")
{
    auto cfg = small_config();
    Recognizer net(cfg, 15);
    std::mt19937_64 rng(16);
    for (int trial = 0; trial < 3; ++trial) {
        auto batch = TensorF::randn({2, 3, 128, 640}, rng, 0.5f);
        std::vector<std::vector<BBox>> gt{testing::random_boxes(rng, 3, 128), testing::random_boxes(rng, 0, 128)};
        std::vector<std::vector<int>> cls{{1, 5, 24}, {}};
        auto l = net.losses(batch, gt, cls, rng);
        for (const auto* t : {&l.rpn_objectness, &l.rpn_localization, &l.classification, &l.localization}) {
            CHECK(std::isfinite(t->item()));
            CHECK(t->item() >= 0.0f);
        }
    }
}

TEST_CASE("composite recognizer losses pass the finite-difference check")
{
    CHECK(testing::rpn_loss_gradient_error(20, 17) < 1e-4);
    CHECK(testing::detector_loss_gradient_error(20, 18) < 1e-4);
}

TEST_CASE("per-class NMS keeps overlapping boxes of different classes")
{
    std::vector<CharDetection> d{{{50, 50, 20, 40}, 3, 0.9f}, {{51, 50, 20, 40}, 4, 0.8f}, {{52, 50, 20, 40}, 3, 0.7f}};
    auto kept = per_class_nms(d, 0.5f);
    REQUIRE(kept.size() == 2);
    CHECK(kept[0].class_id == 3);
    CHECK(kept[1].class_id == 4);
}

TEST_CASE("blank plate at a high threshold yields nothing")
{
    Recognizer net(small_config(), 19);
    CHECK(recognize_characters(net, Image(200, 48, 255), 0.99f, 0.5f).empty());
}
