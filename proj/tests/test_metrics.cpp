#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "vistrack/metrics.hpp"
#include "vistrack/rng.hpp"

using namespace vistrack;

namespace {

// Builds a mask from rows of '.' and '#'.
Mask mask_from(const std::vector<std::string>& rows) {
  Mask m(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) m.set(y, x, rows[y][x] == '#' ? 1 : 0);
  return m;
}

Track make_track(int video, int id, int cls, double score,
                 const std::vector<std::pair<int, Mask>>& frames) {
  Track t;
  t.video_id = video;
  t.track_id = id;
  t.class_id = cls;
  t.score = score;
  for (const auto& [f, m] : frames) t.frames[f] = m;
  return t;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("run-length codec hand cases") {
    Mask zeros(2, 2);
    CHECK(rle_encode(zeros).runs == std::vector<int>{4});

    Mask ones(2, 2);
    std::fill(ones.data.begin(), ones.data.end(), 1);
    CHECK(rle_encode(ones).runs == std::vector<int>{0, 4});

    Mask checker = mask_from({".#", "#."});
    CHECK(rle_encode(checker).runs == std::vector<int>{1, 2, 1});

    MaskRLE r = rle_encode(checker);
    Mask back = rle_decode(r);
    CHECK(back.data == checker.data);

    MaskRLE bad{2, 2, {3}};
    CHECK_THROWS_WITH_AS(rle_decode(bad), doctest::Contains("runs sum"), std::invalid_argument);
  }

  TEST_CASE("run-length codec round-trips random masks") {
    Rng rng(71);
    for (int trial = 0; trial < 20; ++trial) {
      Mask m(rng.uniform_int(1, 9), rng.uniform_int(1, 9));
      for (auto& v : m.data) v = rng.uniform() < 0.5 ? 1 : 0;
      MaskRLE r = rle_encode(m);
      long total = 0;
      for (int run : r.runs) total += run;
      CHECK(total == m.height * m.width);
      Mask back = rle_decode(r);
      CHECK(back.height == m.height);
      CHECK(back.width == m.width);
      CHECK(back.data == m.data);
    }
  }

  TEST_CASE("run-length text form") {
    Mask checker = mask_from({".#", "#."});
    const std::string s = rle_to_string(rle_encode(checker));
    CHECK(s == "2x2:1,2,1");
    MaskRLE parsed = rle_from_string(s);
    CHECK(parsed.height == 2);
    CHECK(parsed.width == 2);
    CHECK(parsed.runs == std::vector<int>{1, 2, 1});
    CHECK_THROWS(rle_from_string("nonsense"));
    CHECK_THROWS(rle_from_string("2x2:1,a,1"));
  }

  TEST_CASE("tube overlap hand cases") {
    Mask a = mask_from({"##..", "##.."});
    Mask b = mask_from({"..##", "..##"});
    Track gt = make_track(0, 1, 0, 1.0, {{0, a}, {1, a}});

    CHECK(tube_iou(gt, gt) == 1.0);

    Track empty = make_track(0, 2, 0, 1.0, {});
    CHECK(tube_iou(empty, gt) == 0.0);

    // frame 0 identical, frame 1 disjoint equal-size: (a)/(a + 2a) = 1/3
    Track drifted = make_track(0, 3, 0, 1.0, {{0, a}, {1, b}});
    CHECK(tube_iou(drifted, gt) == doctest::Approx(1.0 / 3.0));
    CHECK(tube_iou(gt, drifted) == doctest::Approx(1.0 / 3.0));  // symmetric

    // a track absent in a frame contributes an empty mask
    Track half = make_track(0, 4, 0, 1.0, {{0, a}});
    CHECK(tube_iou(half, gt) == doctest::Approx(0.5));

    // restricting the range to frame 0 ignores the miss
    CHECK(tube_iou(half, gt, 0, 1) == 1.0);
    CHECK(tube_iou(drifted, gt, 1, 2) == 0.0);

    Track wrong_canvas = make_track(0, 5, 0, 1.0, {{0, mask_from({"##", "##"})}});
    CHECK_THROWS(tube_iou(wrong_canvas, gt));
  }

  TEST_CASE("perfect predictions score one everywhere") {
    Mask a = mask_from({"##..", "##.."});
    Mask b = mask_from({"..##", "..##"});
    std::vector<Track> gts = {make_track(0, 1, 0, 1.0, {{0, a}, {1, a}}),
                              make_track(0, 2, 1, 1.0, {{0, b}, {1, b}})};
    std::vector<Track> preds = {make_track(0, 10, 0, 0.9, {{0, a}, {1, a}}),
                                make_track(0, 11, 1, 0.8, {{0, b}, {1, b}})};
    EvalReport r = evaluate(preds, gts);
    CHECK(r.ap == doctest::Approx(1.0));
    CHECK(r.ap50 == doctest::Approx(1.0));
    CHECK(r.ap75 == doctest::Approx(1.0));
    CHECK(r.ar1 == doctest::Approx(1.0));
    CHECK(r.ar10 == doctest::Approx(1.0));
    REQUIRE(r.per_class.size() == 2);
    CHECK(r.per_class[0].gt_count == 1);
  }

  TEST_CASE("an overlap of exactly 0.6 passes thresholds up to 0.60") {
    // pred 4 px, gt 4 px, 3 shared: IoU = 3/5 = 0.6
    Mask gt_m = mask_from({"####...."});
    Mask pr_m = mask_from({".####..."});
    std::vector<Track> gts = {make_track(0, 1, 0, 1.0, {{0, gt_m}})};
    std::vector<Track> preds = {make_track(0, 9, 0, 0.9, {{0, pr_m}})};
    EvalReport r = evaluate(preds, gts);
    CHECK(r.ap50 == doctest::Approx(1.0));
    CHECK(r.ap75 == doctest::Approx(0.0));
    CHECK(r.ap == doctest::Approx(0.3));  // positive at 0.50/0.55/0.60 of ten thresholds
  }

  TEST_CASE("a duplicate prediction is a false positive after the match") {
    Mask a = mask_from({"###.", "###."});
    std::vector<Track> gts = {make_track(0, 1, 0, 1.0, {{0, a}})};
    std::vector<Track> preds = {make_track(0, 10, 0, 0.9, {{0, a}}),
                                make_track(0, 11, 0, 0.5, {{0, a}})};
    EvalReport r = evaluate(preds, gts);
    // PR points (R=1,P=1) then (R=1,P=0.5); the interpolated envelope is 1
    CHECK(r.ap50 == doctest::Approx(1.0));
    // the duplicate can never raise recall, so AR is unchanged too
    CHECK(r.ar10 == doctest::Approx(1.0));
  }

  TEST_CASE("a false positive between two hits bends the PR curve") {
    Mask a = mask_from({"##......"});
    Mask b = mask_from({"......##"});
    Mask off = mask_from({"...##..."});
    std::vector<Track> gts = {make_track(0, 1, 0, 1.0, {{0, a}}),
                              make_track(0, 2, 0, 1.0, {{0, b}})};
    std::vector<Track> preds = {make_track(0, 10, 0, 0.9, {{0, a}}),
                                make_track(0, 11, 0, 0.8, {{0, off}}),
                                make_track(0, 12, 0, 0.7, {{0, b}})};
    EvalReport r = evaluate(preds, gts, {0.5});
    // envelope: precision 1 for recall <= 0.5 (51 points), 2/3 above (50 points)
    CHECK(r.ap50 == doctest::Approx((51.0 + 50.0 * (2.0 / 3.0)) / 101.0));

    // dropping the false positive can only help
    EvalReport clean = evaluate({preds[0], preds[2]}, gts, {0.5});
    CHECK(clean.ap50 >= r.ap50);
    CHECK(clean.ap50 == doctest::Approx(1.0));
  }

  TEST_CASE("a track missing one of two frames halves its overlap") {
    Mask a = mask_from({"####", "####"});
    std::vector<Track> gts = {make_track(0, 1, 0, 1.0, {{0, a}, {1, a}})};
    std::vector<Track> preds = {make_track(0, 10, 0, 0.9, {{0, a}})};
    EvalReport r = evaluate(preds, gts);
    CHECK(r.ap50 == doctest::Approx(1.0));  // 0.5 >= 0.50
    CHECK(r.ap75 == doctest::Approx(0.0));
    CHECK(r.ap == doctest::Approx(0.1));  // only the 0.50 threshold accepts
  }

  TEST_CASE("predicted classes absent from the ground truth are ignored") {
    Mask a = mask_from({"##", "##"});
    std::vector<Track> gts = {make_track(0, 1, 0, 1.0, {{0, a}})};
    std::vector<Track> preds = {make_track(0, 10, 0, 0.9, {{0, a}}),
                                make_track(0, 11, 7, 0.99, {{0, a}})};
    EvalReport r = evaluate(preds, gts);
    CHECK(r.ap == doctest::Approx(1.0));
    REQUIRE(r.per_class.size() == 1);
    CHECK(r.per_class[0].class_id == 0);
  }

  TEST_CASE("matching never crosses video boundaries") {
    Mask a = mask_from({"##", "##"});
    std::vector<Track> gts = {make_track(1, 1, 0, 1.0, {{0, a}})};
    std::vector<Track> preds = {make_track(0, 10, 0, 0.9, {{0, a}})};
    EvalReport r = evaluate(preds, gts);
    CHECK(r.ap == doctest::Approx(0.0));
    CHECK(r.ap50 == doctest::Approx(0.0));
  }

  TEST_CASE("recall caps separate AR1 from AR10") {
    Mask good = mask_from({"####"});
    Mask bad = mask_from({"...."});
    std::vector<Track> gts = {make_track(0, 1, 0, 1.0, {{0, good}})};
    std::vector<Track> preds = {make_track(0, 10, 0, 0.9, {{0, bad}}),
                                make_track(0, 11, 0, 0.8, {{0, good}})};
    EvalReport r = evaluate(preds, gts, {0.5});
    CHECK(r.ar1 == doctest::Approx(0.0));   // the only allowed prediction misses
    CHECK(r.ar10 == doctest::Approx(1.0));  // the second one hits
    CHECK(r.ap50 == doctest::Approx(0.5));  // envelope is flat at 1/2
  }

  TEST_CASE("evaluation ignores prediction input order") {
    Rng rng(72);
    Mask shapes[3] = {mask_from({"##......"}), mask_from({"...##..."}), mask_from({"......##"})};
    std::vector<Track> gts, preds;
    for (int i = 0; i < 3; ++i) {
      gts.push_back(make_track(0, i, i % 2, 1.0, {{0, shapes[i]}, {1, shapes[i]}}));
      preds.push_back(make_track(0, 10 + i, i % 2, rng.uniform(0.3, 0.9),
                                 {{0, shapes[(i + 1) % 3]}, {1, shapes[i]}}));
    }
    EvalReport base = evaluate(preds, gts);
    std::vector<Track> shuffled = {preds[2], preds[0], preds[1]};
    EvalReport again = evaluate(shuffled, gts);
    CHECK(base.ap == again.ap);
    CHECK(base.ap50 == again.ap50);
    CHECK(base.ar10 == again.ar10);
  }

  TEST_CASE("predictions file round trip") {
    namespace fs = std::filesystem;
    fs::create_directories("tmp_metrics");
    Mask a = mask_from({"#.#", ".#."});
    std::vector<Track> tracks = {make_track(0, 1, 2, 0.875, {{0, a}, {3, a}}),
                                 make_track(1, 4, 0, 0.25, {})};
    const std::string path = "tmp_metrics/preds.json";
    write_predictions(path, tracks);
    std::vector<Track> back = read_predictions(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].video_id == 0);
    CHECK(back[0].track_id == 1);
    CHECK(back[0].class_id == 2);
    CHECK(back[0].score == 0.875);
    REQUIRE(back[0].frames.count(3) == 1);
    CHECK(back[0].frames.at(3).data == a.data);
    CHECK(back[1].frames.empty());
    CHECK_THROWS(read_predictions("tmp_metrics/absent.json"));
  }

  TEST_CASE("report serialization") {
    Mask a = mask_from({"##", "##"});
    EvalReport r = evaluate({make_track(0, 1, 0, 0.9, {{0, a}})},
                            {make_track(0, 1, 0, 1.0, {{0, a}})});
    const std::string j = report_to_json(r);
    CHECK(j.find("\"ap\"") != std::string::npos);
    CHECK(j.find("\"per_class\"") != std::string::npos);
    const std::string table = report_table(r);
    CHECK(table.find("all") != std::string::npos);
    CHECK(table.find("AR10") != std::string::npos);
  }
}
