#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "lctr/localization.hpp"
#include "support.hpp"

using namespace lctr;
using namespace lctr::loc;
using lctr::testing::flood_fill_box;
using lctr::testing::random_tensor;

namespace {

SamplePrediction prediction(std::size_t label, std::size_t rank, const Box& gt_box,
                            std::size_t classes = 6) {
  // Places `label` at 1-based position `rank` in the ranking.
  std::vector<std::size_t> ranked;
  for (std::size_t c = 0; c < classes; ++c)
    if (c != label) ranked.push_back(c);
  ranked.insert(ranked.begin() + static_cast<std::ptrdiff_t>(rank - 1), label);
  return SamplePrediction{ranked, gt_box, gt_box};
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("class channel extraction") {
  Tensor maps = Tensor::zeros({3, 2, 2});
  for (std::size_t i = 4; i < 8; ++i) maps.mutable_data()[i] = static_cast<double>(i);
  CHECK(extract_m_cdm(maps, 1).to_vector() == std::vector<double>{4, 5, 6, 7});
  CHECK(extract_m_cdm(maps, 0).to_vector() == std::vector<double>(4, 0.0));
  CHECK_THROWS_AS(extract_m_cdm(maps, 3), UsageError);

  const std::vector<double> probs{0.3, 0.7};
  Tensor two = Tensor::from({2, 1, 2}, {1, 2, 3, 4});
  CHECK(extract_m_cdm(two, argmax(probs)).to_vector() == std::vector<double>{3, 4});

  CHECK(argmax(std::vector<double>{0.2, 0.4, 0.4}) == 1);
  CHECK(ranked_classes(std::vector<double>{0.1, 0.5, 0.1, 0.3}) ==
        std::vector<std::size_t>{1, 3, 0, 2});
}

TEST_CASE("fusion") {
  Rng rng(1);
  const Tensor a = random_tensor({4, 4}, rng, -1, 1);
  Tensor b = random_tensor({4, 4}, rng, 0, 1);
  CHECK(fuse(a, Tensor::full({4, 4}, 1.0)).to_vector() == a.to_vector());
  CHECK(fuse(a, b).to_vector() == fuse(b, a).to_vector());

  Tensor za = a.clone(), zb = b.clone();
  za.mutable_data()[3] = 0.0;
  zb.mutable_data()[7] = 0.0;
  zb.mutable_data()[3] = 0.0;
  const Tensor f = fuse(za, zb);
  for (std::size_t i = 0; i < 16; ++i) {
    CHECK((f.data()[i] == 0.0) == (za.data()[i] == 0.0 || zb.data()[i] == 0.0));
  }
  CHECK_THROWS_AS(fuse(a, Tensor::zeros({2, 8})), DimensionError);

  const LocalizationMaps maps = build_localization_maps(a, b, 16, 16);
  CHECK(maps.m_fuse.to_vector() == fuse(a, b).to_vector());
  CHECK(maps.upsampled.to_vector() == fuse_and_upsample(a, b, 16, 16).to_vector());
}

TEST_CASE("bilinear upsampling") {
  SUBCASE("hand table, 2x2 to 4x4") {
    // Half-pixel centres put output samples at source offsets
    // -0.25 (clamped to 0), 0.25, 0.75 and 1.25 (clamped to 1).
    const Tensor up = upsample_bilinear(Tensor::from({2, 2}, {0, 1, 2, 3}), 4, 4);
    const std::vector<double> expected{0.0, 0.25, 0.75, 1.0,   //
                                       0.5, 0.75, 1.25, 1.5,   //
                                       1.5, 1.75, 2.25, 2.5,   //
                                       2.0, 2.25, 2.75, 3.0};
    for (std::size_t i = 0; i < 16; ++i) CHECK(std::abs(up.data()[i] - expected[i]) < 1e-15);
  }
  SUBCASE("identity size") {
    Rng rng(2);
    const Tensor m = random_tensor({3, 5}, rng);
    CHECK(upsample_bilinear(m, 3, 5).to_vector() == m.to_vector());
  }
  SUBCASE("constant map") {
    const Tensor up = upsample_bilinear(Tensor::full({4, 4}, 2.0), 32, 32);
    for (double v : up.data()) CHECK(v == 2.0);
    const Tensor norm = fuse_and_upsample(Tensor::full({4, 4}, 2.0), Tensor::full({4, 4}, 1.0), 32, 32);
    for (double v : norm.data()) CHECK(v == 0.0);
  }
  SUBCASE("normalized output spans [0, 1]") {
    Rng rng(3);
    const Tensor n = fuse_and_upsample(random_tensor({4, 4}, rng), random_tensor({4, 4}, rng, 0, 1), 32, 32);
    double lo = 1, hi = 0;
    for (double v : n.data()) lo = std::min(lo, v), hi = std::max(hi, v);
    CHECK(lo == 0.0);
    CHECK(hi == 1.0);
  }
}

TEST_CASE("box extraction") {
  SUBCASE("isolated square") {
    Tensor m = Tensor::zeros({8, 8});
    for (std::size_t y = 2; y < 4; ++y)
      for (std::size_t x = 5; x < 7; ++x) m.mutable_data()[y * 8 + x] = 1.0;
    const BoxResult r = extract_box(m, 0.5);
    CHECK(r.box == Box{5, 2, 7, 4});
    CHECK(!r.empty_foreground);
  }
  SUBCASE("largest of two components") {
    Tensor m = Tensor::zeros({8, 8});
    for (std::size_t i : {0u, 1u, 2u}) m.mutable_data()[i] = 1.0;              // area 3, first in scan
    for (std::size_t i : {40u, 41u, 48u, 49u, 57u}) m.mutable_data()[i] = 0.8;  // area 5
    CHECK(extract_box(m, 0.3).box == Box{0, 5, 2, 8});
  }
  SUBCASE("diagonal neighbours join one component") {
    Tensor m = Tensor::zeros({4, 4});
    m.mutable_data()[0] = 1.0;
    m.mutable_data()[5] = 1.0;
    m.mutable_data()[10] = 1.0;
    m.mutable_data()[3] = 1.0;
    CHECK(extract_box(m, 0.5).box == Box{0, 0, 3, 3});
  }
  SUBCASE("equal areas keep the first") {
    Tensor m = Tensor::zeros({4, 4});
    m.mutable_data()[0] = 1.0;
    m.mutable_data()[15] = 1.0;
    CHECK(extract_box(m, 0.5).box == Box{0, 0, 1, 1});
  }
  SUBCASE("empty foreground") {
    const BoxResult r = extract_box(Tensor::zeros({6, 5}), 0.35);
    CHECK(r.empty_foreground);
    CHECK(r.box == Box{0, 0, 5, 6});
  }
  SUBCASE("threshold ratio must lie in (0, 1)") {
    CHECK_THROWS_AS(extract_box(Tensor::zeros({2, 2}), 0.0), ConfigError);
    CHECK_THROWS_AS(extract_box(Tensor::zeros({2, 2}), 1.0), ConfigError);
  }
  SUBCASE("flood-fill oracle on random heatmaps") {
    Rng rng(4);
    for (int trial = 0; trial < 200; ++trial) {
      const Tensor m = random_tensor({8, 8}, rng, 0, 1);
      const double ratio = 0.3 + 0.4 * rng.uniform();
      CHECK(extract_box(m, ratio).box == flood_fill_box(m, ratio));
    }
  }
  SUBCASE("affine invariance") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
      const Tensor m = random_tensor({8, 8}, rng, 0, 1);
      const double alpha = rng.uniform(0.5, 4.0), beta = rng.uniform(-3, 3);
      CHECK(extract_box(affine(m, alpha, beta), 0.4).box == extract_box(m, 0.4).box);
    }
  }
}

TEST_CASE("intersection over union") {
  const Box a{0, 0, 2, 2}, b{1, 1, 3, 3};
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, Box{5, 5, 7, 7}) == 0.0);
  CHECK(iou(a, Box{2, 0, 4, 2}) == 0.0);  // touching edges share no pixel
  CHECK(std::abs(iou(a, b) - 1.0 / 7.0) < 1e-15);
  CHECK(iou(a, b) == iou(b, a));
  CHECK(iou(Box{0, 0, 10, 10}, Box{0, 0, 10, 5}) == 0.5);
}

TEST_CASE("evaluation") {
  const Box gt{0, 0, 10, 10};
  const Box good = gt, bad{0, 0, 4, 4}, half{0, 0, 10, 5};

  SUBCASE("perfect predictions") {
    std::vector<SamplePrediction> p;
    std::vector<GroundTruth> t;
    for (std::size_t i = 0; i < 4; ++i) {
      p.push_back(prediction(i, 1, good));
      t.push_back({i, gt});
    }
    const MetricsReport r = evaluate(p, t);
    CHECK(r.top1_cls == 1.0);
    CHECK(r.top5_cls == 1.0);
    CHECK(r.top1_loc == 1.0);
    CHECK(r.top5_loc == 1.0);
    CHECK(r.gt_known == 1.0);
    CHECK(r.n_samples == 4);
  }
  SUBCASE("correct class with a low-overlap box") {
    const Box low{0, 0, 10, 4};  // IoU 0.4
    CHECK(std::abs(iou(low, gt) - 0.4) < 1e-15);
    const SampleOutcome o = score_sample(prediction(2, 1, low), {2, gt});
    CHECK(o.top1_cls);
    CHECK(!o.gt_known);
    CHECK(!o.top1_loc);
    CHECK(!o.top5_loc);
  }
  SUBCASE("ten-sample manual tally") {
    struct Row {
      std::size_t rank;
      Box box;
    };
    // rank of the true class, box from the true-class channel
    const std::vector<Row> rows{{1, good}, {1, bad}, {2, good}, {3, bad}, {6, good},
                                {6, bad},  {1, good}, {5, good}, {1, half}, {4, good}};
    std::vector<SamplePrediction> p;
    std::vector<GroundTruth> t;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const std::size_t label = i % 6;
      p.push_back(prediction(label, rows[i].rank, rows[i].box));
      t.push_back({label, gt});
    }
    const MetricsReport r = evaluate(p, t);
    CHECK(r.top1_cls == 0.4);   // samples 1, 2, 7, 9
    CHECK(r.top5_cls == 0.8);   // all but 5 and 6
    CHECK(r.gt_known == 0.6);   // 1, 3, 5, 7, 8, 10 (sample 9 sits exactly at 0.5)
    CHECK(r.top1_loc == 0.2);   // 1, 7
    CHECK(r.top5_loc == 0.5);   // 1, 3, 7, 8, 10
    CHECK(r.consistent());
  }
  SUBCASE("fewer than five classes count every class as top-5") {
    const SampleOutcome o = score_sample(prediction(0, 3, good, 3), {0, gt});
    CHECK(o.top5_cls);
    CHECK(!o.top1_cls);
  }
  SUBCASE("length mismatch") {
    CHECK_THROWS_AS(evaluate({prediction(0, 1, good)}, {}), UsageError);
  }
  SUBCASE("report invariants on random outcomes") {
    Rng rng(6);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<SamplePrediction> p;
      std::vector<GroundTruth> t;
      for (std::size_t i = 0; i < 20; ++i) {
        const std::size_t label = rng.below(8);
        const std::size_t x0 = rng.below(8), y0 = rng.below(8);
        const Box box{x0, y0, x0 + 1 + rng.below(10), y0 + 1 + rng.below(10)};
        p.push_back(prediction(label, 1 + rng.below(8), box, 8));
        t.push_back({label, gt});
      }
      const MetricsReport r = evaluate(p, t);
      CHECK(r.consistent());
      CHECK(r.top1_loc <= std::min(r.top1_cls, r.gt_known));
      CHECK(r.top1_loc <= r.top5_loc);
      CHECK(r.top1_cls <= r.top5_cls);
    }
  }
}

TEST_CASE("exports") {
  const auto dir = std::filesystem::temp_directory_path() / "lctr_test_loc_exports";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);

  SUBCASE("metrics text and json") {
    MetricsReport r;
    r.top1_cls = 0.9;
    r.top5_cls = 1.0;
    r.top1_loc = 0.5;
    r.top5_loc = 0.55;
    r.gt_known = 0.6;
    r.n_samples = 20;
    write_metrics(dir, r);
    const std::string text = read_file(dir / "metrics.txt");
    CHECK(text == format_metrics_text(r));
    CHECK(text.find("gt_known = 0.600000\n") != std::string::npos);
    CHECK(text.find("n_samples = 20\n") != std::string::npos);
    const auto json = nlohmann::json::parse(read_file(dir / "metrics.json"));
    CHECK(json.at("top1_loc").get<double>() == 0.5);
    CHECK(json.at("n_samples").get<std::size_t>() == 20);
  }
  SUBCASE("graymap") {
    const Tensor m = Tensor::from({2, 3}, {0.0, 0.5, 1.0, 0.25, 0.75, 1.0});
    write_pgm(dir / "h.pgm", m);
    const std::string bytes = read_file(dir / "h.pgm");
    const std::string header = "P5\n3 2\n255\n";
    REQUIRE(bytes.size() == header.size() + 6);
    CHECK(bytes.substr(0, header.size()) == header);
    const auto px = [&](std::size_t i) { return static_cast<unsigned char>(bytes[header.size() + i]); };
    CHECK(px(0) == 0);
    CHECK(px(2) == 255);
    CHECK(px(1) == 128);
  }
  SUBCASE("boxes csv") {
    write_boxes_csv(dir / "boxes.csv", {{0, Box{1, 2, 3, 4}, 0.5}, {1, Box{0, 0, 8, 8}, 0.25}});
    const std::string csv = read_file(dir / "boxes.csv");
    CHECK(csv.rfind("image_id,x0,y0,x1,y1,score\n", 0) == 0);
    CHECK(csv.find("0,1,2,3,4,0.5") != std::string::npos);
    CHECK(csv.find("1,0,0,8,8,0.25") != std::string::npos);
  }
  std::filesystem::remove_all(dir);
}
