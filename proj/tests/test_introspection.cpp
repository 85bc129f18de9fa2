#include <doctest.h>

#include <cmath>

#include "ivoa/introspection.hpp"
#include "test_util.hpp"

using namespace ivoa;
using namespace ivoa::introspection;
using labelgen::OutcomeClass;

namespace {

NetworkSpec tiny_spec(double p_drop = 0.5) {
  NetworkSpec s;
  s.input_size = 100;
  s.conv = {{4, 5, 1, 4}};  // aggressive pooling keeps the test fast
  s.fc = {16, 8, 4};
  s.p_drop = p_drop;
  return s;
}

Image noise_image(int w, int h, std::uint64_t seed) {
  Image img(w, h);
  Rng rng(seed);
  for (auto& v : img.pixels()) v = static_cast<float>(rng.uniform());
  return img;
}

Heatmap uniform_heatmap(int rows, int cols) {
  Heatmap hm;
  hm.rows = rows;
  hm.cols = cols;
  hm.cells.assign(static_cast<std::size_t>(rows) * cols, Prediction{});
  return hm;
}

}  // namespace

TEST_CASE("slice arithmetic matches the patch-grid formula") {
  CHECK(slice_cols(960) == 44);  // (960-100)/20+1
  CHECK(slice_rows(600) == 26);
  const auto slices = slice_patches(noise_image(960, 600, 1));
  CHECK(slices.size() == 44 * 26);
  // patch (r, c) covers [c*20, c*20+100) x [r*20, r*20+100)
  CHECK(slices[1].col == 1);
  CHECK(slices[1].x0 == 20);
  CHECK(slices[44].row == 1);
  CHECK(slices[44].y0 == 20);

  CHECK(slice_patches(noise_image(100, 100, 1)).size() == 1);
  CHECK(slice_patches(noise_image(120, 100, 1)).size() == 2);
  CHECK_THROWS_AS(slice_patches(noise_image(99, 100, 1)), std::invalid_argument);
}

TEST_CASE("predict_mc with dropout disabled equals the deterministic forward") {
  NetworkF net(tiny_spec(0.0), 5);
  const Image patch = noise_image(100, 100, 2);
  const Prediction p = predict_mc(net, patch, 20, 77);
  const auto direct = net.forward(image_to_input<float>(patch));
  for (int c = 0; c < 4; ++c) {
    CHECK(p.mean[c] == direct[c]);  // exact equality
    CHECK(p.variance[c] == 0.0);
  }
  CHECK(p.uncertainty == 0.0);
}

TEST_CASE("predict_mc at the stochastic operating point") {
  NetworkF net(tiny_spec(0.5), 6);
  const Image patch = noise_image(100, 100, 3);
  const Prediction p = predict_mc(net, patch, 20, 123);
  double sum = 0.0;
  for (int c = 0; c < 4; ++c) {
    CHECK(p.mean[c] >= 0.0);
    CHECK(p.variance[c] >= 0.0);
    sum += p.mean[c];
  }
  CHECK(std::abs(sum - 1.0) < 1e-6);
  CHECK(p.uncertainty > 0.0);  // dropout at p=0.5 must produce spread

  const Prediction q = predict_mc(net, patch, 20, 123);
  CHECK(p.mean == q.mean);  // fixed seed reproduces bit-for-bit
  CHECK(p.variance == q.variance);

  CHECK_THROWS_AS(predict_mc(net, patch, 0, 1), std::invalid_argument);
}

TEST_CASE("heatmaps are invariant to evaluation order and thread count") {
  NetworkF net(tiny_spec(0.5), 7);
  const Image img = noise_image(220, 160, 4);
  const Heatmap a = build_heatmap(net, img, 5, 99, 1);
  const Heatmap b = build_heatmap(net, img, 5, 99, 2);
  CHECK(a.rows == slice_rows(160));
  CHECK(a.cols == slice_cols(220));
  REQUIRE(a.cells.size() == b.cells.size());
  for (std::size_t i = 0; i < a.cells.size(); ++i) {
    CHECK(a.cells[i].mean == b.cells[i].mean);
    CHECK(a.cells[i].variance == b.cells[i].variance);
  }
}

TEST_CASE("heatmap of a patch-sized image is a single cell") {
  NetworkF net(tiny_spec(0.5), 8);
  const Heatmap hm = build_heatmap(net, noise_image(100, 100, 5), 3, 1, 1);
  CHECK(hm.rows == 1);
  CHECK(hm.cols == 1);
  CHECK(hm.cells.size() == 1);
}

TEST_CASE("mean filter behavior") {
  SUBCASE("uniform heatmap is a fixed point") {
    const Heatmap hm = uniform_heatmap(5, 7);
    const Heatmap f = mean_filter(hm, 3);
    for (std::size_t i = 0; i < f.cells.size(); ++i)
      for (int c = 0; c < 4; ++c)
        CHECK(f.cells[i].mean[c] == doctest::Approx(0.25).epsilon(1e-12));
  }
  SUBCASE("kernel 1 is the identity") {
    Heatmap hm = uniform_heatmap(3, 3);
    hm.at(1, 1).mean = {0.7, 0.1, 0.1, 0.1};
    const Heatmap f = mean_filter(hm, 1);
    CHECK(f.at(1, 1).mean == hm.at(1, 1).mean);
  }
  SUBCASE("an interior spike spreads 1/9 of its excess to each neighbor") {
    Heatmap hm = uniform_heatmap(5, 5);
    hm.at(2, 2).mean = {1.0, 0.0, 0.0, 0.0};
    const Heatmap f = mean_filter(hm, 3);
    // neighbor (2,1): 8 cells at 0.25 plus the spike -> 0.25 + (1-0.25)/9
    CHECK(f.at(2, 1).mean[0] == doctest::Approx(0.25 + 0.75 / 9).epsilon(1e-12));
    double sum = 0.0;
    for (int c = 0; c < 4; ++c) sum += f.at(2, 1).mean[c];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    // corner (0,0) is out of the spike's reach
    CHECK(f.at(0, 0).mean[0] == doctest::Approx(0.25).epsilon(1e-12));
  }
  SUBCASE("even kernels are rejected") {
    const Heatmap hm = uniform_heatmap(3, 3);
    CHECK_THROWS_AS(mean_filter(hm, 2), std::invalid_argument);
  }
  SUBCASE("uncertainty is filtered with the same kernel") {
    Heatmap hm = uniform_heatmap(3, 3);
    hm.at(1, 1).uncertainty = 0.9;
    const Heatmap f = mean_filter(hm, 3);
    CHECK(f.at(0, 0).uncertainty == doctest::Approx(0.9 / 4).epsilon(1e-12));
    CHECK(f.at(1, 1).uncertainty == doctest::Approx(0.9 / 9).epsilon(1e-12));
  }
}

TEST_CASE("decide_cells thresholds and tie-breaking") {
  Heatmap hm = uniform_heatmap(2, 2);
  hm.at(0, 0).mean = {0.1, 0.6, 0.2, 0.1};
  hm.at(0, 0).uncertainty = 0.001;
  hm.at(0, 1).mean = {0.1, 0.6, 0.2, 0.1};
  hm.at(0, 1).uncertainty = 0.5;
  hm.at(1, 0).mean = {0.3, 0.3, 0.2, 0.2};  // tie between TP and FP
  hm.at(1, 0).uncertainty = 0.0;

  SUBCASE("infinite threshold never abstains") {
    const auto d = decide_cells(hm, std::numeric_limits<double>::infinity());
    for (const auto& cell : d) CHECK(!cell.abstain);
    CHECK(d[0].cls == OutcomeClass::FP);
    CHECK(d[2].cls == OutcomeClass::TP);  // tie broken by class order
  }
  SUBCASE("zero threshold abstains everywhere") {
    const auto d = decide_cells(hm, 0.0);
    for (const auto& cell : d) CHECK(cell.abstain);
  }
  SUBCASE("intermediate threshold") {
    const auto d = decide_cells(hm, 0.01);
    CHECK(!d[0].abstain);
    CHECK(d[0].cls == OutcomeClass::FP);
    CHECK(d[1].abstain);  // 0.5 >= 0.01
  }
  SUBCASE("abstention count is monotone in the threshold") {
    NetworkF net(tiny_spec(0.5), 9);
    const Heatmap real = build_heatmap(net, noise_image(200, 140, 6), 8, 3, 2);
    int prev = -1;
    for (const double u : {0.0, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0}) {
      int abstains = 0;
      for (const auto& cell : decide_cells(real, u))
        if (cell.abstain) ++abstains;
      if (prev >= 0) CHECK(abstains <= prev);
      prev = abstains;
    }
  }
}

TEST_CASE("heatmap exports") {
  const auto dir = ivoa_test::scratch_dir("heatmap_io");
  NetworkF net(tiny_spec(0.5), 10);
  const Heatmap hm = build_heatmap(net, noise_image(160, 120, 7), 3, 5, 2);
  write_heatmap_csv(hm, dir / "hm.csv");
  write_heatmap_pgms(hm, dir, "frame0");
  CHECK(std::filesystem::file_size(dir / "hm.csv") > 100);
  for (const char* cls : {"tp", "fp", "fn", "tn"}) {
    const Image img = read_pgm(dir / (std::string("frame0_p_") + cls + ".pgm"));
    CHECK(img.width() == hm.cols);
    CHECK(img.height() == hm.rows);
  }
}
