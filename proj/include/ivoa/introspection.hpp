#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "ivoa/image.hpp"
#include "ivoa/labelgen.hpp"
#include "ivoa/nn.hpp"

namespace ivoa::introspection {

struct PatchSlice {
  int row = 0, col = 0;
  int x0 = 0, y0 = 0;  // top-left pixel of the patch window
};

// Overlapping patch grid: patch (r, c) covers
// [c*stride, c*stride+patch) x [r*stride, r*stride+patch).
std::vector<PatchSlice> slice_patches(const Image& image, int patch = 100,
                                      int stride = 20);
int slice_rows(int image_h, int patch = 100, int stride = 20);
int slice_cols(int image_w, int patch = 100, int stride = 20);

// Monte-Carlo dropout output for one patch: mean and per-class sample
// variance over the passes; the uncertainty scalar averages the variances.
struct Prediction {
  std::array<double, 4> mean{0.25, 0.25, 0.25, 0.25};
  std::array<double, 4> variance{0, 0, 0, 0};
  double uncertainty = 0.0;
};

Prediction predict_mc(const NetworkF& net, std::span<const float> input01,
                      int passes, std::uint64_t rng_seed);
Prediction predict_mc(const NetworkF& net, const Image& patch, int passes,
                      std::uint64_t rng_seed);

struct Heatmap {
  int rows = 0, cols = 0;
  int patch = 100, stride = 20;
  int image_w = 0, image_h = 0;
  std::vector<Prediction> cells;  // row-major

  Prediction& at(int r, int c) { return cells[static_cast<std::size_t>(r) * cols + c]; }
  const Prediction& at(int r, int c) const {
    return cells[static_cast<std::size_t>(r) * cols + c];
  }
};

// predict_mc over every slice. Each patch draws its dropout streams from a
// seed derived from (seed, row, col), so the result is independent of
// evaluation order and thread count.
Heatmap build_heatmap(const NetworkF& net, const Image& image, int passes,
                      std::uint64_t seed, int jobs = 1, int patch = 100,
                      int stride = 20);

// Per-class box filter over the heatmap grid; border cells average their
// in-bounds neighborhood. Means are renormalized to sum 1; variances and
// uncertainties are filtered with the same kernel.
Heatmap mean_filter(const Heatmap& in, int kernel = 3);

struct CellDecision {
  bool abstain = true;
  labelgen::OutcomeClass cls = labelgen::OutcomeClass::TN;
};

// argmax class where uncertainty < u_max, Abstain otherwise. Ties break
// toward the smaller class index (TP < FP < FN < TN).
std::vector<CellDecision> decide_cells(const Heatmap& hm, double u_max);

labelgen::OutcomeClass argmax_class(const std::array<double, 4>& mean);

// CSV: row,col,p_tp,p_fp,p_fn,p_tn,uncertainty
void write_heatmap_csv(const Heatmap& hm, const std::filesystem::path& path);
// 8-bit PGM per class, cell value = round(255 * mean probability)
void write_heatmap_pgms(const Heatmap& hm, const std::filesystem::path& dir,
                        const std::string& stem);

}  // namespace ivoa::introspection
