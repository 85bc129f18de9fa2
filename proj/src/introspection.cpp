#include "ivoa/introspection.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "ivoa/common.hpp"
#include "ivoa/parallel.hpp"
#include "ivoa/rng.hpp"

namespace ivoa::introspection {

int slice_rows(int image_h, int patch, int stride) {
  return (image_h - patch) / stride + 1;
}

int slice_cols(int image_w, int patch, int stride) {
  return (image_w - patch) / stride + 1;
}

std::vector<PatchSlice> slice_patches(const Image& image, int patch, int stride) {
  if (patch < 1 || stride < 1) throw std::invalid_argument("bad patch/stride");
  if (image.width() < patch || image.height() < patch)
    throw std::invalid_argument("image smaller than the patch size");
  const int rows = slice_rows(image.height(), patch, stride);
  const int cols = slice_cols(image.width(), patch, stride);
  std::vector<PatchSlice> out;
  out.reserve(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      out.push_back({r, c, c * stride, r * stride});
  return out;
}

Prediction predict_mc(const NetworkF& net, std::span<const float> input01,
                      int passes, std::uint64_t rng_seed) {
  if (passes < 1) throw std::invalid_argument("need at least one pass");
  Rng rng(derive_seed(rng_seed, 0x3c, 0));

  std::array<double, 4> sum{0, 0, 0, 0};
  std::array<double, 4> sum_sq{0, 0, 0, 0};
  const bool stochastic = net.spec().p_drop > 0.0;
  std::array<double, 4> first{};
  for (int t = 0; t < passes; ++t) {
    std::array<double, 4> p;
    if (stochastic) {
      const auto masks = net.make_masks(rng);
      p = net.forward_masked(input01, masks);
    } else if (t == 0) {
      p = first = net.forward(input01);
    } else {
      p = first;  // deterministic network: all passes identical by definition
    }
    for (int c = 0; c < 4; ++c) {
      sum[c] += p[c];
      sum_sq[c] += p[c] * p[c];
    }
  }

  Prediction out;
  double var_sum = 0.0;
  for (int c = 0; c < 4; ++c) {
    out.mean[c] = sum[c] / passes;
    if (passes > 1 && stochastic) {
      const double ss = sum_sq[c] - sum[c] * sum[c] / passes;
      out.variance[c] = std::max(0.0, ss / (passes - 1));
    } else {
      out.variance[c] = 0.0;
    }
    var_sum += out.variance[c];
  }
  out.uncertainty = var_sum / 4.0;
  return out;
}

Prediction predict_mc(const NetworkF& net, const Image& patch, int passes,
                      std::uint64_t rng_seed) {
  const auto input = image_to_input<float>(patch);
  return predict_mc(net, input, passes, rng_seed);
}

Heatmap build_heatmap(const NetworkF& net, const Image& image, int passes,
                      std::uint64_t seed, int jobs, int patch, int stride) {
  const auto slices = slice_patches(image, patch, stride);
  Heatmap hm;
  hm.rows = slice_rows(image.height(), patch, stride);
  hm.cols = slice_cols(image.width(), patch, stride);
  hm.patch = patch;
  hm.stride = stride;
  hm.image_w = image.width();
  hm.image_h = image.height();
  hm.cells.resize(slices.size());

  parallel_for(slices.size(), jobs, [&](std::size_t i) {
    const auto& s = slices[i];
    Image crop(patch, patch);
    for (int y = 0; y < patch; ++y)
      for (int x = 0; x < patch; ++x) crop.at(x, y) = image.at(s.x0 + x, s.y0 + y);
    const std::uint64_t cell_seed =
        derive_seed(seed, static_cast<std::uint64_t>(s.row),
                    static_cast<std::uint64_t>(s.col));
    hm.cells[static_cast<std::size_t>(s.row) * hm.cols + s.col] =
        predict_mc(net, crop, passes, cell_seed);
  });
  return hm;
}

Heatmap mean_filter(const Heatmap& in, int kernel) {
  if (kernel < 1 || kernel % 2 == 0)
    throw std::invalid_argument("mean filter kernel must be odd and >= 1");
  if (kernel == 1) return in;
  const int half = kernel / 2;
  Heatmap out = in;
  for (int r = 0; r < in.rows; ++r) {
    for (int c = 0; c < in.cols; ++c) {
      std::array<double, 4> mean{0, 0, 0, 0};
      std::array<double, 4> var{0, 0, 0, 0};
      double unc = 0.0;
      int n = 0;
      for (int dr = -half; dr <= half; ++dr) {
        for (int dc = -half; dc <= half; ++dc) {
          const int rr = r + dr, cc = c + dc;
          if (rr < 0 || rr >= in.rows || cc < 0 || cc >= in.cols) continue;
          const Prediction& p = in.at(rr, cc);
          for (int k = 0; k < 4; ++k) {
            mean[k] += p.mean[k];
            var[k] += p.variance[k];
          }
          unc += p.uncertainty;
          ++n;
        }
      }
      Prediction& q = out.at(r, c);
      double mass = 0.0;
      for (int k = 0; k < 4; ++k) {
        q.mean[k] = mean[k] / n;
        q.variance[k] = var[k] / n;
        mass += q.mean[k];
      }
      for (int k = 0; k < 4; ++k) q.mean[k] /= mass;  // renormalize to sum 1
      q.uncertainty = unc / n;
    }
  }
  return out;
}

labelgen::OutcomeClass argmax_class(const std::array<double, 4>& mean) {
  int best = 0;
  for (int c = 1; c < 4; ++c)
    if (mean[c] > mean[best]) best = c;  // ties keep the smaller index
  return static_cast<labelgen::OutcomeClass>(best);
}

std::vector<CellDecision> decide_cells(const Heatmap& hm, double u_max) {
  if (u_max < 0) throw std::invalid_argument("u_max must be >= 0");
  std::vector<CellDecision> out(hm.cells.size());
  for (std::size_t i = 0; i < hm.cells.size(); ++i) {
    const Prediction& p = hm.cells[i];
    if (p.uncertainty < u_max) {
      out[i].abstain = false;
      out[i].cls = argmax_class(p.mean);
    }
  }
  return out;
}

void write_heatmap_csv(const Heatmap& hm, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "row,col,p_tp,p_fp,p_fn,p_tn,uncertainty\n";
  char line[160];
  for (int r = 0; r < hm.rows; ++r) {
    for (int c = 0; c < hm.cols; ++c) {
      const Prediction& p = hm.at(r, c);
      std::snprintf(line, sizeof line, "%d,%d,%.9g,%.9g,%.9g,%.9g,%.9g\n", r, c,
                    p.mean[0], p.mean[1], p.mean[2], p.mean[3], p.uncertainty);
      out << line;
    }
  }
  atomic_write_text(path, out.str());
}

void write_heatmap_pgms(const Heatmap& hm, const std::filesystem::path& dir,
                        const std::string& stem) {
  static const char* kClassNames[4] = {"tp", "fp", "fn", "tn"};
  for (int k = 0; k < 4; ++k) {
    Image img(hm.cols, hm.rows);
    for (int r = 0; r < hm.rows; ++r)
      for (int c = 0; c < hm.cols; ++c)
        img.at(c, r) = static_cast<float>(hm.at(r, c).mean[k]);
    write_pgm(img, dir / (stem + "_p_" + kClassNames[k] + ".pgm"));
  }
}

}  // namespace ivoa::introspection
