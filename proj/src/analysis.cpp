#include "ivoa/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "ivoa/common.hpp"
#include "ivoa/rng.hpp"

namespace ivoa::analysis {

using json = nlohmann::json;

std::optional<double> EvalReport::mean_class_accuracy() const {
  double sum = 0.0;
  int n = 0;
  for (const auto& a : class_accuracy) {
    if (!a) continue;
    sum += *a;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

EvalReport evaluate(std::span<const EvalRecord> records) {
  if (records.empty()) throw DataError("no records to evaluate");
  EvalReport rep;
  rep.total = static_cast<int>(records.size());
  std::array<int, 4> totals{0, 0, 0, 0};
  std::array<int, 4> correct{0, 0, 0, 0};
  for (const auto& r : records) {
    if (!r.predicted) {
      ++rep.abstained;
      continue;
    }
    const int t = static_cast<int>(r.truth);
    const int p = static_cast<int>(*r.predicted);
    ++rep.confusion[t][p];
    ++totals[t];
    if (t == p) ++correct[t];
  }
  for (int c = 0; c < 4; ++c)
    if (totals[c] > 0)
      rep.class_accuracy[c] = static_cast<double>(correct[c]) / totals[c];
  rep.abstention_rate = static_cast<double>(rep.abstained) / rep.total;
  return rep;
}

std::vector<SweepPoint> uncertainty_sweep(std::span<const EvalRecord> records,
                                          std::span<const double> thresholds) {
  for (std::size_t i = 1; i < thresholds.size(); ++i)
    if (thresholds[i] < thresholds[i - 1])
      throw std::invalid_argument("sweep thresholds must be ascending");

  std::array<int, 4> class_totals{0, 0, 0, 0};
  for (const auto& r : records) ++class_totals[static_cast<int>(r.truth)];

  std::vector<SweepPoint> out;
  out.reserve(thresholds.size());
  for (const double th : thresholds) {
    SweepPoint pt;
    pt.threshold = th;
    std::array<int, 4> kept{0, 0, 0, 0};
    std::array<int, 4> decided{0, 0, 0, 0};
    std::array<int, 4> correct{0, 0, 0, 0};
    int kept_total = 0;
    for (const auto& r : records) {
      if (!(r.uncertainty < th)) continue;
      const int t = static_cast<int>(r.truth);
      ++kept[t];
      ++kept_total;
      if (!r.predicted) continue;
      ++decided[t];
      if (*r.predicted == r.truth) ++correct[t];
    }
    pt.retained = records.empty() ? 0.0
                                  : static_cast<double>(kept_total) / records.size();
    double acc_sum = 0.0;
    int acc_classes = 0;
    for (int c = 0; c < 4; ++c) {
      pt.retained_per_class[c] =
          class_totals[c] > 0 ? static_cast<double>(kept[c]) / class_totals[c] : 0.0;
      if (decided[c] > 0) {
        acc_sum += static_cast<double>(correct[c]) / decided[c];
        ++acc_classes;
      }
    }
    pt.mean_class_accuracy = acc_classes > 0 ? acc_sum / acc_classes : 0.0;
    out.push_back(pt);
  }
  return out;
}

std::vector<double> thresholds_for_retained(std::span<const EvalRecord> records,
                                            std::span<const double> retained_fracs) {
  std::vector<double> unc;
  unc.reserve(records.size());
  for (const auto& r : records) unc.push_back(r.uncertainty);
  std::sort(unc.begin(), unc.end());
  std::vector<double> out;
  for (const double f : retained_fracs) {
    if (unc.empty()) {
      out.push_back(0.0);
      continue;
    }
    if (f >= 1.0) {
      out.push_back(std::nextafter(unc.back(), 1e300) + 1e-12);
      continue;
    }
    const auto idx = static_cast<std::size_t>(
        std::clamp<double>(std::ceil(f * unc.size()), 1.0, double(unc.size())) - 1);
    out.push_back(std::nextafter(unc[idx], 1e300));
  }
  return out;
}

Embedding extract_embedding(const NetworkF& net, std::span<const float> input01) {
  introspection::DropoutMasks<float> off;
  off.active = false;
  std::vector<NetworkF::Vec> trace;
  net.forward_masked(input01, off, &trace);
  // trace holds post-activation outputs of every fc layer
  const auto& second = trace.at(1);
  const double norm = second.template cast<double>().norm();
  if (norm <= 0.0) throw DataError("degenerate embedding: zero activation vector");
  Embedding e;
  e.x = second.template cast<double>() / norm;
  return e;
}

Embedding extract_embedding(const NetworkF& net, const Image& patch) {
  return extract_embedding(net, introspection::image_to_input<float>(patch));
}

std::vector<Embedding> select_failures(std::span<const Embedding> embeddings,
                                       double top_fraction) {
  if (top_fraction <= 0.0 || top_fraction > 1.0)
    throw std::invalid_argument("top_fraction must be in (0, 1]");
  std::vector<Embedding> failures;
  for (const auto& e : embeddings)
    if (e.predicted == OutcomeClass::FP || e.predicted == OutcomeClass::FN)
      failures.push_back(e);
  if (failures.empty()) throw DataError("nothing to cluster: no FP/FN predictions");
  std::sort(failures.begin(), failures.end(), [](const Embedding& a, const Embedding& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    if (a.frame_id != b.frame_id) return a.frame_id < b.frame_id;
    return a.k < b.k;
  });
  const std::size_t keep = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::ceil(top_fraction * failures.size())), 1,
      failures.size());
  failures.resize(keep);
  return failures;
}

int default_pca_target(int d) { return std::max(2, d / 10); }

PcaResult pca_reduce(const Eigen::MatrixXd& X, int target_dim) {
  const Eigen::Index n = X.rows(), d = X.cols();
  if (n < 2) throw std::invalid_argument("PCA needs at least two rows");
  if (target_dim < 1 || target_dim > d)
    throw std::invalid_argument("PCA target dimension out of range");

  PcaResult res;
  res.mean = X.colwise().mean();
  Eigen::MatrixXd centered = X.rowwise() - res.mean.transpose();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered,
                                        Eigen::ComputeThinU | Eigen::ComputeThinV);
  res.components = svd.matrixV().leftCols(target_dim);
  // deterministic sign: largest-magnitude coefficient positive
  for (Eigen::Index j = 0; j < res.components.cols(); ++j) {
    Eigen::Index imax = 0;
    res.components.col(j).cwiseAbs().maxCoeff(&imax);
    if (res.components(imax, j) < 0) res.components.col(j) = -res.components.col(j);
  }
  res.projected = centered * res.components;
  res.explained_variance.resize(target_dim);
  for (int j = 0; j < target_dim; ++j) {
    const double s = svd.singularValues()(j);
    res.explained_variance(j) = s * s / static_cast<double>(n - 1);
  }
  return res;
}

KMeansResult kmeans(const Eigen::MatrixXd& X, int k, std::uint64_t seed, int max_iter) {
  const Eigen::Index n = X.rows();
  if (k < 1) throw std::invalid_argument("k must be positive");
  if (n < k) throw std::invalid_argument("fewer points than clusters");

  Rng rng(derive_seed(seed, 0x6b, 0));
  KMeansResult res;
  res.centroids.resize(k, X.cols());

  // k-means++ seeding
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  const Eigen::Index first = rng.uniform_int(0, static_cast<int>(n) - 1);
  res.centroids.row(0) = X.row(first);
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double dist = (X.row(i) - res.centroids.row(c - 1)).squaredNorm();
      d2[i] = std::min(d2[i], dist);
      total += d2[i];
    }
    Eigen::Index chosen = 0;
    if (total <= 0.0) {
      chosen = rng.uniform_int(0, static_cast<int>(n) - 1);
    } else {
      double target = rng.uniform() * total;
      for (Eigen::Index i = 0; i < n; ++i) {
        target -= d2[i];
        if (target <= 0.0) {
          chosen = i;
          break;
        }
      }
    }
    res.centroids.row(c) = X.row(chosen);
  }

  res.assignment.assign(n, -1);
  for (int iter = 0; iter < max_iter; ++iter) {
    // assignment step
    bool changed = false;
    double obj = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d = (X.row(i) - res.centroids.row(0)).squaredNorm();
      for (int c = 1; c < k; ++c) {
        const double dist = (X.row(i) - res.centroids.row(c)).squaredNorm();
        if (dist < best_d) {
          best_d = dist;
          best = c;
        }
      }
      if (res.assignment[i] != best) {
        res.assignment[i] = best;
        changed = true;
      }
      obj += best_d;
    }
    res.objective_history.push_back(obj);
    res.objective = obj;
    res.iterations = iter + 1;
    if (!changed && iter > 0) break;

    // update step; empty clusters keep their previous centroid
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, X.cols());
    std::vector<int> counts(k, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(res.assignment[i]) += X.row(i);
      ++counts[res.assignment[i]];
    }
    for (int c = 0; c < k; ++c)
      if (counts[c] > 0) res.centroids.row(c) = sums.row(c) / counts[c];
  }
  return res;
}

// --------------------------------------------------------------- exports --

void write_report_json(const EvalReport& report, const std::filesystem::path& path) {
  json j;
  static const char* kNames[4] = {"TP", "FP", "FN", "TN"};
  for (int c = 0; c < 4; ++c) {
    if (report.class_accuracy[c])
      j["class_accuracy"][kNames[c]] = *report.class_accuracy[c];
    else
      j["class_accuracy"][kNames[c]] = nullptr;
  }
  const auto mean = report.mean_class_accuracy();
  j["mean_class_accuracy"] = mean ? json(*mean) : json(nullptr);
  j["abstention_rate"] = report.abstention_rate;
  j["total_records"] = report.total;
  j["abstained"] = report.abstained;
  j["confusion"] = json::array();
  for (int t = 0; t < 4; ++t) {
    json row = json::array();
    for (int p = 0; p < 4; ++p) row.push_back(report.confusion[t][p]);
    j["confusion"].push_back(row);
  }
  atomic_write_text(path, j.dump(2) + "\n");
}

void write_sweep_csv(std::span<const SweepPoint> sweep,
                     const std::filesystem::path& path) {
  std::ostringstream out;
  out << "threshold,retained,retained_tp,retained_fp,retained_fn,retained_tn,"
         "accuracy\n";
  char line[200];
  for (const auto& pt : sweep) {
    std::snprintf(line, sizeof line, "%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                  pt.threshold, pt.retained, pt.retained_per_class[0],
                  pt.retained_per_class[1], pt.retained_per_class[2],
                  pt.retained_per_class[3], pt.mean_class_accuracy);
    out << line;
  }
  atomic_write_text(path, out.str());
}

void write_clusters_csv(std::span<const ClusterRow> rows,
                        const std::filesystem::path& path) {
  std::ostringstream out;
  out << "frame_id,k,cluster,viz_x,viz_y\n";
  char line[120];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%d,%d,%d,%.9g,%.9g\n", r.frame_id, r.k,
                  r.cluster, r.viz_x, r.viz_y);
    out << line;
  }
  atomic_write_text(path, out.str());
}

}  // namespace ivoa::analysis
