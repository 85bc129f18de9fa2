#pragma once

#include <Eigen/Dense>
#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "ivoa/introspection.hpp"
#include "ivoa/labelgen.hpp"
#include "ivoa/nn.hpp"

namespace ivoa::analysis {

using introspection::NetworkF;
using labelgen::OutcomeClass;

struct EvalRecord {
  OutcomeClass truth = OutcomeClass::TN;
  std::optional<OutcomeClass> predicted;  // nullopt = abstained
  double uncertainty = 0.0;
  double confidence = 0.0;  // max mean probability
  int frame_id = 0;
  int k = 0;
  double x = 0.0, y = 0.0;  // query point
};

struct EvalReport {
  std::array<std::optional<double>, 4> class_accuracy;  // n/a when unset
  std::array<std::array<int, 4>, 4> confusion{};        // [truth][predicted]
  double abstention_rate = 0.0;
  int total = 0;
  int abstained = 0;

  // mean of the defined per-class accuracies
  std::optional<double> mean_class_accuracy() const;
};

EvalReport evaluate(std::span<const EvalRecord> records);

struct SweepPoint {
  double threshold = 0.0;
  double retained = 0.0;                          // overall fraction
  std::array<double, 4> retained_per_class{0, 0, 0, 0};
  double mean_class_accuracy = 0.0;  // classes without retained records excluded
};

// pre: thresholds ascending; retains records with uncertainty < threshold
std::vector<SweepPoint> uncertainty_sweep(std::span<const EvalRecord> records,
                                          std::span<const double> thresholds);

// thresholds hitting the requested overall retained fractions (computed from
// the record uncertainties' quantiles)
std::vector<double> thresholds_for_retained(std::span<const EvalRecord> records,
                                            std::span<const double> retained_fracs);

struct Embedding {
  Eigen::VectorXd x;  // unit Euclidean norm
  int frame_id = 0;
  int k = 0;
  OutcomeClass predicted = OutcomeClass::TN;
  double confidence = 0.0;
};

// Normalized output of the second fully connected layer, dropout disabled.
// Throws DataError on an all-zero activation vector.
Embedding extract_embedding(const NetworkF& net, const Image& patch);
Embedding extract_embedding(const NetworkF& net, std::span<const float> input01);

// Keeps predicted FP/FN entries, sorts by confidence descending (ties by
// frame_id then k), returns the top ceil(fraction * n), at least one.
// Throws DataError when nothing is predicted FP/FN.
std::vector<Embedding> select_failures(std::span<const Embedding> embeddings,
                                       double top_fraction = 0.5);

struct PcaResult {
  Eigen::MatrixXd projected;           // n x target_dim
  Eigen::MatrixXd components;          // d x target_dim, orthonormal columns
  Eigen::VectorXd explained_variance;  // descending
  Eigen::VectorXd mean;                // column mean of the input
};

int default_pca_target(int d);  // max(2, d / 10)
PcaResult pca_reduce(const Eigen::MatrixXd& X, int target_dim);

struct KMeansResult {
  std::vector<int> assignment;
  Eigen::MatrixXd centroids;  // k x d
  double objective = 0.0;     // sum of squared distances
  std::vector<double> objective_history;  // per assignment step
  int iterations = 0;
};

// k-means++ seeding, Lloyd iterations to an assignment fixpoint.
KMeansResult kmeans(const Eigen::MatrixXd& X, int k, std::uint64_t seed,
                    int max_iter = 100);

// --- exports ---

void write_report_json(const EvalReport& report, const std::filesystem::path& path);
void write_sweep_csv(std::span<const SweepPoint> sweep, const std::filesystem::path& path);

struct ClusterRow {
  int frame_id = 0;
  int k = 0;
  int cluster = 0;
  double viz_x = 0.0, viz_y = 0.0;  // 2-D PCA coordinates
};
void write_clusters_csv(std::span<const ClusterRow> rows,
                        const std::filesystem::path& path);

}  // namespace ivoa::analysis
