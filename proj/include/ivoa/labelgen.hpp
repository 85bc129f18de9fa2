#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ivoa/geometry.hpp"
#include "ivoa/image.hpp"
#include "ivoa/monitor.hpp"
#include "ivoa/perception.hpp"
#include "ivoa/worldsim.hpp"

namespace ivoa::labelgen {

using geometry::StereoRig;
using geometry::Vec3;
using perception::BackendKind;
using perception::MatcherParams;

// Order doubles as the deterministic tie-break order for argmax decisions.
enum class OutcomeClass { TP = 0, FP = 1, FN = 2, TN = 3 };

const char* to_string(OutcomeClass c);
OutcomeClass outcome_from_string(const std::string& s);

// Truth table over (monitor says free, stereo says free).
OutcomeClass classify_outcome(bool o_m, bool o_s);

// size x size window centered on pixel (u, v), shifted inward at the image
// border so the window stays inside; (u, v) itself must be a valid pixel.
Image extract_patch(const Image& image, int u, int v, int size = 100);

struct LabeledPatch {
  Image patch;          // size x size crop of the left image
  int u = 0, v = 0;     // pixel the query point projects to
  Vec3 query;           // ground point, robot frame
  OutcomeClass label = OutcomeClass::TN;
  bool o_m = true, o_s = true;
  int frame_id = 0;
  int k = 0;            // lattice index (stable across backends)
  BackendKind backend = BackendKind::SparseConvex;
};

enum class SkipReason { OutOfView, NotObservable };

struct SkipRecord {
  int frame_id = 0;
  int k = 0;
  SkipReason reason = SkipReason::OutOfView;
};

struct LabelResult {
  std::vector<LabeledPatch> patches;  // lattice order
  std::vector<SkipRecord> skips;
};

// Algorithm: for every lattice point, query the stereo backend and the depth
// monitor, project to the left image, cut the patch, classify the pair.
// Points outside the stereo field of view or not observable by the monitor
// are skipped with a reason. Deterministic row-major lattice order.
LabelResult generate_labels(const worldsim::Frame& frame, const StereoRig& rig,
                            const monitor::GridSpec& grid, BackendKind kind,
                            const MatcherParams& params, int jobs = 1);

// --- dataset on disk ---
// <root>/patches/<frame>_<k>.pgm and <root>/labels.csv with columns
// frame_id,k,u,v,x,y,o_m,o_s,label,backend. A dataset.json manifest is
// written by the pipeline next to them.

std::string patch_filename(int frame_id, int k);

void write_dataset_frames(const std::filesystem::path& root,
                          const std::vector<LabelResult>& frames_in_order);

struct DatasetRecord {
  int frame_id = 0;
  int k = 0;
  int u = 0, v = 0;
  double x = 0, y = 0;
  bool o_m = true, o_s = true;
  OutcomeClass label = OutcomeClass::TN;
  BackendKind backend = BackendKind::SparseConvex;
};

struct Dataset {
  std::filesystem::path root;
  std::vector<DatasetRecord> records;

  Image load_patch(const DatasetRecord& r) const;
  std::array<int, 4> class_counts() const;
};

Dataset read_dataset(const std::filesystem::path& root);

}  // namespace ivoa::labelgen
