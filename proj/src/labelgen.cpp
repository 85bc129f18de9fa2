#include "ivoa/labelgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "ivoa/common.hpp"
#include "ivoa/parallel.hpp"

namespace ivoa::labelgen {

const char* to_string(OutcomeClass c) {
  switch (c) {
    case OutcomeClass::TP: return "TP";
    case OutcomeClass::FP: return "FP";
    case OutcomeClass::FN: return "FN";
    case OutcomeClass::TN: return "TN";
  }
  return "?";
}

OutcomeClass outcome_from_string(const std::string& s) {
  if (s == "TP") return OutcomeClass::TP;
  if (s == "FP") return OutcomeClass::FP;
  if (s == "FN") return OutcomeClass::FN;
  if (s == "TN") return OutcomeClass::TN;
  throw DataError("unknown outcome class: " + s);
}

OutcomeClass classify_outcome(bool o_m, bool o_s) {
  if (o_m && o_s) return OutcomeClass::TN;
  if (o_m && !o_s) return OutcomeClass::FP;
  if (!o_m && o_s) return OutcomeClass::FN;
  return OutcomeClass::TP;
}

Image extract_patch(const Image& image, int u, int v, int size) {
  if (size < 1) throw std::invalid_argument("patch size must be positive");
  if (!image.in_bounds(u, v))
    throw std::invalid_argument("patch center outside the image");
  if (image.width() < size || image.height() < size)
    throw std::invalid_argument("image smaller than the patch size");
  const int u0 = std::clamp(u - size / 2, 0, image.width() - size);
  const int v0 = std::clamp(v - size / 2, 0, image.height() - size);
  Image patch(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      patch.at(x, y) = image.at(u0 + x, v0 + y);
  return patch;
}

LabelResult generate_labels(const worldsim::Frame& frame, const StereoRig& rig,
                            const monitor::GridSpec& grid, BackendKind kind,
                            const MatcherParams& params, int jobs) {
  grid.validate();
  params.validate();
  const monitor::DepthMonitor mon(frame.depth, rig, params.band, params.half_window());
  const auto checker =
      perception::make_checker(kind, frame.left, frame.right, rig, params);

  struct Slot {
    std::optional<LabeledPatch> patch;
    std::optional<SkipRecord> skip;
  };
  std::vector<Slot> slots(static_cast<std::size_t>(grid.size()));

  parallel_for(slots.size(), jobs, [&](std::size_t idx) {
    const int k = static_cast<int>(idx);
    const Vec3 p = grid.point(k);
    Slot& slot = slots[idx];
    if (!perception::query_in_view(rig, p, grid.safety_radius, params)) {
      slot.skip = SkipRecord{frame.frame_id, k, SkipReason::OutOfView};
      return;
    }
    const auto o_m = mon.is_obstacle_free(p, grid.safety_radius);
    if (!o_m) {
      slot.skip = SkipRecord{frame.frame_id, k, SkipReason::NotObservable};
      return;
    }
    const auto o_s = checker->is_obstacle_free(p, grid.safety_radius);
    if (!o_s) {
      slot.skip = SkipRecord{frame.frame_id, k, SkipReason::OutOfView};
      return;
    }
    const auto px = geometry::robot_to_left_pixel(p, rig);
    if (!px) {
      slot.skip = SkipRecord{frame.frame_id, k, SkipReason::OutOfView};
      return;
    }
    LabeledPatch lp;
    lp.u = static_cast<int>(px->u);
    lp.v = static_cast<int>(px->v);
    lp.patch = extract_patch(frame.left, lp.u, lp.v);
    lp.query = p;
    lp.o_m = *o_m;
    lp.o_s = *o_s;
    lp.label = classify_outcome(*o_m, *o_s);
    lp.frame_id = frame.frame_id;
    lp.k = k;
    lp.backend = kind;
    slot.patch = std::move(lp);
  });

  LabelResult out;
  for (auto& slot : slots) {
    if (slot.patch) out.patches.push_back(std::move(*slot.patch));
    if (slot.skip) out.skips.push_back(*slot.skip);
  }
  return out;
}

std::string patch_filename(int frame_id, int k) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%06d_%05d.pgm", frame_id, k);
  return buf;
}

void write_dataset_frames(const std::filesystem::path& root,
                          const std::vector<LabelResult>& frames_in_order) {
  std::filesystem::create_directories(root / "patches");
  std::ostringstream csv;
  csv << "frame_id,k,u,v,x,y,o_m,o_s,label,backend\n";
  char line[160];
  for (const auto& frame : frames_in_order) {
    for (const auto& lp : frame.patches) {
      Image q = lp.patch;
      q.quantize_u8();
      write_pgm(q, root / "patches" / patch_filename(lp.frame_id, lp.k));
      std::snprintf(line, sizeof line, "%d,%d,%d,%d,%.6f,%.6f,%d,%d,%s,%s\n",
                    lp.frame_id, lp.k, lp.u, lp.v, lp.query.x(), lp.query.y(),
                    lp.o_m ? 1 : 0, lp.o_s ? 1 : 0, to_string(lp.label),
                    perception::to_string(lp.backend));
      csv << line;
    }
  }
  atomic_write_text(root / "labels.csv", csv.str());
}

Image Dataset::load_patch(const DatasetRecord& r) const {
  return read_pgm(root / "patches" / patch_filename(r.frame_id, r.k));
}

std::array<int, 4> Dataset::class_counts() const {
  std::array<int, 4> counts{0, 0, 0, 0};
  for (const auto& r : records) ++counts[static_cast<int>(r.label)];
  return counts;
}

Dataset read_dataset(const std::filesystem::path& root) {
  const auto csv_path = root / "labels.csv";
  std::ifstream in(csv_path);
  if (!in) throw DataError("missing labels file: " + csv_path.string());
  Dataset ds;
  ds.root = root;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string field;
    auto next = [&]() -> std::string {
      if (!std::getline(ls, field, ','))
        throw DataError("malformed labels row in " + csv_path.string());
      return field;
    };
    DatasetRecord r;
    r.frame_id = std::stoi(next());
    r.k = std::stoi(next());
    r.u = std::stoi(next());
    r.v = std::stoi(next());
    r.x = std::stod(next());
    r.y = std::stod(next());
    r.o_m = next() == "1";
    r.o_s = next() == "1";
    r.label = outcome_from_string(next());
    r.backend = perception::backend_from_string(next());
    ds.records.push_back(r);
  }
  return ds;
}

}  // namespace ivoa::labelgen
