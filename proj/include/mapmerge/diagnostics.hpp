#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace mapmerge {

// One row of the self-timing report. Stage names are free-form; the standard
// merge run emits "Voxel sampl.", "Desc. ext.", "Optim.", "Loop search",
// "PGO" in that order, and render_timing_table appends the "Total" row.
struct StageTiming {
  std::string stage;
  double seconds = 0.0;
  std::size_t items = 0;  // points, correspondences, or loops; 0 = untracked
};

// Wall-clock scope timer: accumulates elapsed seconds into the bound slot.
class StageStopwatch {
 public:
  explicit StageStopwatch(double& sink);
  ~StageStopwatch();
  StageStopwatch(const StageStopwatch&) = delete;
  StageStopwatch& operator=(const StageStopwatch&) = delete;

 private:
  double& sink_;
  double start_;
};

double now_seconds();

// Fixed-width text table of the given stages plus a Total row (sum of stage
// times, or total_seconds when a nonzero enclosing measurement is supplied).
// Header-only rows for an empty run.
std::string render_timing_table(const std::vector<StageTiming>& stages,
                                double total_seconds = 0.0);

}  // namespace mapmerge
