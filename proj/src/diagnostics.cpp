#include "mapmerge/diagnostics.hpp"

#include <chrono>
#include <iomanip>
#include <sstream>

namespace mapmerge {

double now_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

StageStopwatch::StageStopwatch(double& sink)
    : sink_(sink), start_(now_seconds()) {}

StageStopwatch::~StageStopwatch() { sink_ += now_seconds() - start_; }

std::string render_timing_table(const std::vector<StageTiming>& stages,
                                double total_seconds) {
  constexpr int kStageWidth = 16;
  constexpr int kTimeWidth = 12;
  constexpr int kItemsWidth = 12;
  const std::string rule(kStageWidth + kTimeWidth + kItemsWidth, '-');

  std::ostringstream out;
  out << std::left << std::setw(kStageWidth) << "Stage" << std::right
      << std::setw(kTimeWidth) << "Time [s]" << std::setw(kItemsWidth)
      << "Items" << '\n'
      << rule << '\n';
  if (stages.empty()) return out.str();

  out << std::fixed << std::setprecision(3);
  double sum = 0.0;
  for (const StageTiming& stage : stages) {
    sum += stage.seconds;
    out << std::left << std::setw(kStageWidth) << stage.stage << std::right
        << std::setw(kTimeWidth) << stage.seconds;
    if (stage.items > 0) {
      out << std::setw(kItemsWidth) << stage.items;
    }
    out << '\n';
  }
  out << rule << '\n'
      << std::left << std::setw(kStageWidth) << "Total" << std::right
      << std::setw(kTimeWidth)
      << (total_seconds > 0.0 ? total_seconds : sum) << '\n';
  return out.str();
}

}  // namespace mapmerge
