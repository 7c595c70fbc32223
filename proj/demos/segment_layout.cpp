// Prints how a long clip is split into overlapping model-length segments
// and which frames of each segment survive the final concatenation.
//
//   demo_segment_layout [seconds] [overlap_seconds]

#include <iomanip>
#include <iostream>

#include "freeaudio/longform.hpp"

int main(int argc, char** argv) {
  using namespace freeaudio;
  WindowPlan plan;
  plan.total_s = argc > 1 ? std::stod(argv[1]) : 45.0;
  plan.global_caption = "crickets chirping";
  plan.windows = {{0.0, plan.total_s, {"crickets chirping"}, "crickets chirping"}};
  const double overlap = argc > 2 ? std::stod(argv[2]) : 2.0;
  try {
    const auto L = plan_segments(plan, 10.0, overlap, 25.0);
    std::cout << L.size() << " segments, " << L.total_frames << " frames\n" << std::fixed << std::setprecision(2);
    for (std::size_t s = 0; s < L.size(); ++s) {
      const auto& seg = L.segments[s];
      std::cout << "segment " << s << ": " << seg.start_s << "-" << seg.end_s << " s, keeps frames "
                << L.own_begin(s) << "-" << L.own_end(s) << "\n";
    }
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
}
