// Turns a caption and loosely formatted timing prompts into timing windows.
//
//   demo_plan_windows "<caption>" "<timing prompts>" [seconds]

#include <iomanip>
#include <iostream>

#include "freeaudio/timing_plan.hpp"

int main(int argc, char** argv) {
  using namespace freeaudio;
  const std::string caption = argc > 1 ? argv[1] : "A man is cooking while dog bakring && water runs";
  const std::string timing =
      argc > 2 ? argv[2] : "Frying. <0.0,8.0>, Dog bakring. 0s-4s., Running water. <4.0,8.0>, Alarm ringing. From 8 to 10.";
  const double seconds = argc > 3 ? std::stod(argv[3]) : 10.0;
  try {
    const auto plan = make_plan(caption, timing, seconds);
    std::cout << std::fixed << std::setprecision(2);
    for (const auto& w : plan.windows) {
      std::cout << "[" << w.start_s << ", " << w.end_s << ")  " << w.recaption << "\n";
    }
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
}
