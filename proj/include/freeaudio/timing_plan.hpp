#pragma once

// Timing prompts -> non-overlapping window plan.
//
// parse_prompts tolerates the loose interval syntaxes people actually type;
// build_boundaries / assign_window_events / fill_gaps turn the intervals into
// abutting windows; recaption_window turns each window's event list into one
// caption. make_plan strings the steps together.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <functional>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "freeaudio/errors.hpp"

namespace freeaudio {

inline constexpr double kTimeMergeTolerance = 1e-6;

struct TimingPrompt {
  std::string caption;
  double start_s = 0.0;
  double end_s = 0.0;

  bool operator==(const TimingPrompt&) const = default;
};

struct PlanWindow {
  double start_s = 0.0;
  double end_s = 0.0;
  std::vector<std::string> events;
  std::string recaption;

  double duration() const { return end_s - start_s; }
  bool operator==(const PlanWindow&) const = default;
};

struct WindowPlan {
  double total_s = 0.0;
  std::string global_caption;
  std::vector<PlanWindow> windows;

  std::size_t k() const { return windows.size(); }

  // Partition check: starts at 0, ends at total_s, consecutive windows abut.
  void validate() const {
    if (!(total_s > 0.0)) throw RangeError("plan: total duration must be positive");
    if (windows.empty()) throw RangeError("plan: no windows");
    if (windows.front().start_s != 0.0) throw RangeError("plan: first window must start at 0");
    if (windows.back().end_s != total_s) throw RangeError("plan: last window must end at total");
    for (std::size_t j = 0; j < windows.size(); ++j) {
      if (!(windows[j].start_s < windows[j].end_s)) throw RangeError("plan: empty window");
      if (j > 0 && windows[j].start_s != windows[j - 1].end_s) {
        throw RangeError("plan: windows do not abut");
      }
    }
  }

  bool operator==(const WindowPlan&) const = default;
};

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline bool is_caption_noise(char c) {
  return std::isspace(static_cast<unsigned char>(c)) || c == '.' || c == ',' || c == ';' ||
         c == ':' || c == '!' || c == '?';
}

inline std::string strip_caption(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_caption_noise(s[b])) ++b;
  while (e > b && is_caption_noise(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = char(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline void replace_all(std::string& s, std::string_view from, std::string_view to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos;
       pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
}

// Splits on newlines and on commas that are not inside <...>.
inline std::vector<std::string> split_entries(std::string_view raw) {
  std::vector<std::string> out;
  std::string cur;
  int depth = 0;
  for (char c : raw) {
    if (c == '<') ++depth;
    if (c == '>' && depth > 0) --depth;
    if (c == '\n' || c == '\r' || (c == ',' && depth == 0)) {
      if (!trim(cur).empty()) out.push_back(trim(cur));
      cur.clear();
      continue;
    }
    cur.push_back(c);
  }
  if (!trim(cur).empty()) out.push_back(trim(cur));
  return out;
}

inline const std::vector<std::regex>& interval_patterns() {
  static const std::vector<std::regex> patterns = [] {
    const std::string num = R"((\d+(?:\.\d+)?|\.\d+))";
    const std::string unit = R"((?:\s*(?:seconds|second|secs|sec|s)\b)?)";
    const auto flags = std::regex::ECMAScript | std::regex::icase;
    return std::vector<std::regex>{
        std::regex("<\\s*" + num + "\\s*,\\s*" + num + "\\s*>", flags),
        std::regex("\\bfrom\\s+" + num + unit + "\\s+to\\s+" + num + unit, flags),
        std::regex(num + unit + "\\s*~\\s*" + num + unit, flags),
        std::regex(num + unit + "\\s*-\\s*" + num + unit, flags),
    };
  }();
  return patterns;
}

}  // namespace detail

// Recognized interval forms: "<a,b>", "a s - b s", "From a to b",
// "a ~ b sec", "a-b". The caption is whatever is left of the entry.
inline std::vector<TimingPrompt> parse_prompts(std::string_view raw) {
  std::string text(raw);
  // Typographic tildes and dashes seen in pasted prompts.
  detail::replace_all(text, "\xE2\x88\xBC", "~");  // U+223C
  detail::replace_all(text, "\xEF\xBD\x9E", "~");  // U+FF5E
  detail::replace_all(text, "\xE2\x80\x93", "-");  // U+2013
  detail::replace_all(text, "$\\sim$", "~");
  std::vector<TimingPrompt> out;
  if (detail::trim(text).empty()) return out;
  for (const std::string& entry : detail::split_entries(text)) {
    std::smatch m;
    bool found = false;
    for (const auto& re : detail::interval_patterns()) {
      if (std::regex_search(entry, m, re)) {
        found = true;
        break;
      }
    }
    if (!found) throw ParseError("no recognizable interval in entry: \"" + entry + "\"");
    if (std::regex_search(m.suffix().first, entry.cend(), detail::interval_patterns().front())) {
      throw ParseError("more than one interval in entry (separate entries with commas or newlines): \"" +
                       entry + "\"");
    }
    TimingPrompt p;
    p.start_s = std::stod(m[1].str());
    p.end_s = std::stod(m[2].str());
    const std::string before = detail::strip_caption(m.prefix().str());
    const std::string after = detail::strip_caption(m.suffix().str());
    p.caption = before.empty() ? after : (after.empty() ? before : before + " " + after);
    if (p.caption.empty()) throw ParseError("entry has an interval but no caption: \"" + entry + "\"");
    if (!(p.start_s < p.end_s)) {
      throw RangeError("interval start must precede end in entry: \"" + entry + "\"");
    }
    out.push_back(std::move(p));
  }
  return out;
}

// Sorted unique boundaries: 0, every start/end, total_s. Timestamps closer
// than kTimeMergeTolerance collapse onto the earlier one (0 and total_s win).
inline std::vector<double> build_boundaries(const std::vector<TimingPrompt>& prompts,
                                            double total_s) {
  if (!(total_s > 0.0)) throw RangeError("total duration must be positive");
  std::vector<double> inner;
  for (const auto& p : prompts) {
    if (p.start_s < -kTimeMergeTolerance || p.end_s > total_s + kTimeMergeTolerance) {
      throw RangeError("timing prompt \"" + p.caption + "\" lies outside [0, total]");
    }
    inner.push_back(p.start_s);
    inner.push_back(p.end_s);
  }
  std::sort(inner.begin(), inner.end());
  std::vector<double> out{0.0};
  for (double t : inner) {
    if (t - out.back() > kTimeMergeTolerance && total_s - t > kTimeMergeTolerance) {
      out.push_back(t);
    }
  }
  out.push_back(total_s);
  return out;
}

// Window j receives every prompt whose interval encloses it, in input order.
inline std::vector<PlanWindow> assign_window_events(const std::vector<double>& boundaries,
                                                    const std::vector<TimingPrompt>& prompts) {
  std::vector<PlanWindow> out;
  for (std::size_t j = 0; j + 1 < boundaries.size(); ++j) {
    PlanWindow w;
    w.start_s = boundaries[j];
    w.end_s = boundaries[j + 1];
    for (const auto& p : prompts) {
      if (p.start_s <= w.start_s + kTimeMergeTolerance && p.end_s >= w.end_s - kTimeMergeTolerance) {
        w.events.push_back(p.caption);
      }
    }
    out.push_back(std::move(w));
  }
  return out;
}

// Event lists for windows that had none, keyed by window index.
using GapAssignments = std::vector<std::pair<std::size_t, std::vector<std::string>>>;
using GapFiller = std::function<GapAssignments(const WindowPlan&)>;

// Clauses of the global caption, split on commas, semicolons, '&' and the
// connectives "and" / "with" / "while".
inline std::vector<std::string> caption_clauses(std::string_view caption) {
  static const std::regex sep(R"(\s*(?:[,;&]+|\b(?:and|with|while)\b)\s*)",
                              std::regex::ECMAScript | std::regex::icase);
  std::vector<std::string> out;
  const std::string text(caption);
  for (std::sregex_token_iterator it(text.begin(), text.end(), sep, -1), end; it != end; ++it) {
    std::string piece = detail::strip_caption(it->str());
    if (!piece.empty()) out.push_back(std::move(piece));
  }
  return out;
}

// Clauses of y^c that no timing prompt already accounts for
// (case-insensitive substring match in either direction).
inline std::vector<std::string> residual_events(const WindowPlan& plan) {
  std::vector<std::string> used;
  for (const auto& w : plan.windows) {
    for (const auto& e : w.events) used.push_back(detail::lower(e));
  }
  std::vector<std::string> out;
  for (const auto& clause : caption_clauses(plan.global_caption)) {
    const std::string lc = detail::lower(clause);
    const bool consumed = std::any_of(used.begin(), used.end(), [&](const std::string& u) {
      return !u.empty() && (lc.find(u) != std::string::npos || u.find(lc) != std::string::npos);
    });
    if (!consumed) out.push_back(clause);
  }
  return out;
}

// Every empty window gets all residual clauses; with none left, the global
// caption itself.
inline GapAssignments deterministic_gap_fill(const WindowPlan& plan) {
  GapAssignments out;
  const auto residual = residual_events(plan);
  for (std::size_t j = 0; j < plan.windows.size(); ++j) {
    if (!plan.windows[j].events.empty()) continue;
    if (!residual.empty()) {
      out.emplace_back(j, residual);
    } else {
      out.emplace_back(j, std::vector<std::string>{plan.global_caption});
    }
  }
  return out;
}

// Applies the filler's assignments to empty windows only. Anything still
// empty afterwards falls back to the deterministic rule, so the result never
// has an empty event list.
inline WindowPlan fill_gaps(WindowPlan plan, const GapFiller& filler = deterministic_gap_fill) {
  const bool any_empty = std::any_of(plan.windows.begin(), plan.windows.end(),
                                     [](const PlanWindow& w) { return w.events.empty(); });
  if (!any_empty) return plan;
  GapAssignments assignments = filler ? filler(plan) : deterministic_gap_fill(plan);
  for (auto& [j, events] : assignments) {
    if (j < plan.windows.size() && plan.windows[j].events.empty() && !events.empty()) {
      plan.windows[j].events = events;
    }
  }
  for (auto& [j, events] : deterministic_gap_fill(plan)) plan.windows[j].events = events;
  return plan;
}

// "E1", "E1 while E2", "E1 while E2 and E3", ...
inline std::string template_recaption(const std::vector<std::string>& events) {
  std::string out;
  for (std::size_t i = 0; i < events.size(); ++i) {
    if (i == 1) out += " while ";
    if (i > 1) out += " and ";
    out += events[i];
  }
  return out;
}

enum class RecaptionMode { templated, llm };

// Returns nullopt when it cannot produce a usable caption.
using Recaptioner =
    std::function<std::optional<std::string>(const PlanWindow&, std::string_view global_caption)>;

inline PlanWindow recaption_window(PlanWindow window, std::string_view global_caption,
                                   RecaptionMode mode, const Recaptioner& llm = {}) {
  if (mode == RecaptionMode::llm && llm) {
    if (auto text = llm(window, global_caption); text && !detail::trim(*text).empty()) {
      window.recaption = detail::trim(*text);
      return window;
    }
  }
  window.recaption = template_recaption(window.events);
  if (window.recaption.empty()) window.recaption = std::string(global_caption);
  return window;
}

struct PlanOptions {
  RecaptionMode mode = RecaptionMode::templated;
  GapFiller gap_filler;     // empty => deterministic
  Recaptioner recaptioner;  // used in llm mode
};

inline WindowPlan make_plan(std::string_view global_caption, std::string_view raw_timing,
                            double total_s, const PlanOptions& options = {}) {
  const std::string caption = detail::trim(global_caption);
  if (caption.empty()) throw ParseError("global caption is empty");
  const auto prompts = parse_prompts(raw_timing);
  WindowPlan plan;
  plan.total_s = total_s;
  plan.global_caption = caption;
  plan.windows = assign_window_events(build_boundaries(prompts, total_s), prompts);
  // Without timing prompts the whole clip is one window described by y^c.
  if (prompts.empty()) plan.windows.front().events = {caption};
  if (options.gap_filler) {
    plan = fill_gaps(std::move(plan), options.gap_filler);
  } else {
    plan = fill_gaps(std::move(plan));
  }
  for (auto& w : plan.windows) {
    w = recaption_window(std::move(w), plan.global_caption, options.mode, options.recaptioner);
  }
  plan.validate();
  return plan;
}

// ---- plan file -------------------------------------------------------------

inline nlohmann::ordered_json plan_to_json(const WindowPlan& plan) {
  nlohmann::ordered_json j;
  j["format"] = "freeaudio-plan/1";
  j["total_s"] = plan.total_s;
  j["global_caption"] = plan.global_caption;
  j["windows"] = nlohmann::ordered_json::array();
  for (const auto& w : plan.windows) {
    nlohmann::ordered_json jw;
    jw["start"] = w.start_s;
    jw["end"] = w.end_s;
    jw["events"] = w.events;
    jw["recaption"] = w.recaption;
    j["windows"].push_back(std::move(jw));
  }
  return j;
}

inline WindowPlan plan_from_json(const nlohmann::ordered_json& j) {
  try {
    if (j.at("format").get<std::string>() != "freeaudio-plan/1") {
      throw FormatError("plan file: unsupported format tag");
    }
    WindowPlan plan;
    plan.total_s = j.at("total_s").get<double>();
    plan.global_caption = j.at("global_caption").get<std::string>();
    for (const auto& jw : j.at("windows")) {
      PlanWindow w;
      w.start_s = jw.at("start").get<double>();
      w.end_s = jw.at("end").get<double>();
      w.events = jw.at("events").get<std::vector<std::string>>();
      w.recaption = jw.at("recaption").get<std::string>();
      if (detail::trim(w.recaption).empty()) throw FormatError("plan file: empty recaption");
      plan.windows.push_back(std::move(w));
    }
    plan.validate();
    return plan;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("plan file: ") + e.what());
  } catch (const RangeError& e) {
    throw FormatError(std::string("plan file: ") + e.what());
  }
}

inline std::string format_plan(const WindowPlan& plan) { return plan_to_json(plan).dump(2) + "\n"; }

inline WindowPlan parse_plan(std::string_view text) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("plan file: ") + e.what());
  }
  return plan_from_json(j);
}

inline void write_plan(const std::string& path, const WindowPlan& plan) {
  std::ofstream f(path);
  if (!f) throw FormatError("cannot open " + path + " for writing");
  f << format_plan(plan);
}

inline WindowPlan read_plan(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("cannot open plan file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_plan(ss.str());
}

}  // namespace freeaudio
