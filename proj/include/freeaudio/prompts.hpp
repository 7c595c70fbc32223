#pragma once

// Versioned prompt assets for the chat-completion planner. Placeholders in
// {braces} are substituted by render_prompt.

#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace freeaudio::prompts {

inline constexpr std::string_view kVersion = "freeaudio-prompts/1";

inline constexpr std::string_view kPlannerSystem = R"(You are an audio scene planner for a text-to-audio generator.
You receive a global caption describing a whole clip and a list of
time windows. The windows are already fixed, sorted and non-overlapping;
some of them already carry sound events and some are empty.
Work through the task in two steps.
Step 1 (window planning): decide which sound events from the global
caption are not yet placed in any window, and distribute them into the
empty windows. Fill uncovered windows first. Only use events that the
global caption mentions; never invent new sound sources.
Step 2 (recaption): write one short natural sentence per window that
describes the events in that window the way a sound-effects caption
would, without timestamps.)";

inline constexpr std::string_view kGapUser = R"(Global caption: {caption}
Clip length: {total} seconds
Windows (index: start-end: events):
{windows}
Return only JSON of the form
{"assignments": [{"window": <index>, "events": ["<event>", ...]}]}
listing empty windows only.)";

inline constexpr std::string_view kRecaptionSystem = R"(You rewrite lists of sound events into one natural caption for a
text-to-audio generator. Keep every listed event, describe how the events
relate (simultaneous, in the background, alternating), and match the
style of short sound-effects captions. Do not mention times, durations,
or numbers. Answer with the caption sentence only.)";

inline constexpr std::string_view kRecaptionUser = R"(Global caption: {caption}
Events in this window: {events}
Caption:)";

inline std::string render_prompt(std::string_view tmpl,
                                 const std::vector<std::pair<std::string, std::string>>& values) {
  std::string out(tmpl);
  for (const auto& [key, value] : values) {
    const std::string token = "{" + key + "}";
    for (std::size_t pos = out.find(token); pos != std::string::npos; pos = out.find(token, pos + value.size())) {
      out.replace(pos, token.size(), value);
    }
  }
  return out;
}

}  // namespace freeaudio::prompts
