#pragma once

// Chat-completion client used for window recaptioning and gap planning.
// Responses are untrusted: every answer is validated, retried, and replaced
// by the deterministic planner output when it does not pass.

#include <cstdlib>
#include <functional>
#include <memory>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "freeaudio/errors.hpp"
#include "freeaudio/prompts.hpp"
#include "freeaudio/timing_plan.hpp"

namespace freeaudio {

struct LlmConfig {
  std::string base_url = "http://127.0.0.1:8080";
  std::string model = "gpt-4o";
  std::string api_key_env = "FREEAUDIO_LLM_API_KEY";
  double timeout_s = 30.0;
  std::size_t max_retries = 2;
  bool fallback = true;

  void validate() const {
    if (!(timeout_s > 0.0)) throw RangeError("llm: timeout must be positive");
    if (base_url.empty()) throw RangeError("llm: base_url is empty");
  }
};

struct HttpResponse {
  int status = 0;
  std::string body;
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResponse post(const std::string& path, const std::string& body,
                            const std::vector<std::pair<std::string, std::string>>& headers) = 0;
  std::size_t calls() const { return calls_; }

 protected:
  std::size_t calls_ = 0;
};

class HttpTransport : public Transport {
 public:
  HttpTransport(std::string base_url, double timeout_s) : base_url_(std::move(base_url)), timeout_s_(timeout_s) {}

  HttpResponse post(const std::string& path, const std::string& body,
                    const std::vector<std::pair<std::string, std::string>>& headers) override {
    ++calls_;
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
    if (base_url_.rfind("https://", 0) == 0) {
      throw TransportError("https endpoints need a build with FREEAUDIO_TLS=ON");
    }
#endif
    httplib::Client cli(base_url_);
    const auto sec = std::chrono::duration<double>(timeout_s_);
    cli.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(sec));
    cli.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(sec));
    cli.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(sec));
    httplib::Headers h;
    for (const auto& [k, v] : headers) h.emplace(k, v);
    auto res = cli.Post(path, h, body, "application/json");
    if (!res) throw TransportError("llm: request to " + base_url_ + path + " failed: " + httplib::to_string(res.error()));
    return {res->status, res->body};
  }

 private:
  std::string base_url_;
  double timeout_s_;
};

// Answers every request through a user function; counts calls.
class MockTransport : public Transport {
 public:
  using Handler = std::function<HttpResponse(const nlohmann::json& request)>;
  explicit MockTransport(Handler h) : handler_(std::move(h)) {}

  HttpResponse post(const std::string&, const std::string& body,
                    const std::vector<std::pair<std::string, std::string>>&) override {
    ++calls_;
    return handler_(nlohmann::json::parse(body));
  }

 private:
  Handler handler_;
};

// Wraps text as a chat-completion response body.
inline std::string chat_response_body(const std::string& content) {
  nlohmann::json j;
  j["object"] = "chat.completion";
  j["choices"] = nlohmann::json::array({{{"index", 0}, {"message", {{"role", "assistant"}, {"content", content}}}}});
  return j.dump();
}

// Rejects empty answers, answers over 200 characters, and anything that
// mentions a timestamp or interval.
inline bool valid_recaption(const std::string& text) {
  static const std::regex timestamp(
      R"((\d+(\.\d+)?\s*(s|sec|secs|second|seconds)\b)|(\d+(\.\d+)?\s*(-|~|to)\s*\d)|(<\s*\d)|(\d+:\d+))",
      std::regex::icase);
  const std::string t = detail::trim(text);
  return !t.empty() && t.size() <= 200 && !std::regex_search(t, timestamp);
}

class LlmClient {
 public:
  LlmClient(LlmConfig config, std::shared_ptr<Transport> transport)
      : config_(std::move(config)), transport_(std::move(transport)) {
    config_.validate();
  }

  explicit LlmClient(LlmConfig config)
      : LlmClient(config, std::make_shared<HttpTransport>(config.base_url, config.timeout_s)) {}

  const LlmConfig& config() const { return config_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  std::size_t calls() const { return transport_->calls(); }

  // One chat round trip; returns the assistant content or nullopt.
  std::optional<std::string> chat(const std::string& system, const std::string& user) {
    nlohmann::json body;
    body["model"] = config_.model;
    body["messages"] = nlohmann::json::array({{{"role", "system"}, {"content", system}}, {{"role", "user"}, {"content", user}}});
    body["temperature"] = 0;
    std::vector<std::pair<std::string, std::string>> headers;
    if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key) {
      headers.emplace_back("Authorization", std::string("Bearer ") + key);
    }
    HttpResponse res;
    try {
      res = transport_->post("/v1/chat/completions", body.dump(), headers);
    } catch (const TransportError& e) {
      note(e.what());
      return std::nullopt;
    }
    if (res.status == 401 || res.status == 403) {
      note("llm: authorization rejected (status " + std::to_string(res.status) + ")");
      return std::nullopt;
    }
    if (res.status != 200) {
      note("llm: status " + std::to_string(res.status));
      return std::nullopt;
    }
    try {
      const auto j = nlohmann::json::parse(res.body);
      return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      note(std::string("llm: malformed response: ") + e.what());
      return std::nullopt;
    }
  }

  // Falls back to the template caption after max_retries failed attempts.
  std::string recaption(const std::vector<std::string>& events, std::string_view global_caption) {
    if (auto r = try_recaption(events, global_caption)) return *r;
    if (!config_.fallback) throw TransportError("llm: no valid recaption and fallback disabled");
    note("llm: recaption fell back to the template");
    return template_recaption(events);
  }

  std::optional<std::string> try_recaption(const std::vector<std::string>& events, std::string_view global_caption) {
    std::string joined;
    for (std::size_t i = 0; i < events.size(); ++i) joined += (i ? ", " : "") + events[i];
    const std::string user =
        prompts::render_prompt(prompts::kRecaptionUser, {{"caption", std::string(global_caption)}, {"events", joined}});
    for (std::size_t attempt = 0; attempt <= config_.max_retries; ++attempt) {
      auto text = chat(std::string(prompts::kRecaptionSystem), user);
      if (text && valid_recaption(*text)) return detail::trim(*text);
      if (text) note("llm: rejected recaption \"" + *text + "\"");
    }
    return std::nullopt;
  }

  // Assignments for empty windows only; anything invalid yields the
  // deterministic assignment instead.
  GapAssignments plan_gaps(const WindowPlan& plan) {
    std::vector<std::size_t> empty;
    for (std::size_t j = 0; j < plan.windows.size(); ++j) {
      if (plan.windows[j].events.empty()) empty.push_back(j);
    }
    if (empty.empty()) return {};
    std::ostringstream windows;
    for (std::size_t j = 0; j < plan.windows.size(); ++j) {
      const auto& w = plan.windows[j];
      windows << j << ": " << w.start_s << "-" << w.end_s << ": ";
      if (w.events.empty()) windows << "(empty)";
      for (std::size_t e = 0; e < w.events.size(); ++e) windows << (e ? ", " : "") << w.events[e];
      windows << "\n";
    }
    std::ostringstream total;
    total << plan.total_s;
    const std::string user = prompts::render_prompt(
        prompts::kGapUser, {{"caption", plan.global_caption}, {"total", total.str()}, {"windows", windows.str()}});
    for (std::size_t attempt = 0; attempt <= config_.max_retries; ++attempt) {
      auto text = chat(std::string(prompts::kPlannerSystem), user);
      if (!text) continue;
      if (auto parsed = parse_assignments(*text, plan)) return *parsed;
      note("llm: rejected gap plan");
    }
    if (!config_.fallback) throw TransportError("llm: no valid gap plan and fallback disabled");
    note("llm: gap planning fell back to the deterministic filler");
    return deterministic_gap_fill(plan);
  }

  PlanOptions plan_options() {
    PlanOptions o;
    o.mode = RecaptionMode::llm;
    o.gap_filler = [this](const WindowPlan& p) { return plan_gaps(p); };
    o.recaptioner = [this](const PlanWindow& w, std::string_view yc) { return try_recaption(w.events, yc); };
    return o;
  }

 private:
  static std::optional<GapAssignments> parse_assignments(std::string text, const WindowPlan& plan) {
    const auto a = text.find('{');
    const auto b = text.rfind('}');
    if (a == std::string::npos || b == std::string::npos || b < a) return std::nullopt;
    text = text.substr(a, b - a + 1);
    GapAssignments out;
    try {
      const auto j = nlohmann::json::parse(text);
      for (const auto& item : j.at("assignments")) {
        const auto w = item.at("window").get<long long>();
        if (w < 0 || std::size_t(w) >= plan.windows.size()) return std::nullopt;
        if (!plan.windows[std::size_t(w)].events.empty()) return std::nullopt;
        std::vector<std::string> events;
        for (const auto& e : item.at("events")) {
          const std::string s = detail::trim(e.get<std::string>());
          if (s.empty()) return std::nullopt;
          events.push_back(s);
        }
        if (events.empty()) return std::nullopt;
        out.emplace_back(std::size_t(w), std::move(events));
      }
    } catch (const nlohmann::json::exception&) {
      return std::nullopt;
    }
    return out;
  }

  void note(std::string msg) { warnings_.push_back(std::move(msg)); }

  LlmConfig config_;
  std::shared_ptr<Transport> transport_;
  std::vector<std::string> warnings_;
};

}  // namespace freeaudio
