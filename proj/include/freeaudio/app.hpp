#pragma once

// Command implementations behind the freeaudio tool. Each command takes a
// JSON-serializable option struct, writes a run manifest, then its outputs.
// Replaying a manifest re-runs the same options.

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "freeaudio/attention_control.hpp"
#include "freeaudio/diffusion.hpp"
#include "freeaudio/dit.hpp"
#include "freeaudio/errors.hpp"
#include "freeaudio/eval.hpp"
#include "freeaudio/llm_client.hpp"
#include "freeaudio/longform.hpp"
#include "freeaudio/pipeline.hpp"
#include "freeaudio/spectrogram.hpp"
#include "freeaudio/timing_plan.hpp"
#include "freeaudio/wav.hpp"

namespace freeaudio {

inline constexpr std::string_view kToolVersion = "freeaudio 1.0.0";
using Json = nlohmann::ordered_json;

// ---- run manifest -------------------------------------------------------------

struct RunManifest {
  std::string command;
  std::uint64_t seed = 0;
  Json config = Json::object();
  Json inputs = Json::object();
  Json outputs = Json::object();
  std::string created_utc;
  std::string version = std::string(kToolVersion);
};

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

inline Json manifest_to_json(const RunManifest& m) {
  Json j;
  j["format"] = "freeaudio-manifest/1";
  j["version"] = m.version;
  j["command"] = m.command;
  j["seed"] = m.seed;
  j["created_utc"] = m.created_utc;
  j["config"] = m.config;
  j["inputs"] = m.inputs;
  j["outputs"] = m.outputs;
  return j;
}

inline RunManifest manifest_from_json(const Json& j) {
  try {
    if (j.at("format").get<std::string>() != "freeaudio-manifest/1") throw FormatError("manifest: unknown format");
    RunManifest m;
    m.version = j.at("version").get<std::string>();
    m.command = j.at("command").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.created_utc = j.value("created_utc", "");
    m.config = j.at("config");
    m.inputs = j.at("inputs");
    m.outputs = j.at("outputs");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path + " for writing");
  f << text;
  if (!f) throw FormatError("write failed for " + path);
}

inline std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

inline void write_manifest(const std::string& path, const RunManifest& m) {
  write_text(path, manifest_to_json(m).dump(2) + "\n");
}

inline RunManifest read_manifest(const std::string& path) {
  try {
    return manifest_from_json(Json::parse(read_text(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
}

// Manifest path for a primary output: "out.wav" -> "out.wav.manifest.json".
inline std::string manifest_path_for(const std::string& output) { return output + ".manifest.json"; }

inline void ensure_parent(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
}

// ---- shared helpers -------------------------------------------------------------

struct LoadedModel {
  DitModel<float> model;
  NoiseSchedule schedule;
};

inline LoadedModel load_model(const std::string& checkpoint) {
  if (!std::filesystem::exists(checkpoint)) throw FormatError("missing checkpoint: " + checkpoint);
  auto ck = load_checkpoint<float>(checkpoint);
  LoadedModel lm{DitModel<float>(ck.config), NoiseSchedule{}};
  lm.model.params() = std::move(ck.ema);
  return lm;
}

inline ControlConfig control_config(double alpha, double beta) {
  ControlConfig c;
  c.alpha = alpha;
  c.beta = beta;
  return c;
}

inline WindowPlan build_plan(const std::string& caption, const std::string& timing, double seconds,
                             const std::string& mode, const std::string& llm_base_url,
                             std::vector<std::string>* warnings = nullptr) {
  if (mode == "template") return make_plan(caption, timing, seconds);
  if (mode != "llm") throw ParseError("unknown plan mode '" + mode + "' (template|llm)");
  LlmConfig lc;
  if (!llm_base_url.empty()) lc.base_url = llm_base_url;
  LlmClient client(lc);
  auto plan = make_plan(caption, timing, seconds, client.plan_options());
  if (warnings) *warnings = client.warnings();
  return plan;
}

// ---- synthetic timing evaluation -----------------------------------------------

struct TimingEvalOptions {
  std::size_t clips = 20;
  std::uint64_t seed = 999;
  double seconds = 10.0;
  std::size_t min_events = 2;
  std::size_t max_events = 3;
  std::size_t steps = 50;
  double guidance = 3.0;
};

struct TimingEvalResult {
  double eb = 0.0;
  double at = 0.0;
  std::vector<std::vector<EventAnnotation>> reference;
  std::vector<std::vector<EventAnnotation>> detected;
};

inline std::vector<SynthClip> timing_eval_clips(const ToyWorld& world, const TimingEvalOptions& o) {
  SynthOptions so;
  so.min_events = o.min_events;
  so.max_events = o.max_events;
  so.min_seconds = o.seconds;
  so.max_seconds = o.seconds;
  so.full_span_prob = 0.0;
  return synth_dataset(world.classes(), o.clips, o.seed, so, world.geometry());
}

// Generates every eval clip from its caption and timing prompts and scores
// the detected events of the base latent against the clip's annotations.
template <Real T>
TimingEvalResult evaluate_timing(const DitModel<T>& model, const NoiseSchedule& schedule, const ToyWorld& world,
                                 const TimingEvalOptions& o, const std::optional<ControlConfig>& control) {
  TimingEvalResult r;
  const auto clips = timing_eval_clips(world, o);
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const auto& c = clips[i];
    const auto plan = make_plan(c.caption, c.timing_text, c.duration_s);
    SamplerConfig<T> sc;
    sc.steps = o.steps;
    sc.seed = o.seed * 7919 + i;
    sc.guidance_scale = T(o.guidance);
    const auto g = generate_controlled(model, schedule, plan, control, sc);
    const auto wave = world.to_waveform(g.latents[0], c.duration_s);
    r.reference.push_back(c.annotations);
    r.detected.push_back(detect_events(wave, world.classes(), world.sample_rate()));
  }
  r.eb = eb_score(r.reference, r.detected);
  r.at = at_score(r.reference, r.detected);
  return r;
}

// Mean intra-cosine of a long-form generation of a synthetic multi-event scene.
struct LongEvalOptions {
  double total_seconds = 26.0;
  double overlap_s = 2.0;
  std::size_t scenes = 3;
  std::uint64_t seed = 4242;
  std::size_t steps = 50;
  double guidance = 3.0;
  double window_s = 10.0;
  double window_hop_s = 5.0;
};

inline std::vector<WindowPlan> long_eval_plans(const ToyWorld& world, const LongEvalOptions& o) {
  SynthOptions so;
  so.min_events = 2;
  so.max_events = 3;
  so.min_seconds = o.total_seconds;
  so.max_seconds = o.total_seconds;
  so.full_span_prob = 0.5;
  so.min_event_s = 4.0;
  const auto clips = synth_dataset(world.classes(), o.scenes, o.seed, so, world.geometry());
  std::vector<WindowPlan> plans;
  for (const auto& c : clips) plans.push_back(make_plan(c.caption, c.timing_text, c.duration_s));
  return plans;
}

template <Real T>
double evaluate_intra_cosine(const DitModel<T>& model, const NoiseSchedule& schedule, const ToyWorld& world,
                             const LongEvalOptions& o, double lambda, std::optional<ControlConfig> control = {}) {
  const auto plans = long_eval_plans(world, o);
  double sum = 0.0;
  for (std::size_t i = 0; i < plans.size(); ++i) {
    LongFormConfig lf;
    lf.max_seconds = model.config().max_seconds;
    lf.overlap_s = o.overlap_s;
    lf.lambda = lambda;
    lf.control = control;
    SamplerConfig<T> sc;
    sc.steps = o.steps;
    sc.seed = o.seed * 31 + i;
    sc.guidance_scale = T(o.guidance);
    const auto res = generate_long(model, schedule, world, plans[i], lf, sc);
    sum += intra_cosine(res.waveform, world.sample_rate(), o.window_s, o.window_hop_s);
  }
  return sum / double(plans.size());
}

// ---- command options ------------------------------------------------------------

struct SynthCommand {
  std::string out_dir;
  std::size_t count = 100;
  std::uint64_t seed = 0;
  std::size_t min_events = 1;
  std::size_t max_events = 3;
  double min_seconds = 1.0;
  double max_seconds = 10.0;
};

struct TrainCommand {
  std::string data_dir;  // empty: synthesize `clips` examples from `data_seed`
  std::string out;
  std::size_t clips = 2000;
  std::uint64_t data_seed = 11;
  std::uint64_t seed = 1;
  std::size_t steps = 4500;
  std::size_t batch_size = 8;
  double lr = 1e-3;
  double lr_gamma = 1000.0;  // inverse decay lr (1 + step / gamma)^-power
  double lr_power = 1.0;
  double ema_decay = 0.998;
  double time_budget_s = 900.0;
  double loss_weight_cap = 5.0;
  bool channel_prior = true;  // prior scale per latent channel, measured on the training data
  bool reuse = false;  // keep an existing checkpoint trained with identical settings
};

struct PlanCommand {
  std::string caption;
  std::string timing;
  double seconds = 10.0;
  std::string mode = "template";
  std::string llm_base_url;
  std::string out;
};

struct GenerateCommand {
  std::string checkpoint;
  std::string caption;
  std::string timing;
  std::string plan_file;
  double seconds = 10.0;
  double alpha = 0.2;
  double beta = 0.8;
  bool control = true;
  std::size_t steps = 50;
  double guidance = 3.0;
  std::uint64_t seed = 0;
  std::string mode = "template";
  std::string llm_base_url;
  std::string out;
};

struct GenerateLongCommand {
  std::string checkpoint;
  std::string caption;
  std::string timing;
  std::string plan_file;
  double total_seconds = 26.0;
  double overlap_seconds = 2.0;
  double lambda = 0.2;
  double alpha = 0.2;
  double beta = 0.8;
  bool control = true;
  bool compose = true;
  std::size_t steps = 50;
  double guidance = 3.0;
  std::uint64_t seed = 0;
  std::string mode = "template";
  std::string llm_base_url;
  std::string out;
};

struct EvalCommand {
  std::string checkpoint;
  std::string data_dir;  // score ground truth of a synthesized dataset when no checkpoint is given
  std::size_t clips = 20;
  std::uint64_t seed = 999;
  double alpha = 0.2;
  double beta = 0.8;
  std::size_t steps = 50;
  double guidance = 3.0;
  std::string out;
};

struct AblateCommand {
  std::string checkpoint;
  std::string param = "lambda";  // lambda | alpha | beta
  std::vector<double> values = {0.0, 0.1, 0.2};
  double total_seconds = 26.0;
  double overlap_seconds = 2.0;
  double lambda = 0.2;
  double alpha = 0.2;
  double beta = 0.8;
  std::size_t scenes = 3;
  std::size_t clips = 20;
  std::size_t steps = 50;
  double guidance = 3.0;
  std::uint64_t seed = 0;
  std::string out;
};

struct SpectrogramCommand {
  std::string in;
  std::string out;
  std::size_t window = 256;
  std::size_t hop = 64;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SynthCommand, out_dir, count, seed, min_events, max_events, min_seconds,
                                   max_seconds)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(TrainCommand, data_dir, out, clips, data_seed, seed, steps, batch_size, lr,
                                   lr_gamma, lr_power, ema_decay, time_budget_s, loss_weight_cap, channel_prior, reuse)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(PlanCommand, caption, timing, seconds, mode, llm_base_url, out)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(GenerateCommand, checkpoint, caption, timing, plan_file, seconds, alpha, beta,
                                   control, steps, guidance, seed, mode, llm_base_url, out)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(GenerateLongCommand, checkpoint, caption, timing, plan_file, total_seconds,
                                   overlap_seconds, lambda, alpha, beta, control, compose, steps, guidance, seed,
                                   mode, llm_base_url, out)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EvalCommand, checkpoint, data_dir, clips, seed, alpha, beta, steps, guidance,
                                   out)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(AblateCommand, checkpoint, param, values, total_seconds, overlap_seconds,
                                   lambda, alpha, beta, scenes, clips, steps, guidance, seed, out)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(SpectrogramCommand, in, out, window, hop)

// ---- dataset files ----------------------------------------------------------------

inline Json annotations_to_json(const std::vector<EventAnnotation>& anns) {
  Json a = Json::array();
  for (const auto& e : anns) a.push_back({{"class", e.class_index}, {"onset", e.onset_s}, {"offset", e.offset_s}});
  return a;
}

inline std::vector<EventAnnotation> annotations_from_json(const Json& j) {
  std::vector<EventAnnotation> out;
  for (const auto& e : j) {
    out.push_back({e.at("class").get<std::size_t>(), e.at("onset").get<double>(), e.at("offset").get<double>()});
  }
  return out;
}

struct DatasetEntry {
  std::string wav;
  std::string caption;
  std::string timing_text;
  double duration_s = 0.0;
  std::vector<EventAnnotation> annotations;
};

inline std::vector<DatasetEntry> read_dataset(const std::string& dir) {
  const std::string index = (std::filesystem::path(dir) / "dataset.json").string();
  Json j;
  try {
    j = Json::parse(read_text(index));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("dataset: " + std::string(e.what()));
  }
  std::vector<DatasetEntry> out;
  try {
    for (const auto& c : j.at("clips")) {
      out.push_back({(std::filesystem::path(dir) / c.at("wav").get<std::string>()).string(),
                     c.at("caption").get<std::string>(), c.at("timing").get<std::string>(),
                     c.at("duration_s").get<double>(), annotations_from_json(c.at("annotations"))});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("dataset: " + std::string(e.what()));
  }
  return out;
}

// ---- commands ----------------------------------------------------------------------

template <class Options>
RunManifest begin_run(const std::string& command, std::uint64_t seed, const Options& options) {
  RunManifest m;
  m.command = command;
  m.seed = seed;
  const nlohmann::json plain = options;
  m.config = Json::parse(plain.dump());
  m.created_utc = utc_timestamp();
  return m;
}

inline void cmd_synth(const SynthCommand& c) {
  if (c.out_dir.empty()) throw ParseError("synth: --out-dir is required");
  ToyWorld world;
  SynthOptions so;
  so.min_events = c.min_events;
  so.max_events = c.max_events;
  so.min_seconds = c.min_seconds;
  so.max_seconds = c.max_seconds;
  const auto clips = synth_dataset(world.classes(), c.count, c.seed, so, world.geometry());
  std::filesystem::create_directories(c.out_dir);
  const std::filesystem::path dir(c.out_dir);
  auto m = begin_run("synth", c.seed, c);
  m.outputs["dataset"] = (dir / "dataset.json").string();
  write_manifest((dir / "manifest.json").string(), m);
  Json index;
  index["format"] = "freeaudio-dataset/1";
  index["sample_rate"] = world.sample_rate();
  Json names = Json::array();
  for (const auto& k : world.classes()) names.push_back(k.name);
  index["classes"] = names;
  index["clips"] = Json::array();
  for (std::size_t i = 0; i < clips.size(); ++i) {
    std::ostringstream name;
    name << "clip_" << std::setw(5) << std::setfill('0') << i << ".wav";
    write_wav((dir / name.str()).string(), clips[i].waveform, std::uint32_t(world.sample_rate()));
    index["clips"].push_back({{"wav", name.str()},
                              {"caption", clips[i].caption},
                              {"timing", clips[i].timing_text},
                              {"duration_s", clips[i].duration_s},
                              {"annotations", annotations_to_json(clips[i].annotations)}});
  }
  write_text((dir / "dataset.json").string(), index.dump(2) + "\n");
}

// Settings that determine the trained weights; `out` and `reuse` do not.
inline Json training_identity(const TrainCommand& c, const DitConfig& mc) {
  TrainCommand k = c;
  k.out.clear();
  k.reuse = false;
  const nlohmann::json plain = k;
  Json j = Json::parse(plain.dump());
  j["model"] = to_json(mc);
  return j;
}

// True when `c.out` holds a checkpoint produced from the same settings.
inline bool checkpoint_matches(const TrainCommand& c, const DitConfig& mc) {
  if (!std::filesystem::exists(c.out)) return false;
  try {
    const auto ck = load_checkpoint<float>(c.out);
    return ck.metadata.contains("identity") && ck.metadata["identity"] == training_identity(c, mc);
  } catch (const Error&) {
    return false;
  }
}

inline void cmd_train(const TrainCommand& c, std::ostream* log = nullptr) {
  if (c.out.empty()) throw ParseError("train: --out is required");
  ToyWorld world;
  const DitConfig mc = world.model_config();
  if (c.reuse && checkpoint_matches(c, mc)) {
    if (log) *log << "train: " << c.out << " is up to date\n";
    return;
  }
  std::vector<TrainingExample<float>> data;
  if (!c.data_dir.empty()) {
    for (const auto& e : read_dataset(c.data_dir)) {
      const auto wav = read_wav(e.wav);
      data.push_back({world.to_model<float>(wav.samples, mc.max_frames), e.caption, e.duration_s});
    }
  } else {
    data = world.training_examples<float>(synth_dataset(world.classes(), c.clips, c.data_seed), mc.max_frames);
  }
  DitConfig trained = mc;
  if (c.channel_prior) trained.prior_channel_sigma = latent_channel_rms(data, mc.frame_rate);
  TrainerConfig tc;
  tc.loss_weight_cap = c.loss_weight_cap;
  tc.steps = c.steps;
  tc.batch_size = c.batch_size;
  tc.lr = c.lr;
  tc.inverse_gamma = c.lr_gamma;
  tc.power = c.lr_power;
  tc.ema_decay = c.ema_decay;
  tc.seed = c.seed;
  tc.time_budget_s = c.time_budget_s;
  tc.log_every = log ? 100 : 0;
  tc.validate();
  ensure_parent(c.out);
  auto m = begin_run("train", c.seed, c);
  m.config["trainer"] = to_json(tc);
  m.outputs["checkpoint"] = c.out;
  write_manifest(manifest_path_for(c.out), m);
  DitModel<float> model(trained);
  model.initialize(c.seed);
  NoiseSchedule schedule;
  auto res = train(model, schedule, data, tc, [log](std::size_t step, double loss) {
    if (log) *log << "step " << step << " loss " << loss << "\n" << std::flush;
  });
  Checkpoint<float> ck{trained, res.raw, res.ema, {}};
  ck.metadata["identity"] = training_identity(c, mc);
  ck.metadata["trainer"] = to_json(tc);
  ck.metadata["steps_run"] = res.log.steps_run;
  ck.metadata["seconds"] = res.log.seconds;
  ck.metadata["stopped_by_budget"] = res.log.stopped_by_budget;
  save_checkpoint(c.out, ck);
}

inline WindowPlan cmd_plan(const PlanCommand& c, std::ostream* warn = nullptr) {
  if (c.out.empty()) throw ParseError("plan: --out is required");
  ensure_parent(c.out);
  auto m = begin_run("plan", 0, c);
  m.outputs["plan"] = c.out;
  write_manifest(manifest_path_for(c.out), m);
  std::vector<std::string> warnings;
  const auto plan = build_plan(c.caption, c.timing, c.seconds, c.mode, c.llm_base_url, &warnings);
  if (warn) {
    for (const auto& w : warnings) *warn << "warning: " << w << "\n";
  }
  write_plan(c.out, plan);
  return plan;
}

inline WindowPlan plan_for(const std::string& plan_file, const std::string& caption, const std::string& timing,
                           double seconds, const std::string& mode, const std::string& url) {
  if (!plan_file.empty()) return read_plan(plan_file);
  return build_plan(caption, timing, seconds, mode, url);
}

inline void cmd_generate(const GenerateCommand& c) {
  if (c.out.empty()) throw ParseError("generate: --out is required");
  auto lm = load_model(c.checkpoint);
  const auto plan = plan_for(c.plan_file, c.caption, c.timing, c.seconds, c.mode, c.llm_base_url);
  if (plan.total_s > lm.model.config().max_seconds + 1e-9) {
    throw RangeError("generate: plan is longer than the model window; use generate-long");
  }
  ensure_parent(c.out);
  auto m = begin_run("generate", c.seed, c);
  m.inputs["checkpoint"] = c.checkpoint;
  m.config["plan"] = plan_to_json(plan);
  m.outputs["wav"] = c.out;
  write_manifest(manifest_path_for(c.out), m);
  SamplerConfig<float> sc;
  sc.steps = c.steps;
  sc.seed = c.seed;
  sc.guidance_scale = float(c.guidance);
  std::optional<ControlConfig> ctl;
  if (c.control) ctl = control_config(c.alpha, c.beta);
  const auto r = generate_controlled(lm.model, lm.schedule, plan, ctl, sc);
  ToyWorld world;
  write_wav(c.out, world.to_waveform(r.latents[0], plan.total_s), std::uint32_t(world.sample_rate()));
}

inline void cmd_generate_long(const GenerateLongCommand& c) {
  if (c.out.empty()) throw ParseError("generate-long: --out is required");
  auto lm = load_model(c.checkpoint);
  const auto plan = plan_for(c.plan_file, c.caption, c.timing, c.total_seconds, c.mode, c.llm_base_url);
  ensure_parent(c.out);
  auto m = begin_run("generate-long", c.seed, c);
  m.inputs["checkpoint"] = c.checkpoint;
  m.config["plan"] = plan_to_json(plan);
  m.outputs["wav"] = c.out;
  write_manifest(manifest_path_for(c.out), m);
  LongFormConfig lf;
  lf.max_seconds = lm.model.config().max_seconds;
  lf.overlap_s = c.overlap_seconds;
  lf.lambda = c.lambda;
  lf.compose = c.compose;
  if (c.control) lf.control = control_config(c.alpha, c.beta);
  SamplerConfig<float> sc;
  sc.steps = c.steps;
  sc.seed = c.seed;
  sc.guidance_scale = float(c.guidance);
  ToyWorld world;
  const auto res = generate_long(lm.model, lm.schedule, world, plan, lf, sc);
  write_wav(c.out, res.waveform, std::uint32_t(world.sample_rate()));
}

inline std::vector<MetricRow> cmd_eval(const EvalCommand& c) {
  if (c.out.empty()) throw ParseError("eval: --out is required");
  ToyWorld world;
  std::vector<MetricRow> rows;
  if (c.checkpoint.empty()) {
    if (c.data_dir.empty()) throw ParseError("eval: need --checkpoint or --data-dir");
    const auto entries = read_dataset(c.data_dir);
    ensure_parent(c.out);
    auto m = begin_run("eval", c.seed, c);
    m.outputs["metrics"] = c.out;
    write_manifest(manifest_path_for(c.out), m);
    std::vector<std::vector<EventAnnotation>> ref, hyp;
    for (const auto& e : entries) {
      const auto wav = read_wav(e.wav);
      ref.push_back(e.annotations);
      hyp.push_back(detect_events(wav.samples, world.classes(), double(wav.sample_rate)));
    }
    rows.push_back({"Eb", eb_score(ref, hyp), "dataset"});
    rows.push_back({"At", at_score(ref, hyp), "dataset"});
  } else {
    auto lm = load_model(c.checkpoint);
    ensure_parent(c.out);
    auto m = begin_run("eval", c.seed, c);
    m.inputs["checkpoint"] = c.checkpoint;
    m.outputs["metrics"] = c.out;
    write_manifest(manifest_path_for(c.out), m);
    TimingEvalOptions o;
    o.clips = c.clips;
    o.seed = c.seed;
    o.steps = c.steps;
    o.guidance = c.guidance;
    const auto plain = evaluate_timing(lm.model, lm.schedule, world, o, std::nullopt);
    const auto ctl = evaluate_timing(lm.model, lm.schedule, world, o, control_config(c.alpha, c.beta));
    std::ostringstream tag;
    tag << "alpha=" << c.alpha << ",beta=" << c.beta;
    rows.push_back({"Eb", plain.eb, "no-control"});
    rows.push_back({"At", plain.at, "no-control"});
    rows.push_back({"Eb", ctl.eb, tag.str()});
    rows.push_back({"At", ctl.at, tag.str()});
  }
  write_text(c.out, format_metrics(rows));
  return rows;
}

inline std::vector<MetricRow> cmd_ablate(const AblateCommand& c) {
  if (c.out.empty()) throw ParseError("ablate: --out is required");
  if (c.values.empty()) throw ParseError("ablate: no values to sweep");
  if (c.param != "lambda" && c.param != "alpha" && c.param != "beta") {
    throw ParseError("ablate: unknown parameter '" + c.param + "' (lambda|alpha|beta)");
  }
  auto lm = load_model(c.checkpoint);
  ensure_parent(c.out);
  auto m = begin_run("ablate", c.seed, c);
  m.inputs["checkpoint"] = c.checkpoint;
  m.outputs["metrics"] = c.out;
  write_manifest(manifest_path_for(c.out), m);
  ToyWorld world;
  std::vector<MetricRow> rows;
  for (double v : c.values) {
    std::ostringstream tag;
    tag << c.param << "=" << v;
    if (c.param == "lambda") {
      LongEvalOptions o;
      o.total_seconds = c.total_seconds;
      o.overlap_s = c.overlap_seconds;
      o.scenes = c.scenes;
      o.seed = c.seed + 4242;
      o.steps = c.steps;
      o.guidance = c.guidance;
      rows.push_back({"Intra-cosine", evaluate_intra_cosine(lm.model, lm.schedule, world, o, v), tag.str()});
    } else {
      TimingEvalOptions o;
      o.clips = c.clips;
      o.seed = c.seed + 999;
      o.steps = c.steps;
      o.guidance = c.guidance;
      const auto r = evaluate_timing(lm.model, lm.schedule, world, o,
                                     c.param == "alpha" ? control_config(v, c.beta) : control_config(c.alpha, v));
      rows.push_back({"Eb", r.eb, tag.str()});
      rows.push_back({"At", r.at, tag.str()});
    }
  }
  write_text(c.out, format_metrics(rows));
  return rows;
}

inline void cmd_spectrogram(const SpectrogramCommand& c) {
  if (c.in.empty() || c.out.empty()) throw ParseError("spectrogram: --in and --out are required");
  const auto wav = read_wav(c.in);
  SpectrogramConfig sc;
  sc.window = c.window;
  sc.hop = c.hop;
  const auto img = render_spectrogram(wav.samples, sc);
  ensure_parent(c.out);
  auto m = begin_run("spectrogram", 0, c);
  m.inputs["wav"] = c.in;
  m.outputs["image"] = c.out;
  write_manifest(manifest_path_for(c.out), m);
  write_pgm(c.out, img);
}

// Re-runs a manifest's command. A non-empty `out` replaces the primary output
// path (or output directory for synth).
inline void replay_manifest(const RunManifest& m, const std::string& out = {}) {
  try {
    const nlohmann::json j = nlohmann::json::parse(m.config.dump());
    if (m.command == "synth") {
      auto c = j.get<SynthCommand>();
      if (!out.empty()) c.out_dir = out;
      cmd_synth(c);
    } else if (m.command == "train") {
      auto c = j.get<TrainCommand>();
      if (!out.empty()) c.out = out;
      cmd_train(c);
    } else if (m.command == "plan") {
      auto c = j.get<PlanCommand>();
      if (!out.empty()) c.out = out;
      cmd_plan(c);
    } else if (m.command == "generate") {
      auto c = j.get<GenerateCommand>();
      if (!out.empty()) c.out = out;
      cmd_generate(c);
    } else if (m.command == "generate-long") {
      auto c = j.get<GenerateLongCommand>();
      if (!out.empty()) c.out = out;
      cmd_generate_long(c);
    } else if (m.command == "eval") {
      auto c = j.get<EvalCommand>();
      if (!out.empty()) c.out = out;
      cmd_eval(c);
    } else if (m.command == "ablate") {
      auto c = j.get<AblateCommand>();
      if (!out.empty()) c.out = out;
      cmd_ablate(c);
    } else if (m.command == "spectrogram") {
      auto c = j.get<SpectrogramCommand>();
      if (!out.empty()) c.out = out;
      cmd_spectrogram(c);
    } else {
      throw FormatError("manifest: unknown command '" + m.command + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest: bad config: ") + e.what());
  }
}

}  // namespace freeaudio
