#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "freeaudio/app.hpp"

namespace {

using namespace freeaudio;

std::string read_timing(const std::string& timing, const std::string& timing_file) {
  if (!timing_file.empty()) return read_text(timing_file);
  return timing;
}

// Exit codes: 1 usage/parse, 2 range, 3 file/format, 4 numeric, 5 transport, 6 other library.
int exit_code_for(const Error& e) {
  if (dynamic_cast<const ParseError*>(&e)) return 1;
  if (dynamic_cast<const RangeError*>(&e)) return 2;
  if (dynamic_cast<const FormatError*>(&e)) return 3;
  if (dynamic_cast<const NumericError*>(&e)) return 4;
  if (dynamic_cast<const TransportError*>(&e)) return 5;
  return 6;
}

const char* category(const Error& e) {
  switch (exit_code_for(e)) {
    case 1: return "parse error";
    case 2: return "range error";
    case 3: return "format error";
    case 4: return "numeric error";
    case 5: return "transport error";
    default: return "error";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Timing-controlled toy text-to-audio generation"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  SynthCommand synth;
  auto* s_synth = app.add_subcommand("synth", "Synthesize a labelled event dataset");
  s_synth->add_option("--out-dir", synth.out_dir, "Output directory")->required();
  s_synth->add_option("--count", synth.count, "Number of clips")->capture_default_str();
  s_synth->add_option("--seed", synth.seed)->capture_default_str();
  s_synth->add_option("--min-events", synth.min_events)->capture_default_str();
  s_synth->add_option("--max-events", synth.max_events)->capture_default_str();
  s_synth->add_option("--min-seconds", synth.min_seconds)->capture_default_str();
  s_synth->add_option("--max-seconds", synth.max_seconds)->capture_default_str();

  TrainCommand train;
  auto* s_train = app.add_subcommand("train", "Train the toy diffusion transformer");
  s_train->add_option("--out", train.out, "Checkpoint path")->required();
  s_train->add_option("--data-dir", train.data_dir, "Dataset from `synth`; synthesized in memory when absent");
  s_train->add_option("--clips", train.clips, "In-memory dataset size")->capture_default_str();
  s_train->add_option("--data-seed", train.data_seed)->capture_default_str();
  s_train->add_option("--seed", train.seed)->capture_default_str();
  s_train->add_option("--steps", train.steps)->capture_default_str();
  s_train->add_option("--batch-size", train.batch_size)->capture_default_str();
  s_train->add_option("--lr", train.lr)->capture_default_str();
  s_train->add_option("--lr-gamma", train.lr_gamma, "Inverse learning-rate decay scale, in steps")->capture_default_str();
  s_train->add_option("--lr-power", train.lr_power, "Inverse learning-rate decay power")->capture_default_str();
  s_train->add_option("--ema-decay", train.ema_decay)->capture_default_str();
  s_train->add_option("--time-budget", train.time_budget_s, "Seconds; 0 = unlimited")->capture_default_str();
  s_train->add_option("--loss-weight-cap", train.loss_weight_cap, "Cap on the max(1, 1/SNR) example weight; 1 = plain loss")
      ->capture_default_str();
  s_train->add_flag("!--no-channel-prior", train.channel_prior, "Use one prior scale for all latent channels");
  s_train->add_flag("--reuse", train.reuse, "Skip training when --out already holds a checkpoint from these settings");

  PlanCommand plan;
  std::string plan_timing_file;
  auto* s_plan = app.add_subcommand("plan", "Turn a caption and timing prompts into a window plan");
  s_plan->add_option("--caption", plan.caption, "Global caption")->required();
  s_plan->add_option("--timing", plan.timing, "Timing prompts, e.g. \"dog barking. <1.0,3.0>\"");
  s_plan->add_option("--timing-file", plan_timing_file, "Read timing prompts from a file");
  s_plan->add_option("--seconds", plan.seconds, "Clip length")->capture_default_str();
  s_plan->add_option("--mode", plan.mode, "Recaption mode")->check(CLI::IsMember({"template", "llm"}))->capture_default_str();
  s_plan->add_option("--llm-base-url", plan.llm_base_url, "Chat-completion endpoint");
  s_plan->add_option("--out", plan.out, "Plan file")->required();

  GenerateCommand gen;
  std::string gen_timing_file;
  bool gen_no_control = false;
  auto* s_gen = app.add_subcommand("generate", "Generate a clip with timing control");
  s_gen->add_option("--checkpoint", gen.checkpoint)->required();
  s_gen->add_option("--caption", gen.caption);
  s_gen->add_option("--timing", gen.timing);
  s_gen->add_option("--timing-file", gen_timing_file);
  s_gen->add_option("--plan", gen.plan_file, "Use an existing plan file");
  s_gen->add_option("--seconds", gen.seconds)->capture_default_str();
  s_gen->add_option("--alpha", gen.alpha, "Cross-attention fusion ratio (weight of the base output)")->capture_default_str();
  s_gen->add_option("--beta", gen.beta, "Self-attention fusion ratio (weight of the timing output)")->capture_default_str();
  s_gen->add_flag("--no-control", gen_no_control, "Plain generation from the global caption");
  s_gen->add_option("--steps", gen.steps)->capture_default_str();
  s_gen->add_option("--guidance", gen.guidance)->capture_default_str();
  s_gen->add_option("--seed", gen.seed)->capture_default_str();
  s_gen->add_option("--mode", gen.mode)->check(CLI::IsMember({"template", "llm"}))->capture_default_str();
  s_gen->add_option("--llm-base-url", gen.llm_base_url);
  s_gen->add_option("--out", gen.out, "Output WAV")->required();

  GenerateLongCommand lg;
  std::string lg_timing_file;
  bool lg_no_control = false, lg_no_compose = false;
  auto* s_long = app.add_subcommand("generate-long", "Generate long-form audio from overlapping segments");
  s_long->add_option("--checkpoint", lg.checkpoint)->required();
  s_long->add_option("--caption", lg.caption);
  s_long->add_option("--timing", lg.timing);
  s_long->add_option("--timing-file", lg_timing_file);
  s_long->add_option("--plan", lg.plan_file);
  s_long->add_option("--total-seconds", lg.total_seconds)->capture_default_str();
  s_long->add_option("--overlap-seconds", lg.overlap_seconds)->capture_default_str();
  s_long->add_option("--lambda", lg.lambda, "Reference guidance weight")->capture_default_str();
  s_long->add_option("--alpha", lg.alpha)->capture_default_str();
  s_long->add_option("--beta", lg.beta)->capture_default_str();
  s_long->add_flag("--no-control", lg_no_control);
  s_long->add_flag("--no-compose", lg_no_compose, "Disable overlap composition");
  s_long->add_option("--steps", lg.steps)->capture_default_str();
  s_long->add_option("--guidance", lg.guidance)->capture_default_str();
  s_long->add_option("--seed", lg.seed)->capture_default_str();
  s_long->add_option("--mode", lg.mode)->check(CLI::IsMember({"template", "llm"}))->capture_default_str();
  s_long->add_option("--llm-base-url", lg.llm_base_url);
  s_long->add_option("--out", lg.out, "Output WAV")->required();

  EvalCommand ev;
  auto* s_eval = app.add_subcommand("eval", "Score timing alignment (Eb, At)");
  s_eval->add_option("--checkpoint", ev.checkpoint, "Generate and score with and without control");
  s_eval->add_option("--data-dir", ev.data_dir, "Score a synthesized dataset against its labels");
  s_eval->add_option("--clips", ev.clips)->capture_default_str();
  s_eval->add_option("--seed", ev.seed)->capture_default_str();
  s_eval->add_option("--alpha", ev.alpha)->capture_default_str();
  s_eval->add_option("--beta", ev.beta)->capture_default_str();
  s_eval->add_option("--steps", ev.steps)->capture_default_str();
  s_eval->add_option("--guidance", ev.guidance)->capture_default_str();
  s_eval->add_option("--out", ev.out, "Metrics TSV")->required();

  AblateCommand ab;
  auto* s_ab = app.add_subcommand("ablate", "Sweep one control parameter");
  s_ab->add_option("--checkpoint", ab.checkpoint)->required();
  s_ab->add_option("--param", ab.param)->check(CLI::IsMember({"lambda", "alpha", "beta"}))->capture_default_str();
  s_ab->add_option("--values", ab.values, "Values to sweep")->delimiter(',')->capture_default_str();
  s_ab->add_option("--total-seconds", ab.total_seconds)->capture_default_str();
  s_ab->add_option("--overlap-seconds", ab.overlap_seconds)->capture_default_str();
  s_ab->add_option("--lambda", ab.lambda)->capture_default_str();
  s_ab->add_option("--alpha", ab.alpha)->capture_default_str();
  s_ab->add_option("--beta", ab.beta)->capture_default_str();
  s_ab->add_option("--scenes", ab.scenes, "Long-form scenes per lambda value")->capture_default_str();
  s_ab->add_option("--clips", ab.clips, "Eval clips per alpha/beta value")->capture_default_str();
  s_ab->add_option("--steps", ab.steps)->capture_default_str();
  s_ab->add_option("--guidance", ab.guidance)->capture_default_str();
  s_ab->add_option("--seed", ab.seed)->capture_default_str();
  s_ab->add_option("--out", ab.out, "Metrics TSV")->required();

  SpectrogramCommand sp;
  auto* s_sp = app.add_subcommand("spectrogram", "Render a WAV as a PGM spectrogram");
  s_sp->add_option("--in", sp.in)->required()->check(CLI::ExistingFile);
  s_sp->add_option("--out", sp.out)->required();
  s_sp->add_option("--window", sp.window)->capture_default_str();
  s_sp->add_option("--hop", sp.hop)->capture_default_str();

  std::string manifest, replay_out;
  auto* s_replay = app.add_subcommand("replay", "Re-run a command from its manifest");
  s_replay->add_option("manifest", manifest)->required()->check(CLI::ExistingFile);
  s_replay->add_option("--out", replay_out, "Override the primary output path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*s_synth) {
      cmd_synth(synth);
    } else if (*s_train) {
      cmd_train(train, &std::cerr);
    } else if (*s_plan) {
      plan.timing = read_timing(plan.timing, plan_timing_file);
      const auto p = cmd_plan(plan, &std::cerr);
      std::cout << "plan: " << p.k() << " windows -> " << plan.out << "\n";
    } else if (*s_gen) {
      gen.timing = read_timing(gen.timing, gen_timing_file);
      gen.control = !gen_no_control;
      if (gen.plan_file.empty() && gen.caption.empty()) throw ParseError("generate: --caption or --plan is required");
      cmd_generate(gen);
    } else if (*s_long) {
      lg.timing = read_timing(lg.timing, lg_timing_file);
      lg.control = !lg_no_control;
      lg.compose = !lg_no_compose;
      if (lg.plan_file.empty() && lg.caption.empty()) throw ParseError("generate-long: --caption or --plan is required");
      cmd_generate_long(lg);
    } else if (*s_eval) {
      std::cout << format_metrics(cmd_eval(ev));
    } else if (*s_ab) {
      std::cout << format_metrics(cmd_ablate(ab));
    } else if (*s_sp) {
      cmd_spectrogram(sp);
    } else if (*s_replay) {
      replay_manifest(read_manifest(manifest), replay_out);
    }
  } catch (const Error& e) {
    std::cerr << "freeaudio: " << category(e) << ": " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "freeaudio: error: " << e.what() << "\n";
    return 6;
  }
  return 0;
}
