// rerender command-line entry point.
//
// Exit codes: 0 success, 2 usage or configuration problem, 3 domain error.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "rerender/bench.hpp"
#include "rerender/codec.hpp"
#include "rerender/frame_sources.hpp"
#include "rerender/intervention.hpp"
#include "rerender/model_hook.hpp"
#include "rerender/server.hpp"

namespace fs = std::filesystem;
using namespace rerender;

namespace {

constexpr int kUsage = 2;
constexpr int kDomain = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::atomic<bool> g_stop{false};
extern "C" void on_signal(int) { g_stop = true; }

// ---------------------------------------------------------------------------

struct ServeArgs {
  std::optional<std::string> config;
  std::optional<int> port;
  std::optional<std::string> data_root;
};

int serve(const ServeArgs& a) {
  server::Config cfg;
  try {
    if (a.config && !fs::is_regular_file(*a.config)) throw UsageError("config file not found: " + *a.config);
    cfg = server::load_config(a.config ? std::optional<fs::path>(*a.config) : std::nullopt);
    if (a.port) cfg.port = *a.port;
    if (a.data_root) cfg.root = *a.data_root;
    server::check(cfg);
  } catch (const Error& e) {
    throw UsageError(std::string("bad config: ") + e.what());
  }
  std::unique_ptr<server::Server> srv;
  try {
    srv = std::make_unique<server::Server>(cfg);
    srv->start();
  } catch (const Error& e) {
    throw UsageError(std::string("cannot start server: ") + e.what());
  }
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  spdlog::info("shutting down");
  srv->stop();
  return 0;
}

// ---------------------------------------------------------------------------

struct ApplyArgs {
  std::string in, out, root = "rerender-data/interventions";
  std::vector<std::string> interventions;
};

int apply(const ApplyArgs& a) {
  if (!fs::is_directory(a.in)) throw UsageError("input directory not found: " + a.in);
  const auto inputs = sources::list_pngs(a.in);
  fs::create_directories(a.out);
  if (a.interventions.empty()) {
    for (const auto& p : inputs) fs::copy_file(p, fs::path(a.out) / p.filename(), fs::copy_options::overwrite_existing);
    std::printf("copied %zu frames\n", inputs.size());
    return 0;
  }
  engine::Registry reg(a.root);
  std::vector<std::string> missing;
  for (const auto& id : a.interventions)
    if (!reg.find(id)) missing.push_back(id);
  if (!missing.empty()) {
    std::string msg = "unknown intervention(s):";
    for (const auto& m : missing) msg += " " + m;
    msg += "\navailable:";
    for (const auto& id : reg.ids()) msg += " " + id;
    fail(ErrorCode::not_found, msg);
  }
  const auto chain = engine::snapshot(reg, a.interventions);
  std::size_t detections = 0;
  for (const auto& p : inputs) {
    std::vector<engine::StepReport> steps;
    const Frame out = engine::apply_chain(read_png(p), chain, reg, &steps);
    for (const auto& s : steps) detections += s.detections.size();
    write_png(fs::path(a.out) / p.filename(), out);
  }
  std::printf("wrote %zu frames, %zu detections\n", inputs.size(), detections);
  return 0;
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
  int users = 1, rate = 1;
  std::int64_t steps = 0;
  std::uint64_t seed = 1;
  std::optional<std::string> corpus, holdout, out;
  double holdout_fraction = 0.1;
};

int simulate(const SimulateArgs& a) {
  if (a.users < 1 || a.rate < 1) throw UsageError("--users and --rate must be at least 1");
  if (a.steps < 0) throw UsageError("--steps must be non-negative");
  model::Corpus train, holdout;
  if (a.corpus) {
    train = model::read_corpus(*a.corpus);
    if (a.holdout) {
      holdout = model::read_corpus(*a.holdout);
    } else {
      // Seeded split of the positives only; negatives all stay in training.
      Rng rng(a.seed ^ 0x5eedULL);
      rng.shuffle(train);
      model::Corpus keep;
      std::size_t pos = 0;
      for (const auto& e : train) pos += e.label == model::Label::positive;
      const auto want = static_cast<std::size_t>(a.holdout_fraction * static_cast<double>(pos));
      for (auto& e : train) {
        if (e.label == model::Label::positive && holdout.size() < want) holdout.push_back(std::move(e));
        else keep.push_back(std::move(e));
      }
      train = std::move(keep);
    }
  } else {
    auto c = model::make_synthetic_corpus({});
    train = std::move(c.train);
    holdout = std::move(c.holdout);
  }
  std::size_t positives = 0;
  for (const auto& e : train) positives += e.label == model::Label::positive;
  const std::int64_t per_step = static_cast<std::int64_t>(a.users) * a.rate;
  const std::int64_t steps = a.steps > 0 ? a.steps : (static_cast<std::int64_t>(positives) + per_step - 1) / per_step;

  const auto curve = model::simulate_collaboration(a.users, a.rate, steps, train, holdout, a.seed);
  const double baseline = model::baseline_accuracy(train, holdout);
  const std::string csv = model::curve_csv(curve);
  if (a.out) {
    std::ofstream(*a.out) << csv;
  } else {
    std::fputs(csv.c_str(), stdout);
  }
  const auto first = model::first_reaching(curve, baseline);
  nlohmann::json summary{{"users", a.users},
                         {"rate", a.rate},
                         {"steps", steps},
                         {"seed", a.seed},
                         {"baseline_accuracy", baseline},
                         {"final_accuracy", curve.back().accuracy},
                         {"first_step_95pct", first ? nlohmann::json(*first) : nlohmann::json(nullptr)}};
  std::fprintf(stderr, "%s\n", summary.dump().c_str());
  return 0;
}

// ---------------------------------------------------------------------------

int bench_cmd(const bench::Options& o, const std::optional<std::string>& out) {
  if (o.frames < 1) throw UsageError("--frames must be at least 1");
  if (o.masks < 0) throw UsageError("--masks must be non-negative");
  const auto report = bench::to_json(bench::run(o)).dump(2);
  if (out) std::ofstream(*out) << report << "\n";
  std::printf("%s\n", report.c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string skin = "mobile-a", out;
  int frames = 10;
  std::uint64_t seed = 0;
};

/// Writes skin frames plus a ground-truth JSON of element boxes.
int synth(const SynthArgs& a) {
  if (a.frames < 1) throw UsageError("--frames must be at least 1");
  fs::create_directories(a.out);
  nlohmann::json truth = nlohmann::json::object();
  for (int t = 0; t < a.frames; ++t) {
    const auto s = sources::synth_skin(a.skin, a.seed, t);
    write_png(fs::path(a.out) / frame_file_name(s.frame), s.frame);
    if (t == 0)
      for (const auto& e : s.elements) truth[e.name] = region_json(e.region);
  }
  std::ofstream(fs::path(a.out) / "elements.json") << truth.dump(2) << "\n";
  std::printf("wrote %d frames of %s to %s\n", a.frames, a.skin.c_str(), a.out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct AnnotateArgs {
  std::string frame, label, user, root = "rerender-data/interventions";
  std::vector<int> region;
};

/// Offline counterpart of the history annotate endpoint.
int annotate(const AnnotateArgs& a) {
  if (a.region.size() != 4) throw UsageError("--region takes x y w h");
  engine::Registry reg(a.root);
  if (!reg.has_user(a.user)) reg.register_user(a.user);
  const Frame f = read_png(a.frame);
  const Region r{a.region[0], a.region[1], a.region[2], a.region[3]};
  if (!r.within(f.width, f.height)) fail(ErrorCode::invalid_argument, "region lies outside the frame");
  const std::string aid = fs::path(a.frame).stem().string() + "-" + std::to_string(model::unix_ms());
  const auto spec = reg.compile_annotation(Annotation{aid, fs::path(a.frame).filename().string(), r, a.label, a.user,
                                                      model::unix_ms()},
                                           f);
  std::printf("%s\n", engine::to_json(spec).dump(2).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rerender: re-render captured frames through user-authored interventions"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  ServeArgs serve_args;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP server");
  serve_cmd->add_option("--config", serve_args.config, "JSON config file");
  serve_cmd->add_option("--port", serve_args.port, "Override the listening port");
  serve_cmd->add_option("--data-root", serve_args.data_root, "Override the data directory");

  ApplyArgs apply_args;
  auto* apply_cmd = app.add_subcommand("apply", "Apply interventions to a directory of PNG frames");
  apply_cmd->add_option("--in", apply_args.in, "Input PNG directory")->required();
  apply_cmd->add_option("--out", apply_args.out, "Output directory")->required();
  apply_cmd->add_option("--interventions", apply_args.interventions, "Intervention ids (owner.name), in order");
  apply_cmd->add_option("--root", apply_args.root, "Interventions directory")->capture_default_str();

  SimulateArgs sim_args;
  auto* sim_cmd = app.add_subcommand("simulate", "Collaborative fine-tuning simulation (CSV on stdout)");
  sim_cmd->add_option("--users", sim_args.users, "Contributing users M")->capture_default_str();
  sim_cmd->add_option("--rate", sim_args.rate, "Sentences per user per step N")->capture_default_str();
  sim_cmd->add_option("--steps", sim_args.steps, "Timesteps (0: until the corpus is used up)")->capture_default_str();
  sim_cmd->add_option("--seed", sim_args.seed, "Shuffle seed")->capture_default_str();
  sim_cmd->add_option("--corpus", sim_args.corpus, "JSON-lines corpus {text, label}");
  sim_cmd->add_option("--holdout", sim_args.holdout, "JSON-lines holdout corpus");
  sim_cmd->add_option("--out", sim_args.out, "Write the CSV here instead of stdout");

  bench::Options bench_opts;
  std::optional<std::string> bench_out;
  auto* bench_sub = app.add_subcommand("bench", "Measure apply_chain throughput (JSON report)");
  bench_sub->add_option("--skin", bench_opts.skin, "Skin id")->capture_default_str();
  bench_sub->add_option("--masks", bench_opts.masks, "Active mask interventions K")->capture_default_str();
  bench_sub->add_option("--templates", bench_opts.templates, "Templates per mask (1 or 2)")->capture_default_str();
  bench_sub->add_option("--frames", bench_opts.frames, "Timed frames F")->capture_default_str();
  bench_sub->add_option("--seed", bench_opts.seed, "Skin layout seed")->capture_default_str();
  bench_sub->add_option("--out", bench_out, "Also write the report here");

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "Write synthetic skin frames and their element boxes");
  synth_cmd->add_option("--skin", synth_args.skin, "Skin id")->capture_default_str();
  synth_cmd->add_option("--frames", synth_args.frames, "Number of frames")->capture_default_str();
  synth_cmd->add_option("--seed", synth_args.seed, "Layout seed")->capture_default_str();
  synth_cmd->add_option("--out", synth_args.out, "Output directory")->required();

  AnnotateArgs ann_args;
  auto* ann_cmd = app.add_subcommand("annotate", "Compile an annotation on a PNG into an intervention");
  ann_cmd->add_option("--frame", ann_args.frame, "PNG frame")->required()->check(CLI::ExistingFile);
  ann_cmd->add_option("--region", ann_args.region, "x y w h")->required()->expected(4);
  ann_cmd->add_option("--label", ann_args.label, "mask-<name>, text-<name> or image-<name>")->required();
  ann_cmd->add_option("--user", ann_args.user, "Owner")->required();
  ann_cmd->add_option("--root", ann_args.root, "Interventions directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (*serve_cmd) return serve(serve_args);
    if (*apply_cmd) return apply(apply_args);
    if (*sim_cmd) return simulate(sim_args);
    if (*bench_sub) return bench_cmd(bench_opts, bench_out);
    if (*synth_cmd) return synth(synth_args);
    if (*ann_cmd) return annotate(ann_args);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const Error& e) {
    std::fprintf(stderr, "error (%s): %s\n", std::string(to_string(e.code())).c_str(), e.what());
    return kDomain;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kDomain;
  }
  return kUsage;
}
