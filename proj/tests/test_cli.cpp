#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "rerender/codec.hpp"
#include "rerender/frame_sources.hpp"
#include "rerender/image.hpp"
#include "support.hpp"

using namespace rerender;
namespace fs = std::filesystem;

namespace {

int run(const std::string& args, const fs::path& cwd) {
  const std::string cmd = "cd '" + cwd.string() + "' && '" RERENDER_CLI "' " + args + " >cli.out 2>cli.err";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::string region_args(const fs::path& elements, const std::string& name) {
  const auto j = nlohmann::json::parse(slurp(elements)).at(name);
  return std::to_string(j.at("x").get<int>()) + " " + std::to_string(j.at("y").get<int>()) + " " +
         std::to_string(j.at("w").get<int>()) + " " + std::to_string(j.at("h").get<int>());
}

}  // namespace

TEST(Cli, ApplyWithoutInterventionsCopiesBytes) {
  testsupport::TempDir dir("cli");
  ASSERT_EQ(run("synth --skin mobile-a --frames 3 --out corpus", dir.path()), 0);
  ASSERT_EQ(run("apply --in corpus --out out", dir.path()), 0);
  for (const auto& p : sources::list_pngs(dir.path() / "corpus"))
    EXPECT_EQ(slurp(p), slurp(dir.path() / "out" / p.filename()));
}

TEST(Cli, ApplyOccludesAndIsDeterministic) {
  testsupport::TempDir dir("cli");
  ASSERT_EQ(run("synth --skin desktop-b --frames 4 --seed 2 --out corpus", dir.path()), 0);
  const auto region = region_args(dir.path() / "corpus" / "elements.json", "nav-tabs");
  ASSERT_EQ(run("annotate --frame corpus/0_0.png --region " + region +
                    " --label mask-nav --user ann --root iv",
                dir.path()),
            0)
      << slurp(dir.path() / "cli.err");
  ASSERT_EQ(run("apply --in corpus --out a --root iv --interventions ann.mask-nav", dir.path()), 0);
  ASSERT_EQ(run("apply --in corpus --out b --root iv --interventions ann.mask-nav", dir.path()), 0);
  const auto truth = sources::synth_skin("desktop-b", 2, 0).find("nav-tabs")->region;
  for (const auto& p : sources::list_pngs(dir.path() / "corpus")) {
    EXPECT_EQ(slurp(dir.path() / "a" / p.filename()), slurp(dir.path() / "b" / p.filename()));
    const Frame f = read_png(dir.path() / "a" / p.filename());
    for (int y = truth.y; y < truth.bottom(); ++y)
      for (int x = truth.x; x < truth.right(); ++x) ASSERT_EQ(f.rgb(x, y), (Rgb{0, 0, 0})) << p;
  }
}

TEST(Cli, ExitCodes) {
  testsupport::TempDir dir("cli");
  ASSERT_EQ(run("synth --frames 1 --out corpus", dir.path()), 0);
  EXPECT_EQ(run("apply --in corpus --out o --root iv --interventions ann.mask-nope", dir.path()), 3);
  EXPECT_NE(slurp(dir.path() / "cli.err").find("ann.mask-nope"), std::string::npos);
  EXPECT_EQ(run("bench --frames 0", dir.path()), 2);
  EXPECT_EQ(run("bench --skin nope --frames 1", dir.path()), 3);
  EXPECT_EQ(run("serve --config missing.json", dir.path()), 2);
  EXPECT_EQ(run("frobnicate", dir.path()), 2);
  EXPECT_EQ(run("", dir.path()), 2);
  EXPECT_EQ(run("--help", dir.path()), 0);
  std::ofstream(dir.path() / "bad.json") << "{ nope";
  EXPECT_EQ(run("serve --config bad.json", dir.path()), 2);
}

TEST(Cli, ServeRefusesBusyPort) {
  testsupport::TempDir dir("cli");
  httplib::Server holder;
  const int port = holder.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  EXPECT_EQ(run("serve --port " + std::to_string(port) + " --data-root d", dir.path()), 2);
  EXPECT_NE(slurp(dir.path() / "cli.err").find("bind"), std::string::npos);
}

TEST(Cli, SimulateIsDeterministic) {
  testsupport::TempDir dir("cli");
  ASSERT_EQ(run("simulate --users 2 --rate 5 --steps 4 --seed 3 --out a.csv", dir.path()), 0);
  ASSERT_EQ(run("simulate --users 2 --rate 5 --steps 4 --seed 3 --out b.csv", dir.path()), 0);
  const auto a = slurp(dir.path() / "a.csv");
  EXPECT_EQ(a, slurp(dir.path() / "b.csv"));
  EXPECT_EQ(a.rfind("timestep,accumulated_positives,accuracy\n", 0), 0u);
  EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 5);
  const auto summary = nlohmann::json::parse(slurp(dir.path() / "cli.err"));
  EXPECT_EQ(summary.at("steps"), 4);
}

TEST(Cli, BenchReport) {
  testsupport::TempDir dir("cli");
  ASSERT_EQ(run("bench --skin mobile-a --masks 1 --frames 3 --out r.json", dir.path()), 0);
  const auto r = nlohmann::json::parse(slurp(dir.path() / "r.json"));
  EXPECT_EQ(r.at("frames"), 3);
  EXPECT_EQ(r.at("width"), 360);
  EXPECT_GT(r.at("apply_fps").get<double>(), 0.0);
  EXPECT_DOUBLE_EQ(r.at("detections_per_frame").get<double>(), 1.0);
}
