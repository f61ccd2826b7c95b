// Starts a server in-process and drives it over HTTP: sign up, stream a
// synthetic phone skin, annotate the stories bar from history, activate the
// new mask and save frames from before and after.
//
//   walkthrough [out-dir]

#include <cstdio>
#include <filesystem>

#include <httplib.h>
#include <json.hpp>

#include "rerender/codec.hpp"
#include "rerender/frame_sources.hpp"
#include "rerender/server.hpp"

using namespace rerender;
using nlohmann::json;
namespace fs = std::filesystem;

int main(int argc, char** argv) {
  const fs::path out = argc > 1 ? argv[1] : "walkthrough-out";
  fs::create_directories(out);
  spdlog::set_level(spdlog::level::warn);

  server::Config cfg;
  cfg.port = 0;
  cfg.root = out / "data";
  cfg.fast_password_hash = true;
  server::Server srv(cfg);
  const int port = srv.start();
  std::printf("server on 127.0.0.1:%d, data under %s\n", port, cfg.root.c_str());

  httplib::Client cli("127.0.0.1", port);
  cli.set_read_timeout(30, 0);
  const json creds{{"user", "demo"}, {"password", "demo-password"}};
  cli.Post("/accounts", creds.dump(), "application/json");
  const auto token = json::parse(cli.Post("/login", creds.dump(), "application/json")->body).at("token").get<std::string>();
  const httplib::Headers auth{{"Authorization", "Bearer " + token}};
  auto post = [&](const std::string& path, const json& body) {
    return json::parse(cli.Post(path, auth, body.dump(), "application/json")->body);
  };

  post("/sources", {{"source_id", "phone"}, {"kind", "synthetic"}, {"skin", "mobile-a"}, {"seed", 3}});
  const auto session = post("/sessions", {{"source_id", "phone"}}).at("session_id").get<std::string>();

  auto grab = [&](int frames) {
    server::MjpegParser parser;
    std::vector<server::MjpegPart> parts;
    cli.Get("/stream/" + session + "?frames=" + std::to_string(frames), auth, [&](const char* d, std::size_t n) {
      for (auto& p : parser.feed(d, n)) parts.push_back(std::move(p));
      return true;
    });
    return decode_jpeg(parts.back().body);
  };
  write_png(out / "before.png", grab(2));
  std::printf("wrote %s\n", (out / "before.png").c_str());

  const auto history = json::parse(cli.Get("/history", auth)->body);
  const auto record = history.at("records")[0].at("record_id").get<std::string>();
  std::printf("history holds %d frames; annotating %s\n", history.at("total").get<int>(), record.c_str());

  // The synthetic skin knows where its elements are; a person would drag a box.
  const Region bar = sources::synth_skin("mobile-a", 3, 0).find("stories-bar")->region;
  const auto made = post("/history/" + record + "/annotate", {{"region", region_json(bar)}, {"label", "mask-stories"}});
  const auto id = made.at("intervention").at("intervention_id").get<std::string>();
  std::printf("created intervention %s\n", id.c_str());

  cli.Patch("/sessions/" + session + "/activations", auth, json{{"activations", {id}}}.dump(), "application/json");
  write_png(out / "after.png", grab(3));
  std::printf("wrote %s (stories bar occluded)\n", (out / "after.png").c_str());

  srv.stop();
  return 0;
}
