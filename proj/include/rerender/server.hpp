#pragma once

// HTTP facade: accounts and login, source registration, intervention
// listing/sharing, streaming sessions (MJPEG out), frame ingest for push
// sources, and the view-history API.
//
//   <root>/accounts.json
//   <root>/interventions/<owner>/<name>/...
//   <root>/data/<user>/history/...

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>
#include <sodium.h>
#include <spdlog/spdlog.h>

#include "rerender/codec.hpp"
#include "rerender/error.hpp"
#include "rerender/frame_sources.hpp"
#include "rerender/intervention.hpp"
#include "rerender/model_hook.hpp"
#include "rerender/view_history.hpp"

namespace rerender::server {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr std::int64_t kTokenLifetimeMs = 24LL * 3600 * 1000;

struct Config {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  fs::path root = "rerender-data";
  double capture_fps = 60.0;
  int jpeg_quality = 85;
  // Argon2id at libsodium's minimum cost. Only for tests and demos.
  bool fast_password_hash = false;
  std::function<std::int64_t()> clock = model::unix_ms;
};

inline void check(const Config& c) {
  require(c.port >= 0 && c.port <= 65535, "port must be 0-65535");
  require(c.capture_fps > 0.0 && std::isfinite(c.capture_fps), "capture_fps must be positive");
  require(c.jpeg_quality >= 1 && c.jpeg_quality <= 100, "jpeg_quality must be 1-100");
  require(!c.root.empty(), "data_root must not be empty");
}

/// Applies RERENDER_HOST, RERENDER_PORT, RERENDER_DATA_ROOT,
/// RERENDER_CAPTURE_FPS and RERENDER_JPEG_QUALITY on top of `c`.
inline Config apply_env(Config c) {
  auto env = [](const char* name) -> std::optional<std::string> {
    if (const char* v = std::getenv(name); v && *v) return std::string(v);
    return std::nullopt;
  };
  try {
    if (auto v = env("RERENDER_HOST")) c.host = *v;
    if (auto v = env("RERENDER_PORT")) c.port = std::stoi(*v);
    if (auto v = env("RERENDER_DATA_ROOT")) c.root = *v;
    if (auto v = env("RERENDER_CAPTURE_FPS")) c.capture_fps = std::stod(*v);
    if (auto v = env("RERENDER_JPEG_QUALITY")) c.jpeg_quality = std::stoi(*v);
  } catch (const std::logic_error&) {
    fail(ErrorCode::invalid_argument, "malformed RERENDER_* environment value");
  }
  check(c);
  return c;
}

/// JSON config file (keys host, port, data_root, capture_fps,
/// jpeg_quality), then environment overrides.
inline Config load_config(const std::optional<fs::path>& path) {
  Config c;
  if (path) {
    const Bytes raw = read_file_bytes(*path);
    const json j = json::parse(raw.begin(), raw.end(), nullptr, false);
    if (j.is_discarded() || !j.is_object()) fail(ErrorCode::invalid_argument, "config is not a JSON object");
    try {
      c.host = j.value("host", c.host);
      c.port = j.value("port", c.port);
      c.root = j.value("data_root", c.root.string());
      c.capture_fps = j.value("capture_fps", c.capture_fps);
      c.jpeg_quality = j.value("jpeg_quality", c.jpeg_quality);
    } catch (const json::exception& e) {
      fail(ErrorCode::invalid_argument, std::string("bad config: ") + e.what());
    }
  }
  return apply_env(std::move(c));
}

inline int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return 400;
    case ErrorCode::unauthorized: return 401;
    case ErrorCode::permission_denied: return 403;
    case ErrorCode::not_found: return 404;
    case ErrorCode::conflict: return 409;
    case ErrorCode::annotation_rejected: return 422;
    case ErrorCode::hook_unavailable: return 503;
    case ErrorCode::record_failed:
    case ErrorCode::io_error: return 500;
  }
  return 500;
}

inline std::string random_token() {
  unsigned char raw[32];
  randombytes_buf(raw, sizeof raw);
  char hex[sizeof raw * 2 + 1];
  sodium_bin2hex(hex, sizeof hex, raw, sizeof raw);
  return hex;
}

// ---------------------------------------------------------------------------
// MJPEG framing

inline constexpr const char* kBoundary = "frame";

inline std::string mjpeg_part(const Bytes& jpeg, std::uint64_t seq, std::int64_t ts) {
  std::string head = std::string("--") + kBoundary + "\r\nContent-Type: image/jpeg\r\nContent-Length: " +
                     std::to_string(jpeg.size()) + "\r\nX-Seq: " + std::to_string(seq) +
                     "\r\nX-Timestamp: " + std::to_string(ts) + "\r\n\r\n";
  head.append(jpeg.begin(), jpeg.end());
  head += "\r\n";
  return head;
}

struct MjpegPart {
  std::map<std::string, std::string> headers;  // lower-cased names
  Bytes body;
};

/// Incremental parser for multipart/x-mixed-replace bodies that carry a
/// Content-Length per part.
class MjpegParser {
 public:
  std::vector<MjpegPart> feed(const char* data, std::size_t n) {
    buf_.append(data, n);
    std::vector<MjpegPart> out;
    for (;;) {
      const std::string delim = std::string("--") + kBoundary + "\r\n";
      const auto start = buf_.find(delim);
      if (start == std::string::npos) break;
      const auto head_end = buf_.find("\r\n\r\n", start);
      if (head_end == std::string::npos) break;
      MjpegPart part;
      std::size_t pos = start + delim.size();
      while (pos < head_end) {
        const auto eol = buf_.find("\r\n", pos);
        const std::string line = buf_.substr(pos, eol - pos);
        if (const auto colon = line.find(':'); colon != std::string::npos) {
          std::string name = line.substr(0, colon);
          for (auto& ch : name) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
          part.headers[name] = line.substr(line.find_first_not_of(' ', colon + 1));
        }
        pos = eol + 2;
      }
      const auto len_it = part.headers.find("content-length");
      if (len_it == part.headers.end()) fail(ErrorCode::invalid_argument, "MJPEG part without Content-Length");
      const std::size_t len = std::stoul(len_it->second);
      const std::size_t body = head_end + 4;
      if (buf_.size() < body + len) break;
      part.body.assign(buf_.begin() + static_cast<std::ptrdiff_t>(body),
                       buf_.begin() + static_cast<std::ptrdiff_t>(body + len));
      buf_.erase(0, body + len);
      out.push_back(std::move(part));
    }
    return out;
  }

 private:
  std::string buf_;
};

// ---------------------------------------------------------------------------
// Accounts

struct Account {
  std::string password_hash;
  std::vector<sources::SourceDescriptor> sources;
};

class Accounts {
 public:
  Accounts(fs::path file, bool fast_hash) : file_(std::move(file)), fast_(fast_hash) {
    if (!fs::exists(file_)) return;
    const Bytes raw = read_file_bytes(file_);
    const json j = json::parse(raw.begin(), raw.end(), nullptr, false);
    if (j.is_discarded()) fail(ErrorCode::io_error, "accounts file is corrupt: " + file_.string());
    for (const auto& [user, a] : j.at("users").items()) {
      Account acc;
      acc.password_hash = a.at("password_hash").get<std::string>();
      for (const auto& s : a.at("sources")) acc.sources.push_back(sources::source_from_json(s));
      users_[user] = std::move(acc);
    }
  }

  void create(const std::string& user, const std::string& password) {
    require(engine::valid_user_id(user), "user id must be 1-32 characters of [a-z0-9_-]");
    require(!password.empty() && password.size() <= 1024, "password must be 1-1024 bytes");
    char hash[crypto_pwhash_STRBYTES];
    const auto ops = fast_ ? crypto_pwhash_OPSLIMIT_MIN : crypto_pwhash_OPSLIMIT_INTERACTIVE;
    const auto mem = fast_ ? crypto_pwhash_MEMLIMIT_MIN : crypto_pwhash_MEMLIMIT_INTERACTIVE;
    if (crypto_pwhash_str(hash, password.data(), password.size(), ops, mem) != 0)
      fail(ErrorCode::io_error, "password hashing ran out of memory");
    std::lock_guard lock(mutex_);
    if (users_.count(user)) fail(ErrorCode::conflict, "user '" + user + "' already exists");
    users_[user] = Account{hash, {}};
    save_locked();
  }

  bool verify(const std::string& user, const std::string& password) const {
    std::string hash;
    {
      std::lock_guard lock(mutex_);
      auto it = users_.find(user);
      if (it == users_.end()) return false;
      hash = it->second.password_hash;
    }
    return crypto_pwhash_str_verify(hash.c_str(), password.data(), password.size()) == 0;
  }

  std::vector<std::string> users() const {
    std::lock_guard lock(mutex_);
    std::vector<std::string> out;
    for (const auto& [u, a] : users_) out.push_back(u);
    return out;
  }

  void add_source(const std::string& user, const sources::SourceDescriptor& d) {
    std::lock_guard lock(mutex_);
    auto& acc = users_.at(user);
    for (const auto& s : acc.sources)
      if (s.source_id == d.source_id) fail(ErrorCode::conflict, "source '" + d.source_id + "' already registered");
    acc.sources.push_back(d);
    save_locked();
  }

  std::vector<sources::SourceDescriptor> sources_of(const std::string& user) const {
    std::lock_guard lock(mutex_);
    auto it = users_.find(user);
    return it == users_.end() ? std::vector<sources::SourceDescriptor>{} : it->second.sources;
  }

  std::optional<sources::SourceDescriptor> source(const std::string& user, const std::string& id) const {
    for (auto& s : sources_of(user))
      if (s.source_id == id) return s;
    return std::nullopt;
  }

 private:
  void save_locked() const {
    json j{{"users", json::object()}};
    for (const auto& [u, a] : users_) {
      json srcs = json::array();
      for (const auto& s : a.sources) srcs.push_back(sources::to_json(s, true));
      j["users"][u] = {{"password_hash", a.password_hash}, {"sources", srcs}};
    }
    engine::detail::write_json_atomic(file_, j);
    fs::permissions(file_, fs::perms::owner_read | fs::perms::owner_write, fs::perm_options::replace);
  }

  fs::path file_;
  bool fast_;
  mutable std::mutex mutex_;
  std::map<std::string, Account> users_;
};

// ---------------------------------------------------------------------------
// Streaming sessions

struct SessionStats {
  std::uint64_t frames = 0;
  std::uint64_t recorded = 0;
  std::uint64_t record_failures = 0;
};

/// One pipeline: source → history tap → intervention chain → latest frame.
/// Stream consumers encode the latest frame themselves.
class Session {
 public:
  Session(std::string id, std::string user, sources::SourceDescriptor src, std::vector<std::string> activations)
      : id_(std::move(id)), user_(std::move(user)), source_(std::move(src)), activations_(std::move(activations)) {}
  ~Session() { stop(); }

  const std::string& id() const { return id_; }
  const std::string& user() const { return user_; }
  const sources::SourceDescriptor& source() const { return source_; }

  std::vector<std::string> activations() const {
    std::lock_guard lock(mutex_);
    return activations_;
  }
  void set_activations(std::vector<std::string> ids) {
    std::lock_guard lock(mutex_);
    activations_ = std::move(ids);
  }

  /// Blocks until a frame newer than `after` is out, the session ends, or
  /// the timeout passes. Returns the frame and its production count.
  std::pair<std::shared_ptr<const Frame>, std::uint64_t> wait_newer(std::uint64_t after,
                                                                    std::chrono::milliseconds timeout) const {
    std::unique_lock lock(mutex_);
    cv_.wait_for(lock, timeout, [&] { return produced_ > after || ended_; });
    return {produced_ > after ? latest_ : nullptr, produced_};
  }

  bool ended() const {
    std::lock_guard lock(mutex_);
    return ended_;
  }

  SessionStats stats() const {
    std::lock_guard lock(mutex_);
    return stats_;
  }

  void start(std::unique_ptr<sources::FrameStream> owned, std::shared_ptr<sources::PushStream> push,
             engine::Registry& reg, history::Store& hist, double capture_fps, std::function<std::int64_t()> clock) {
    worker_ = std::thread([this, owned = std::move(owned), push, &reg, &hist, capture_fps, clock]() mutable {
      run(owned.get(), push.get(), reg, hist, capture_fps, clock);
    });
  }

  void stop() {
    stop_ = true;
    if (worker_.joinable()) worker_.join();
    std::lock_guard lock(mutex_);
    ended_ = true;
    cv_.notify_all();
  }

 private:
  void run(sources::FrameStream* owned, sources::PushStream* push, engine::Registry& reg, history::Store& hist,
           double capture_fps, const std::function<std::int64_t()>& clock) {
    using clk = std::chrono::steady_clock;
    const auto t0 = clk::now();
    // Generated and replayed frames are restamped so history keys stay
    // unique across sessions; pushed frames keep their device stamps.
    const std::uint64_t seq_base = push ? 0 : hist.next_seq(user_, source_.source_id);
    std::uint64_t k = 0;
    while (!stop_) {
      std::optional<Frame> f;
      if (push) {
        f = push->next(std::chrono::milliseconds(100));
        if (!f) {
          if (push->finished()) break;
          continue;
        }
      } else {
        f = owned->next();
        if (!f) break;
        std::this_thread::sleep_until(t0 + std::chrono::milliseconds(sources::frame_time_ms(k, source_.fps)));
        f->seq_no = seq_base + k;
        f->timestamp_ms = clock();
        ++k;
      }
      bool recorded = false, record_failed = false;
      try {
        recorded = hist.record(user_, source_.source_id, *f, capture_fps).has_value();
      } catch (const Error& e) {
        record_failed = true;
        spdlog::warn("session {}: {}", id_, e.what());
      }
      const auto out = std::make_shared<const Frame>(engine::apply_chain(std::move(*f), activations(), reg));
      std::lock_guard lock(mutex_);
      latest_ = out;
      ++produced_;
      ++stats_.frames;
      stats_.recorded += recorded;
      stats_.record_failures += record_failed;
      cv_.notify_all();
    }
    std::lock_guard lock(mutex_);
    ended_ = true;
    cv_.notify_all();
  }

  std::string id_;
  std::string user_;
  sources::SourceDescriptor source_;
  mutable std::mutex mutex_;
  mutable std::condition_variable cv_;
  std::vector<std::string> activations_;
  std::shared_ptr<const Frame> latest_;
  std::uint64_t produced_ = 0;
  bool ended_ = false;
  SessionStats stats_;
  std::atomic<bool> stop_{false};
  std::thread worker_;
};

// ---------------------------------------------------------------------------
// Server

class Server {
 public:
  explicit Server(Config cfg)
      : cfg_((check(cfg), std::move(cfg))),
        registry_((fs::create_directories(cfg_.root), cfg_.root / "interventions")),
        history_(cfg_.root / "data", registry_),
        accounts_((init_sodium(), cfg_.root / "accounts.json"), cfg_.fast_password_hash) {
    for (const auto& user : accounts_.users()) {
      registry_.register_user(user);
      for (const auto& s : accounts_.sources_of(user))
        if (s.kind == sources::SourceKind::push) push_streams_[{user, s.source_id}] = std::make_shared<sources::PushStream>(s);
    }
    // httplib's default adds SO_REUSEPORT, which lets a second server share
    // a busy port instead of failing.
    http_.set_socket_options([](socket_t sock) {
      int yes = 1;
      ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
    });
    routes();
  }

  ~Server() { stop(); }
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds and serves on a background thread; returns the bound port.
  int start() {
    const int port = cfg_.port == 0 ? http_.bind_to_any_port(cfg_.host) : (http_.bind_to_port(cfg_.host, cfg_.port) ? cfg_.port : -1);
    if (port < 0) fail(ErrorCode::io_error, "cannot bind " + cfg_.host + ":" + std::to_string(cfg_.port));
    port_ = port;
    listener_ = std::thread([this] { http_.listen_after_bind(); });
    http_.wait_until_ready();
    spdlog::info("listening on {}:{}", cfg_.host, port_);
    return port_;
  }

  /// Serves on the calling thread until stop().
  void run() {
    start();
    listener_.join();
  }

  void stop() {
    std::vector<std::shared_ptr<Session>> all;
    {
      std::lock_guard lock(mutex_);
      for (auto& [id, s] : sessions_) all.push_back(s);
      sessions_.clear();
    }
    for (auto& s : all) s->stop();
    if (listener_.joinable()) {
      http_.stop();
      listener_.join();
    }
  }

  int port() const { return port_; }
  const Config& config() const { return cfg_; }
  engine::Registry& registry() { return registry_; }
  history::Store& history() { return history_; }

  std::shared_ptr<Session> session(const std::string& id) const {
    std::lock_guard lock(mutex_);
    auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
  }

  std::shared_ptr<sources::PushStream> push_stream(const std::string& user, const std::string& source_id) const {
    std::lock_guard lock(mutex_);
    auto it = push_streams_.find({user, source_id});
    return it == push_streams_.end() ? nullptr : it->second;
  }

 private:
  using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

  static void init_sodium() {
    if (sodium_init() < 0) fail(ErrorCode::io_error, "libsodium failed to initialise");
  }

  static void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, ErrorCode code, const std::string& msg) {
    send_json(res, http_status(code), {{"error", std::string(to_string(code))}, {"message", msg}});
  }

  static Handler guarded(Handler h) {
    return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
      try {
        h(req, res);
      } catch (const Error& e) {
        send_error(res, e.code(), e.what());
      } catch (const json::exception& e) {
        send_error(res, ErrorCode::invalid_argument, e.what());
      } catch (const std::exception& e) {
        spdlog::error("{} {}: {}", req.method, req.path, e.what());
        send_error(res, ErrorCode::io_error, e.what());
      }
    };
  }

  static json body_json(const httplib::Request& req) {
    json j = json::parse(req.body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) fail(ErrorCode::invalid_argument, "request body must be a JSON object");
    return j;
  }

  static std::vector<std::string> id_list(const json& j, const char* key) {
    if (!j.contains(key)) return {};
    if (!j.at(key).is_array()) fail(ErrorCode::invalid_argument, std::string(key) + " must be an array of ids");
    return j.at(key).get<std::vector<std::string>>();
  }

  std::string issue_token(const std::string& user) {
    const std::string token = random_token();
    std::lock_guard lock(mutex_);
    tokens_[token] = {user, cfg_.clock() + kTokenLifetimeMs};
    return token;
  }

  /// Bearer token from the Authorization header, or ?token= for clients
  /// like <img> tags that cannot set headers.
  std::string authenticate(const httplib::Request& req) {
    std::string token;
    const auto auth = req.get_header_value("Authorization");
    if (auth.rfind("Bearer ", 0) == 0) token = auth.substr(7);
    else if (req.has_param("token")) token = req.get_param_value("token");
    if (token.empty()) fail(ErrorCode::unauthorized, "missing session token");
    std::lock_guard lock(mutex_);
    auto it = tokens_.find(token);
    if (it == tokens_.end()) fail(ErrorCode::unauthorized, "unknown session token");
    if (cfg_.clock() >= it->second.second) {
      tokens_.erase(it);
      fail(ErrorCode::unauthorized, "session token expired");
    }
    return it->second.first;
  }

  std::shared_ptr<Session> owned_session(const std::string& user, const std::string& id) const {
    auto s = session(id);
    if (!s) fail(ErrorCode::not_found, "no session '" + id + "'");
    if (s->user() != user) fail(ErrorCode::permission_denied, "session belongs to another user");
    return s;
  }

  void routes() {
    http_.Get("/health", [](const httplib::Request&, httplib::Response& res) { send_json(res, 200, {{"ok", true}}); });

    http_.Post("/accounts", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const json b = body_json(req);
      const auto user = b.at("user").get<std::string>();
      accounts_.create(user, b.at("password").get<std::string>());
      registry_.register_user(user);
      send_json(res, 201, {{"user", user}});
    }));

    http_.Post("/login", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const json b = body_json(req);
      const auto user = b.at("user").get<std::string>();
      if (!accounts_.verify(user, b.at("password").get<std::string>()))
        fail(ErrorCode::unauthorized, "bad credentials");
      const auto token = issue_token(user);
      send_json(res, 200, {{"token", token}, {"user", user}, {"expires_ms", cfg_.clock() + kTokenLifetimeMs}});
    }));

    http_.Get("/sources", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto user = authenticate(req);
      json out = json::array();
      for (const auto& s : accounts_.sources_of(user)) out.push_back(sources::to_json(s));
      send_json(res, 200, {{"sources", out}});
    }));

    http_.Post("/sources", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto user = authenticate(req);
      auto d = sources::source_from_json(body_json(req));
      d.registered_user = user;
      if (d.kind == sources::SourceKind::push && d.token.empty()) d.token = random_token();
      sources::validate(d);
      accounts_.add_source(user, d);
      if (d.kind == sources::SourceKind::push) {
        std::lock_guard lock(mutex_);
        push_streams_[{user, d.source_id}] = std::make_shared<sources::PushStream>(d);
      }
      // The ingest token is shown once, at registration.
      send_json(res, 201, sources::to_json(d, true));
    }));

    http_.Get("/interventions", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto user = authenticate(req);
      json out = json::array();
      for (const auto& s : registry_.list_available(user)) out.push_back(engine::to_json(s));
      send_json(res, 200, {{"interventions", out}});
    }));

    http_.Post(R"(/interventions/([^/]+)/share)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto user = authenticate(req);
      const json b = body_json(req);
      const bool flag = b.value("shared", true);
      send_json(res, 200, engine::to_json(registry_.share(user, req.matches[1], flag)));
    }));

    http_.Patch(R"(/interventions/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto user = authenticate(req);
      send_json(res, 200, engine::to_json(registry_.update_settings(user, req.matches[1], body_json(req))));
    }));

    http_.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto user = authenticate(req);
      const json b = body_json(req);
      const auto source_id = b.at("source_id").get<std::string>();
      const auto ids = id_list(b, "activations");
      const auto src = accounts_.source(user, source_id);
      if (!src) fail(ErrorCode::not_found, "no source '" + source_id + "' registered");
      registry_.validate_activation(user, ids);
      std::unique_ptr<sources::FrameStream> owned;
      std::shared_ptr<sources::PushStream> push;
      if (src->kind == sources::SourceKind::push) {
        push = push_stream(user, source_id);
      } else {
        owned = sources::open(*src);
      }
      auto s = std::make_shared<Session>(random_token().substr(0, 16), user, *src, ids);
      {
        std::lock_guard lock(mutex_);
        sessions_[s->id()] = s;
      }
      s->start(std::move(owned), push, registry_, history_, cfg_.capture_fps, cfg_.clock);
      send_json(res, 201, {{"session_id", s->id()}, {"stream", "/stream/" + s->id()}, {"activations", ids}});
    }));

    http_.Patch(R"(/sessions/([^/]+)/activations)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto user = authenticate(req);
      auto s = owned_session(user, req.matches[1]);
      const auto ids = id_list(body_json(req), "activations");
      registry_.validate_activation(user, ids);
      s->set_activations(ids);
      send_json(res, 200, {{"session_id", s->id()}, {"activations", ids}});
    }));

    http_.Get(R"(/sessions/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto user = authenticate(req);
      auto s = owned_session(user, req.matches[1]);
      const auto st = s->stats();
      send_json(res, 200, {{"session_id", s->id()},
                           {"source_id", s->source().source_id},
                           {"activations", s->activations()},
                           {"ended", s->ended()},
                           {"frames", st.frames},
                           {"recorded", st.recorded},
                           {"record_failures", st.record_failures}});
    }));

    http_.Delete(R"(/sessions/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto user = authenticate(req);
      auto s = owned_session(user, req.matches[1]);
      {
        std::lock_guard lock(mutex_);
        sessions_.erase(s->id());
      }
      s->stop();
      res.status = 204;
    }));

    // ?frames=N ends the response after N parts.
    http_.Get(R"(/stream/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto user = authenticate(req);
      auto s = owned_session(user, req.matches[1]);
      std::uint64_t limit = 0;
      if (req.has_param("frames")) limit = std::stoull(req.get_param_value("frames"));
      const int quality = cfg_.jpeg_quality;
      res.set_header("Cache-Control", "no-store");
      res.set_chunked_content_provider(
          std::string("multipart/x-mixed-replace; boundary=") + kBoundary,
          [s, quality, limit, seen = std::uint64_t{0}, sent = std::uint64_t{0}](std::size_t, httplib::DataSink& sink) mutable {
            auto [frame, produced] = s->wait_newer(seen, std::chrono::milliseconds(500));
            if (frame) {
              seen = produced;
              const std::string part = mjpeg_part(encode_jpeg(*frame, quality), frame->seq_no, frame->timestamp_ms);
              if (!sink.write(part.data(), part.size())) return false;
              if (limit && ++sent >= limit) {
                sink.done();
                return true;
              }
            } else if (s->ended()) {
              sink.done();
              return true;
            }
            return sink.is_writable();
          });
    }));

    http_.Post(R"(/ingest/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const std::string source_id = req.matches[1];
      std::string token = req.get_header_value("X-Ingest-Token");
      if (const auto auth = req.get_header_value("Authorization"); token.empty() && auth.rfind("Bearer ", 0) == 0)
        token = auth.substr(7);
      std::shared_ptr<sources::PushStream> target;
      bool exists = false;
      {
        std::lock_guard lock(mutex_);
        for (const auto& [key, p] : push_streams_) {
          if (key.second != source_id) continue;
          exists = true;
          if (p->token_matches(token)) target = p;
        }
      }
      if (!exists) fail(ErrorCode::not_found, "no push source '" + source_id + "'");
      if (!target) fail(ErrorCode::unauthorized, "bad ingest token");
      if (!req.has_header("X-Seq") || !req.has_header("X-Timestamp"))
        fail(ErrorCode::invalid_argument, "X-Seq and X-Timestamp headers are required");
      Frame f;
      try {
        f = decode_png(Bytes(req.body.begin(), req.body.end()));
        f.seq_no = std::stoull(req.get_header_value("X-Seq"));
        f.timestamp_ms = std::stoll(req.get_header_value("X-Timestamp"));
      } catch (const std::logic_error&) {
        fail(ErrorCode::invalid_argument, "X-Seq and X-Timestamp must be integers");
      }
      target->push(token, std::move(f));
      res.status = 204;
    }));

    http_.Get("/history", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto user = authenticate(req);
      history::ListQuery q;
      try {
        if (req.has_param("source")) q.source_id = req.get_param_value("source");
        if (req.has_param("from")) q.from_ms = std::stoll(req.get_param_value("from"));
        if (req.has_param("to")) q.to_ms = std::stoll(req.get_param_value("to"));
        if (req.has_param("page")) q.page = std::stoull(req.get_param_value("page"));
      } catch (const std::logic_error&) {
        fail(ErrorCode::invalid_argument, "from, to and page must be integers");
      }
      const auto page = history_.list(user, q);
      json records = json::array();
      for (const auto& r : page.records) records.push_back(history::to_json(r));
      send_json(res, 200, {{"records", records}, {"total", page.total}, {"page", page.page}, {"page_count", page.page_count}});
    }));

    http_.Get(R"(/history/([^/]+)/frame)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto user = authenticate(req);
      const auto rec = history_.find(req.matches[1]);
      if (!rec) fail(ErrorCode::not_found, "no history record");
      if (rec->user != user) fail(ErrorCode::permission_denied, "record belongs to another user");
      const Bytes png = read_file_bytes(history_.root() / rec->frame_path);
      res.set_content(std::string(png.begin(), png.end()), "image/png");
    }));

    http_.Post(R"(/history/([^/]+)/annotate)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto user = authenticate(req);
      const json b = body_json(req);
      const auto out = history_.annotate(user, req.matches[1], region_from_json(b.at("region")),
                                         b.at("label").get<std::string>());
      send_json(res, 201, {{"annotation", to_json(out.annotation)}, {"intervention", engine::to_json(out.spec)}});
    }));
  }

  Config cfg_;
  engine::Registry registry_;
  history::Store history_;
  Accounts accounts_;
  httplib::Server http_;
  std::thread listener_;
  int port_ = -1;
  mutable std::mutex mutex_;
  std::map<std::string, std::pair<std::string, std::int64_t>> tokens_;  // token → (user, expiry)
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::map<std::pair<std::string, std::string>, std::shared_ptr<sources::PushStream>> push_streams_;
};

}  // namespace rerender::server
