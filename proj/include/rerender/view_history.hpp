#pragma once

// Append-only per-user store of captured frames, with paged listing and
// annotation that feeds straight into intervention compilation.
//
//   <root>/<user>/history/<source_id>/<seq>_<ts>.png
//   <root>/<user>/history/index.jsonl
//   <root>/<user>/annotations.jsonl

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "rerender/annotation.hpp"
#include "rerender/codec.hpp"
#include "rerender/error.hpp"
#include "rerender/frame_sources.hpp"
#include "rerender/intervention.hpp"

namespace rerender::history {

namespace fs = std::filesystem;

inline constexpr std::size_t kPageSize = 100;

struct ViewRecord {
  std::string record_id;
  std::string user;
  std::string source_id;
  std::uint64_t seq_no = 0;
  std::int64_t timestamp_ms = 0;
  std::string frame_path;  // relative to the store root
  bool annotated = false;
};

inline nlohmann::json to_json(const ViewRecord& r) {
  return {{"record_id", r.record_id}, {"user", r.user},
          {"source_id", r.source_id}, {"seq_no", r.seq_no},
          {"timestamp_ms", r.timestamp_ms}, {"frame_path", r.frame_path},
          {"annotated", r.annotated}};
}

inline ViewRecord record_from_json(const nlohmann::json& j) {
  ViewRecord r;
  r.record_id = j.at("record_id").get<std::string>();
  r.user = j.at("user").get<std::string>();
  r.source_id = j.at("source_id").get<std::string>();
  r.seq_no = j.at("seq_no").get<std::uint64_t>();
  r.timestamp_ms = j.at("timestamp_ms").get<std::int64_t>();
  r.frame_path = j.at("frame_path").get<std::string>();
  return r;
}

// User and source ids never contain '.', so the id splits unambiguously.
inline std::string record_id(const std::string& user, const std::string& source_id, std::uint64_t seq) {
  return user + "." + source_id + "." + std::to_string(seq);
}

struct ListQuery {
  std::optional<std::string> source_id;
  std::optional<std::int64_t> from_ms;  // inclusive
  std::optional<std::int64_t> to_ms;    // inclusive
  std::size_t page = 0;
};

struct Page {
  std::vector<ViewRecord> records;
  std::size_t total = 0;  // matches across all pages
  std::size_t page = 0;
  std::size_t page_count = 0;
};

struct AnnotateResult {
  Annotation annotation;
  engine::InterventionSpec spec;
};

namespace detail {

/// Parsed lines of a JSON-lines file. A torn or unparseable final line is
/// dropped and the file truncated back to the last good line.
inline std::vector<nlohmann::json> load_jsonl(const fs::path& path) {
  std::vector<nlohmann::json> rows;
  if (!fs::exists(path)) return rows;
  std::ifstream in(path, std::ios::binary);
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0, good_end = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    if (nl == std::string::npos) break;  // no terminator: torn write
    auto row = nlohmann::json::parse(text.begin() + static_cast<std::ptrdiff_t>(pos),
                                     text.begin() + static_cast<std::ptrdiff_t>(nl), nullptr, false);
    if (row.is_discarded()) break;
    rows.push_back(std::move(row));
    pos = good_end = nl + 1;
  }
  if (good_end < text.size()) {
    spdlog::warn("discarding {} trailing bytes of {}", text.size() - good_end, path.string());
    fs::resize_file(path, good_end);
  }
  return rows;
}

inline void append_line(const fs::path& path, const nlohmann::json& row) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  out << row.dump() << '\n';
  out.flush();
  if (!out) fail(ErrorCode::io_error, "cannot append to " + path.string());
}

inline bool chronological(const ViewRecord& a, const ViewRecord& b) {
  return std::tie(a.timestamp_ms, a.source_id, a.seq_no) < std::tie(b.timestamp_ms, b.source_id, b.seq_no);
}

}  // namespace detail

class Store {
 public:
  /// Users are those known to the registry; annotations compile into it.
  Store(fs::path root, engine::Registry& registry) : root_(std::move(root)), registry_(registry) {
    fs::create_directories(root_);
    for (const auto& user_dir : fs::directory_iterator(root_)) {
      if (!user_dir.is_directory()) continue;
      const std::string user = user_dir.path().filename().string();
      auto& u = users_[user];
      for (const auto& row : detail::load_jsonl(user_dir.path() / "history" / "index.jsonl")) {
        try {
          ViewRecord r = record_from_json(row);
          auto& st = streams_[{user, r.source_id}];
          if (!st) st = std::make_shared<StreamState>();
          st->last_ts = r.timestamp_ms;
          st->last_seq = r.seq_no;
          st->any = true;
          u.by_id[r.record_id] = u.records.size();
          u.records.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
          spdlog::warn("skipping history row for {}: {}", user, e.what());
        }
      }
      for (const auto& row : detail::load_jsonl(user_dir.path() / "annotations.jsonl")) {
        try {
          Annotation a = annotation_from_json(row);
          if (auto it = u.by_id.find(a.record_id); it != u.by_id.end()) u.records[it->second].annotated = true;
          ++u.annotation_count;
        } catch (const Error& e) {
          spdlog::warn("skipping annotation row for {}: {}", user, e.what());
        }
      }
    }
  }

  const fs::path& root() const { return root_; }

  /// Persists `f` unless less than 1/capture_fps has passed since the last
  /// persisted frame of (user, source); nullopt means dropped. Sequence
  /// numbers must also increase. Storage problems surface as record_failed.
  std::optional<ViewRecord> record(const std::string& user, const std::string& source_id, const Frame& f,
                                   double capture_fps) {
    require(capture_fps > 0.0 && std::isfinite(capture_fps), "capture_fps must be positive");
    require(sources::valid_source_id(source_id), "bad source id '" + source_id + "'");
    require(engine::valid_user_id(user), "bad user id '" + user + "'");
    require(f.valid(), "cannot record an invalid frame");

    const auto st = stream_state(user, source_id);
    std::lock_guard writer(st->mutex);
    if (st->any) {
      // 1 ms slack absorbs integer millisecond timestamps at the nominal rate.
      const double min_gap = std::max(0.0, 1000.0 / capture_fps - 1.0);
      if (f.seq_no <= st->last_seq || static_cast<double>(f.timestamp_ms - st->last_ts) < min_gap) return std::nullopt;
    }

    ViewRecord r;
    r.record_id = record_id(user, source_id, f.seq_no);
    r.user = user;
    r.source_id = source_id;
    r.seq_no = f.seq_no;
    r.timestamp_ms = f.timestamp_ms;
    r.frame_path = (fs::path(user) / "history" / source_id / frame_file_name(f)).generic_string();
    try {
      fs::create_directories(root_ / user / "history" / source_id);
      write_png(root_ / r.frame_path, f);
      std::lock_guard append(index_mutex_);
      detail::append_line(root_ / user / "history" / "index.jsonl", to_json(r));
    } catch (const std::exception& e) {
      fail(ErrorCode::record_failed, "recording " + r.record_id + " failed: " + e.what());
    }
    st->any = true;
    st->last_ts = f.timestamp_ms;
    st->last_seq = f.seq_no;

    std::unique_lock lock(mutex_);
    auto& u = users_[user];
    u.by_id[r.record_id] = u.records.size();
    u.records.push_back(r);
    return r;
  }

  /// First sequence number record() would still accept for (user, source).
  std::uint64_t next_seq(const std::string& user, const std::string& source_id) {
    const auto st = stream_state(user, source_id);
    std::lock_guard writer(st->mutex);
    return st->any ? st->last_seq + 1 : 0;
  }

  Page list(const std::string& user, const ListQuery& q = {}) const {
    if (!registry_.has_user(user)) fail(ErrorCode::not_found, "unknown user '" + user + "'");
    std::vector<ViewRecord> hits;
    {
      std::shared_lock lock(mutex_);
      if (auto it = users_.find(user); it != users_.end())
        for (const auto& r : it->second.records) {
          if (q.source_id && r.source_id != *q.source_id) continue;
          if (q.from_ms && r.timestamp_ms < *q.from_ms) continue;
          if (q.to_ms && r.timestamp_ms > *q.to_ms) continue;
          hits.push_back(r);
        }
    }
    std::stable_sort(hits.begin(), hits.end(), detail::chronological);
    Page p;
    p.total = hits.size();
    p.page = q.page;
    p.page_count = (hits.size() + kPageSize - 1) / kPageSize;
    const std::size_t begin = std::min(hits.size(), q.page * kPageSize);
    const std::size_t end = std::min(hits.size(), begin + kPageSize);
    p.records.assign(hits.begin() + static_cast<std::ptrdiff_t>(begin), hits.begin() + static_cast<std::ptrdiff_t>(end));
    return p;
  }

  std::optional<ViewRecord> find(const std::string& record_id) const {
    std::shared_lock lock(mutex_);
    const auto user = record_id.substr(0, record_id.find('.'));
    auto u = users_.find(user);
    if (u == users_.end()) return std::nullopt;
    auto it = u->second.by_id.find(record_id);
    if (it == u->second.by_id.end()) return std::nullopt;
    return u->second.records[it->second];
  }

  Frame load_frame(const ViewRecord& r) const {
    Frame f = read_png(root_ / r.frame_path);
    f.seq_no = r.seq_no;
    f.timestamp_ms = r.timestamp_ms;
    return f;
  }

  /// Users annotate only their own records. The annotation is kept only
  /// when compilation accepts it; compile errors propagate unchanged.
  AnnotateResult annotate(const std::string& user, const std::string& rid, const Region& region,
                          const std::string& label) {
    const auto rec = find(rid);
    if (!rec) fail(ErrorCode::not_found, "no history record '" + rid + "'");
    if (rec->user != user) fail(ErrorCode::permission_denied, "record '" + rid + "' belongs to another user");
    label_kind(label);
    const Frame frame = load_frame(*rec);
    if (!region.within(frame.width, frame.height))
      fail(ErrorCode::invalid_argument, "region lies outside the " + std::to_string(frame.width) + "x" +
                                            std::to_string(frame.height) + " frame");

    std::lock_guard annotating(annotate_mutex_);
    std::size_t n;
    {
      std::shared_lock lock(mutex_);
      n = users_.at(user).annotation_count;
    }
    Annotation a{rec->source_id + "_" + std::to_string(rec->seq_no) + "_a" + std::to_string(n), rid, region, label,
                 user, model::unix_ms()};
    auto spec = registry_.compile_annotation(a, frame);
    detail::append_line(root_ / user / "annotations.jsonl", to_json(a));

    std::unique_lock lock(mutex_);
    auto& u = users_.at(user);
    ++u.annotation_count;
    u.records[u.by_id.at(rid)].annotated = true;
    return {std::move(a), std::move(spec)};
  }

  std::vector<Annotation> annotations(const std::string& user) const {
    std::vector<Annotation> out;
    std::lock_guard annotating(annotate_mutex_);
    for (const auto& row : detail::load_jsonl(root_ / user / "annotations.jsonl")) out.push_back(annotation_from_json(row));
    return out;
  }

 private:
  struct StreamState {
    std::mutex mutex;
    bool any = false;
    std::int64_t last_ts = 0;
    std::uint64_t last_seq = 0;
  };

  struct UserIndex {
    std::vector<ViewRecord> records;  // append order
    std::map<std::string, std::size_t> by_id;
    std::size_t annotation_count = 0;
  };

  std::shared_ptr<StreamState> stream_state(const std::string& user, const std::string& source) {
    std::unique_lock lock(mutex_);
    auto& st = streams_[{user, source}];
    if (!st) st = std::make_shared<StreamState>();
    return st;
  }

  fs::path root_;
  engine::Registry& registry_;
  mutable std::shared_mutex mutex_;
  std::mutex index_mutex_;
  mutable std::mutex annotate_mutex_;
  std::map<std::string, UserIndex> users_;
  std::map<std::pair<std::string, std::string>, std::shared_ptr<StreamState>> streams_;
};

}  // namespace rerender::history
