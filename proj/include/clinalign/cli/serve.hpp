#pragma once

// Blinded ranking service. Handlers are plain functions returning a status
// and a JSON body so they can be exercised without sockets; attach() wires
// them into an httplib server.

#include <fcntl.h>
#include <unistd.h>

#include <cctype>
#include <chrono>
#include <ctime>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <vector>

// httplib pulls in <resolv.h>; Eigen has to be seen first.
#include <Eigen/Dense>
#include <httplib.h>
#include <json.hpp>

#include "clinalign/common.hpp"
#include "clinalign/datastore.hpp"
#include "clinalign/preference.hpp"
#include "clinalign/rng.hpp"

namespace clinalign::cli {

struct Candidate {
  std::string token;
  std::string image;  // path relative to the image directory
};

struct RankingCase {
  std::string case_id;
  std::vector<Candidate> candidates;
};

// {"cases": [{"case_id": ..., "candidates": [{"token": ..., "image": ...}]}]}
inline std::vector<RankingCase> cases_from_json(const json& j) {
  std::vector<RankingCase> out;
  try {
    for (const auto& c : j.at("cases")) {
      RankingCase rc{c.at("case_id").get<std::string>(), {}};
      for (const auto& k : c.at("candidates"))
        rc.candidates.push_back({k.at("token").get<std::string>(), k.at("image").get<std::string>()});
      out.push_back(std::move(rc));
    }
  } catch (const json::exception& e) {
    throw LoadError(std::string("case set: ") + e.what());
  }
  return out;
}

inline std::vector<RankingCase> load_cases(const fs::path& path) {
  try {
    return cases_from_json(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

namespace detail {

inline bool word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

inline std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace detail

// True when `name` occurs in `text` with no letter or digit directly on
// either side, ignoring case. Short names such as "ti" therefore do not trip
// on ordinary words ("presentation").
inline bool mentions(std::string_view text, std::string_view name) {
  if (name.empty()) return false;
  const std::string t = detail::ascii_lower(text), n = detail::ascii_lower(name);
  for (std::size_t pos = t.find(n); pos != std::string::npos; pos = t.find(n, pos + 1)) {
    const bool left = pos == 0 || !detail::word_char(t[pos - 1]) || !detail::word_char(n.front());
    const std::size_t end = pos + n.size();
    const bool right = end == t.size() || !detail::word_char(t[end]) || !detail::word_char(n.back());
    if (left && right) return true;
  }
  return false;
}

struct Reply {
  int status = 200;
  json body;
};

struct ServeOptions {
  std::uint64_t ui_seed = 0;  // substream for session and presentation shuffles
  fs::path image_dir;         // empty: image existence is not checked
  fs::path log_path;
};

class RankingService {
 public:
  RankingService(std::vector<RankingCase> cases, SealedKey key, ServeOptions opt)
      : key_(std::move(key)), opt_(std::move(opt)) {
    for (const auto& [_, m] : key_) methods_.insert(m);
    for (auto& c : cases) {
      check_case(c);
      order_.push_back(c.case_id);
      if (!cases_.emplace(c.case_id, std::move(c)).second)
        throw LoadError("case set: duplicate case id '" + order_.back() + "'");
    }
    if (cases_.empty()) throw LoadError("case set: no cases");
    if (opt_.log_path.empty()) throw Error("serve: no ranking log path");
    if (fs::exists(opt_.log_path))
      for (const auto& j : read_jsonl(opt_.log_path)) {
        const auto r = ranking_from_json(j);
        done_[r.rater_id].insert(r.case_id);
        ++submissions_;
      }
  }

  RankingService(const RankingService&) = delete;
  RankingService& operator=(const RankingService&) = delete;
  ~RankingService() {
    if (fd_ >= 0) ::close(fd_);
  }

  const std::set<std::string>& method_names() const { return methods_; }

  // GET /session?rater=
  Reply session(const std::string& rater) const {
    if (auto bad = check_rater(rater)) return *bad;
    std::vector<std::string> ids = order_;
    Rng rng(substream_seed(opt_.ui_seed, "session/" + rater));
    rng.shuffle(ids);
    std::lock_guard lock(mu_);
    json completed = json::array();
    if (auto it = done_.find(rater); it != done_.end())
      for (const auto& id : ids)
        if (it->second.count(id)) completed.push_back(id);
    return blind({200, {{"rater_id", rater}, {"case_ids", ids}, {"completed", completed}}});
  }

  // GET /case/{id}?rater=
  Reply get_case(const std::string& case_id, const std::string& rater) const {
    auto it = cases_.find(case_id);
    if (it == cases_.end()) return {404, {{"error", "unknown case"}}};
    const auto tokens = presentation(it->second, rater);
    json cands = json::array();
    for (const auto& t : tokens)
      for (const auto& c : it->second.candidates)
        if (c.token == t) cands.push_back({{"token", c.token}, {"image_url", "/image/" + c.image}});
    return blind({200, {{"case_id", case_id}, {"candidates", cands}, {"presentation", tokens}}});
  }

  // POST /ranking
  Reply post_ranking(const std::string& body) {
    RankingRecord r;
    try {
      r = parse_ranking(json::parse(body));
    } catch (const json::exception&) {
      return {400, {{"error", "body is not valid JSON"}}};
    } catch (const Error& e) {
      return blind({400, {{"error", e.what()}}});
    }
    if (auto bad = check_rater(r.rater_id)) return *bad;
    if (r.case_id.empty()) return {400, {{"error", "missing case_id"}}};
    auto it = cases_.find(r.case_id);
    if (it == cases_.end()) return {404, {{"error", "unknown case"}}};
    std::set<std::string> want, got(r.order.begin(), r.order.end());
    for (const auto& c : it->second.candidates) want.insert(c.token);
    if (got != want || r.order.size() != want.size())
      return {422, {{"error", "order is not a permutation of the case's candidates"}}};
    const auto shown = presentation(it->second, r.rater_id);
    if (!r.presentation.empty() && r.presentation != shown)
      return {422, {{"error", "presentation does not match the order served for this rater"}}};
    r.presentation = shown;
    r.ts = utc_now();

    std::lock_guard lock(mu_);
    auto& mine = done_[r.rater_id];
    if (mine.count(r.case_id)) return {409, {{"error", "case already ranked by this rater"}}};
    append_line(to_json(r).dump() + "\n");
    mine.insert(r.case_id);
    ++submissions_;
    return blind({201, {{"status", "recorded"},
                        {"case_id", r.case_id},
                        {"rater_id", r.rater_id},
                        {"completed", mine.size()},
                        {"total", cases_.size()}}});
  }

  // GET /progress[?rater=]
  Reply progress(const std::string& rater) const {
    std::lock_guard lock(mu_);
    if (rater.empty()) {
      json per = json::object();
      for (const auto& [id, s] : done_) per[id] = s.size();
      return blind({200, {{"total_cases", cases_.size()}, {"submissions", submissions_}, {"raters", per}}});
    }
    if (auto bad = check_rater(rater)) return *bad;
    json ids = json::array();
    std::size_t n = 0;
    if (auto it = done_.find(rater); it != done_.end()) {
      n = it->second.size();
      for (const auto& id : it->second) ids.push_back(id);
    }
    return blind({200, {{"rater_id", rater}, {"completed", n}, {"total", cases_.size()}, {"completed_case_ids", ids}}});
  }

  // Presentation order for one rater, stable across requests.
  std::vector<std::string> presentation(const RankingCase& c, const std::string& rater) const {
    std::vector<std::string> t;
    for (const auto& k : c.candidates) t.push_back(k.token);
    Rng rng(substream_seed(opt_.ui_seed, "case/" + c.case_id + "/" + rater));
    rng.shuffle(t);
    return t;
  }

  void attach(httplib::Server& srv) {
    auto send = [](httplib::Response& res, const Reply& r) {
      res.status = r.status;
      res.set_content(r.body.dump(), "application/json");
    };
    srv.Get("/session", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, session(req.get_param_value("rater")));
    });
    srv.Get(R"(/case/([^/]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, get_case(req.matches[1], req.get_param_value("rater")));
    });
    srv.Post("/ranking", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, post_ranking(req.body));
    });
    srv.Get("/progress", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, progress(req.get_param_value("rater")));
    });
    if (!opt_.image_dir.empty() && !srv.set_mount_point("/image", opt_.image_dir.string()))
      throw LoadError("serve: image directory not found: " + opt_.image_dir.string());
  }

 private:
  void check_case(const RankingCase& c) const {
    if (c.case_id.empty()) throw LoadError("case set: empty case id");
    if (c.candidates.size() < 2) throw LoadError("case '" + c.case_id + "': fewer than two candidates");
    std::set<std::string> seen;
    for (const auto& k : c.candidates) {
      if (!seen.insert(k.token).second) throw LoadError("case '" + c.case_id + "': repeated token");
      if (!key_.count(k.token)) throw LoadError("case '" + c.case_id + "': token missing from the sealed key");
      if (k.image.find("..") != std::string::npos) throw LoadError("case '" + c.case_id + "': image path escapes");
      if (!opt_.image_dir.empty() && !fs::exists(opt_.image_dir / k.image))
        throw LoadError("case '" + c.case_id + "': image not found: " + (opt_.image_dir / k.image).string());
      for (const auto& m : methods_)
        if (mentions(c.case_id, m) || mentions(k.token, m) || mentions(k.image, m))
          throw LoadError("case '" + c.case_id + "': a case id, token or image path reveals a method name");
    }
  }

  std::optional<Reply> check_rater(const std::string& rater) const {
    if (rater.empty()) return Reply{400, {{"error", "missing rater"}}};
    for (char ch : rater)
      if (!detail::word_char(ch) && ch != '-' && ch != '_') return Reply{400, {{"error", "malformed rater id"}}};
    return std::nullopt;
  }

  // Last line of defence: a body that names a method is never sent.
  Reply blind(Reply r) const {
    const std::string text = r.body.dump();
    for (const auto& m : methods_)
      if (mentions(text, m)) return {500, {{"error", "response withheld by the blinding check"}}};
    return r;
  }

  // One write(2) per record on an O_APPEND descriptor, under the lock.
  void append_line(const std::string& line) {
    if (fd_ < 0) {
      if (opt_.log_path.has_parent_path()) fs::create_directories(opt_.log_path.parent_path());
      fd_ = ::open(opt_.log_path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
      if (fd_ < 0) throw Error("serve: cannot open ranking log " + opt_.log_path.string());
    }
    const char* p = line.data();
    std::size_t left = line.size();
    while (left > 0) {
      const ssize_t n = ::write(fd_, p, left);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw Error("serve: write to ranking log failed");
      }
      p += n;
      left -= static_cast<std::size_t>(n);
    }
  }

  static std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
  }

  std::map<std::string, RankingCase> cases_;
  std::vector<std::string> order_;
  SealedKey key_;
  std::set<std::string> methods_;
  ServeOptions opt_;
  mutable std::mutex mu_;
  std::map<std::string, std::set<std::string>> done_;
  std::size_t submissions_ = 0;
  int fd_ = -1;
};

}  // namespace clinalign::cli
