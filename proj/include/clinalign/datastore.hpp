#pragma once

// On-disk formats and in-memory models shared by every other module.
//
// EMB1 embedding file layout (all integers little-endian):
//   bytes 0..3   magic "EMB1"
//   bytes 4..7   u32 row count
//   bytes 8..11  u32 dimension
//   then rows*dim float32 values, row-major, little-endian.
// Per-row metadata lives in a sidecar "<path>.meta.jsonl", one JSON object
// per row in row order.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "clinalign/common.hpp"
#include "clinalign/rng.hpp"

namespace clinalign {

namespace fs = std::filesystem;
using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "EMB1 I/O assumes a little-endian host");

inline constexpr char kEmbMagic[4] = {'E', 'M', 'B', '1'};
inline constexpr std::size_t kEmbHeaderBytes = 12;

struct EmbeddingMatrix {
  std::string encoder_id;
  std::uint32_t dim = 0;
  std::uint32_t rows = 0;
  std::vector<float> data;
  std::vector<std::string> ids;

  std::span<const float> row(std::size_t i) const {
    return {data.data() + i * dim, dim};
  }

  Vector row_as_double(std::size_t i) const {
    auto r = row(i);
    return Vector(r.begin(), r.end());
  }

  // Row index of a sample id, or nullopt.
  std::optional<std::size_t> find(std::string_view id) const {
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (ids[i] == id) return i;
    return std::nullopt;
  }

  std::unordered_map<std::string, std::size_t> index() const {
    std::unordered_map<std::string, std::size_t> out;
    for (std::size_t i = 0; i < ids.size(); ++i) out.emplace(ids[i], i);
    return out;
  }

  void validate() const {
    if (dim == 0) throw LoadError("embedding matrix: dim must be positive");
    if (static_cast<std::size_t>(rows) * dim != data.size())
      throw LoadError("embedding matrix: rows x dim does not match data length");
    for (std::size_t r = 0; r < rows; ++r)
      for (float v : row(r))
        if (!std::isfinite(v))
          throw LoadError("embedding matrix: non-finite value in row " + std::to_string(r));
    if (!ids.empty()) {
      if (ids.size() != rows)
        throw LoadError("embedding matrix: " + std::to_string(ids.size()) + " ids for " +
                        std::to_string(rows) + " rows");
      std::unordered_set<std::string> seen;
      for (const auto& id : ids)
        if (!seen.insert(id).second) throw LoadError("embedding matrix: duplicate id '" + id + "'");
    }
  }
};

// ---------------------------------------------------------------------------
// EMB1 codec

inline std::string encode_emb1(std::uint32_t rows, std::uint32_t dim, std::span<const float> data) {
  if (static_cast<std::size_t>(rows) * dim != data.size())
    throw LoadError("encode_emb1: rows x dim does not match data length");
  std::string out(kEmbHeaderBytes + data.size() * sizeof(float), '\0');
  std::memcpy(out.data(), kEmbMagic, 4);
  std::memcpy(out.data() + 4, &rows, 4);
  std::memcpy(out.data() + 8, &dim, 4);
  if (!data.empty()) std::memcpy(out.data() + kEmbHeaderBytes, data.data(), data.size() * sizeof(float));
  return out;
}

// Decodes the binary block of an EMB1 payload starting at `offset`.
// Returns the number of bytes consumed.
inline std::size_t decode_emb1(std::string_view bytes, std::size_t offset, std::uint32_t& rows,
                               std::uint32_t& dim, std::vector<float>& data) {
  if (bytes.size() < offset + kEmbHeaderBytes) throw LoadError("malformed header: file too short");
  if (std::memcmp(bytes.data() + offset, kEmbMagic, 4) != 0)
    throw LoadError("malformed header: bad magic (expected EMB1)");
  std::memcpy(&rows, bytes.data() + offset + 4, 4);
  std::memcpy(&dim, bytes.data() + offset + 8, 4);
  if (dim == 0) throw LoadError("malformed header: dim is zero");
  const std::size_t want = static_cast<std::size_t>(rows) * dim * sizeof(float);
  const std::size_t have = bytes.size() - offset - kEmbHeaderBytes;
  if (have < want) throw LoadError("truncated matrix: header declares " + std::to_string(rows) +
                                   " rows, data holds " + std::to_string(have / (dim * sizeof(float))));
  data.resize(static_cast<std::size_t>(rows) * dim);
  if (want) std::memcpy(data.data(), bytes.data() + offset + kEmbHeaderBytes, want);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < dim; ++c)
      if (!std::isfinite(data[r * dim + c]))
        throw LoadError("non-finite value in row " + std::to_string(r));
  return kEmbHeaderBytes + want;
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline fs::path meta_sidecar(const fs::path& emb_path) {
  return fs::path(emb_path.string() + ".meta.jsonl");
}

// ---------------------------------------------------------------------------
// Sample metadata

enum class Split { kTrain, kTest, kGenerated };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kTest: return "test";
    case Split::kGenerated: return "generated";
  }
  return "?";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "test") return Split::kTest;
  if (s == "generated") return Split::kGenerated;
  throw LoadError("unknown split '" + std::string(s) + "'");
}

struct SampleMeta {
  std::string id;
  Split split = Split::kTrain;
  std::string label;
  std::optional<std::string> source_method;
  std::optional<std::string> reference_id;

  void validate() const {
    if (id.empty()) throw LoadError("sample meta: empty id");
    if (split != Split::kGenerated && source_method)
      throw LoadError("sample meta: real sample '" + id + "' carries source_method");
  }
};

inline json to_json(const SampleMeta& m) {
  json j;
  j["id"] = m.id;
  j["split"] = std::string(to_string(m.split));
  j["label"] = m.label;
  j["source_method"] = m.source_method ? json(*m.source_method) : json(nullptr);
  j["reference_id"] = m.reference_id ? json(*m.reference_id) : json(nullptr);
  return j;
}

inline SampleMeta sample_meta_from_json(const json& j) {
  SampleMeta m;
  m.id = j.at("id").get<std::string>();
  m.split = parse_split(j.at("split").get<std::string>());
  m.label = j.at("label").get<std::string>();
  if (j.contains("source_method") && !j["source_method"].is_null())
    m.source_method = j["source_method"].get<std::string>();
  if (j.contains("reference_id") && !j["reference_id"].is_null())
    m.reference_id = j["reference_id"].get<std::string>();
  m.validate();
  return m;
}

inline std::vector<json> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  std::vector<json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw LoadError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<SampleMeta> read_meta(const fs::path& path) {
  std::vector<SampleMeta> out;
  std::size_t line = 0;
  for (const auto& j : read_jsonl(path)) {
    ++line;
    try {
      out.push_back(sample_meta_from_json(j));
    } catch (const json::exception& e) {
      throw LoadError(path.string() + ": record " + std::to_string(line) + ": " + e.what());
    }
  }
  return out;
}

inline void write_meta(const fs::path& path, std::span<const SampleMeta> meta) {
  std::string body;
  for (const auto& m : meta) body += to_json(m).dump() + "\n";
  write_file(path, body);
}

// ---------------------------------------------------------------------------
// Embedding files

// Loads an EMB1 file. Row ids come from the sidecar; when the sidecar is
// absent ids default to the decimal row index.
inline EmbeddingMatrix load_embeddings(const fs::path& path, std::string encoder_id = {}) {
  EmbeddingMatrix m;
  m.encoder_id = std::move(encoder_id);
  const std::string bytes = read_file(path);
  const std::size_t used = decode_emb1(bytes, 0, m.rows, m.dim, m.data);
  if (used != bytes.size())
    throw LoadError(path.string() + ": trailing bytes after declared matrix (dim mismatch?)");
  const fs::path side = meta_sidecar(path);
  if (fs::exists(side)) {
    for (const auto& j : read_jsonl(side)) m.ids.push_back(j.at("id").get<std::string>());
    if (m.ids.size() != m.rows)
      throw LoadError(side.string() + ": " + std::to_string(m.ids.size()) +
                      " sidecar rows for " + std::to_string(m.rows) + " matrix rows");
  } else {
    for (std::uint32_t r = 0; r < m.rows; ++r) m.ids.push_back(std::to_string(r));
  }
  m.validate();
  return m;
}

inline void save_embeddings(const fs::path& path, const EmbeddingMatrix& m) {
  m.validate();
  write_file(path, encode_emb1(m.rows, m.dim, m.data));
}

// Writes the matrix and a sidecar carrying full sample metadata.
inline void save_embeddings(const fs::path& path, const EmbeddingMatrix& m,
                            std::span<const SampleMeta> meta) {
  if (meta.size() != m.rows) throw Error("save_embeddings: meta/rows length mismatch");
  save_embeddings(path, m);
  write_meta(meta_sidecar(path), meta);
}

// Writes a sidecar with ids only (text-embedding matrices keyed by sample id
// or class label).
inline void save_embeddings_with_ids(const fs::path& path, const EmbeddingMatrix& m) {
  save_embeddings(path, m);
  std::string body;
  for (const auto& id : m.ids) body += json{{"id", id}}.dump() + "\n";
  write_file(meta_sidecar(path), body);
}

inline EmbeddingMatrix make_matrix(std::string encoder_id, std::vector<std::string> ids,
                                   const std::vector<Vector>& rows) {
  EmbeddingMatrix m;
  m.encoder_id = std::move(encoder_id);
  m.rows = static_cast<std::uint32_t>(rows.size());
  m.dim = rows.empty() ? 0 : static_cast<std::uint32_t>(rows.front().size());
  m.ids = std::move(ids);
  for (const auto& r : rows) {
    if (r.size() != m.dim) throw Error("make_matrix: ragged rows");
    for (double v : r) m.data.push_back(static_cast<float>(v));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Dataset manifest

struct EmbeddingRef {
  std::string path;
  std::string encoder_id;
  std::string role;  // e.g. "train", "test", "generated:<method>", "prompt", "checklist"
};

struct DatasetManifest {
  std::string name;
  std::vector<std::string> label_set;
  // split -> label -> count
  std::map<std::string, std::map<std::string, std::size_t>> counts;
  std::vector<EmbeddingRef> embeddings;
  std::map<std::string, std::string> image_dirs;
  std::string prompt_file;
  std::string checklist_file;
  std::string meta_file;
  std::vector<SampleMeta> samples;

  bool has_label(std::string_view l) const {
    return std::find(label_set.begin(), label_set.end(), l) != label_set.end();
  }

  std::size_t split_total(const std::string& split) const {
    std::size_t n = 0;
    if (auto it = counts.find(split); it != counts.end())
      for (const auto& [_, c] : it->second) n += c;
    return n;
  }

  // Recount `counts` from `samples`.
  void recount() {
    counts.clear();
    for (const auto& s : samples) counts[std::string(to_string(s.split))][s.label] += 1;
  }

  void validate() const {
    if (label_set.empty()) throw LoadError("manifest '" + name + "': empty label set");
    std::set<std::string> uniq(label_set.begin(), label_set.end());
    if (uniq.size() != label_set.size()) throw LoadError("manifest '" + name + "': duplicate labels");
    for (const auto& [split, per_label] : counts)
      for (const auto& [label, _] : per_label)
        if (!has_label(label))
          throw LoadError("manifest '" + name + "': count for undeclared label '" + label + "'");
    if (samples.empty()) return;
    std::map<std::string, std::map<std::string, std::size_t>> seen;
    std::unordered_set<std::string> ids;
    for (const auto& s : samples) {
      s.validate();
      if (!has_label(s.label))
        throw LoadError("manifest '" + name + "': sample '" + s.id + "' has undeclared label '" + s.label + "'");
      if (!ids.insert(s.id).second) throw LoadError("manifest '" + name + "': duplicate sample id '" + s.id + "'");
      seen[std::string(to_string(s.split))][s.label] += 1;
    }
    if (!counts.empty()) {
      for (const auto& [split, per_label] : counts)
        for (const auto& [label, c] : per_label) {
          std::size_t got = 0;
          if (auto it = seen.find(split); it != seen.end())
            if (auto jt = it->second.find(label); jt != it->second.end()) got = jt->second;
          if (got != c)
            throw LoadError("manifest '" + name + "': " + split + "/" + label + " declares " +
                            std::to_string(c) + " samples, found " + std::to_string(got));
        }
      for (const auto& [split, per_label] : seen)
        for (const auto& [label, c] : per_label)
          if (!counts.count(split) || !counts.at(split).count(label))
            throw LoadError("manifest '" + name + "': undeclared samples in " + split + "/" + label);
    }
  }

  // Checks that every sample of `split` has a row in the matrix and the row
  // count equals the split total.
  void reconcile(const EmbeddingMatrix& m, const std::string& split) const {
    const std::size_t want = split_total(split);
    if (want != m.rows)
      throw LoadError("manifest '" + name + "': split " + split + " totals " + std::to_string(want) +
                      " but matrix has " + std::to_string(m.rows) + " rows");
    if (samples.empty()) return;
    auto idx = m.index();
    for (const auto& s : samples)
      if (to_string(s.split) == split && !idx.count(s.id))
        throw LoadError("manifest '" + name + "': sample '" + s.id + "' missing from matrix");
  }
};

inline json to_json(const DatasetManifest& m) {
  json j;
  j["name"] = m.name;
  j["label_set"] = m.label_set;
  j["counts"] = m.counts;
  j["embeddings"] = json::array();
  for (const auto& e : m.embeddings)
    j["embeddings"].push_back({{"path", e.path}, {"encoder_id", e.encoder_id}, {"role", e.role}});
  j["image_dirs"] = m.image_dirs;
  if (!m.prompt_file.empty()) j["prompt_file"] = m.prompt_file;
  if (!m.checklist_file.empty()) j["checklist_file"] = m.checklist_file;
  if (!m.meta_file.empty()) j["meta_file"] = m.meta_file;
  if (!m.samples.empty()) {
    j["samples"] = json::array();
    for (const auto& s : m.samples) j["samples"].push_back(to_json(s));
  }
  return j;
}

inline DatasetManifest manifest_from_json(const json& j, const fs::path& base_dir = {}) {
  DatasetManifest m;
  m.name = j.at("name").get<std::string>();
  m.label_set = j.at("label_set").get<std::vector<std::string>>();
  if (j.contains("counts"))
    m.counts = j["counts"].get<std::map<std::string, std::map<std::string, std::size_t>>>();
  if (j.contains("embeddings"))
    for (const auto& e : j["embeddings"])
      m.embeddings.push_back({e.at("path").get<std::string>(), e.value("encoder_id", ""),
                              e.value("role", "")});
  if (j.contains("image_dirs")) m.image_dirs = j["image_dirs"].get<std::map<std::string, std::string>>();
  m.prompt_file = j.value("prompt_file", "");
  m.checklist_file = j.value("checklist_file", "");
  m.meta_file = j.value("meta_file", "");
  if (j.contains("samples"))
    for (const auto& s : j["samples"]) m.samples.push_back(sample_meta_from_json(s));
  else if (!m.meta_file.empty())
    m.samples = read_meta(base_dir / m.meta_file);
  m.validate();
  return m;
}

inline DatasetManifest load_manifest(const fs::path& path) {
  try {
    return manifest_from_json(json::parse(read_file(path)), path.parent_path());
  } catch (const json::exception& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// k-shot subsetting

struct KShotSubset {
  DatasetManifest manifest;
  // Classes with fewer than k train samples; all of their samples are kept.
  std::vector<std::string> short_classes;
};

// Stratified train subset with min(k, available) samples per class. Each
// class draws from its own seeded permutation of its id-sorted train
// samples, so the result does not depend on sample order in the manifest.
// Non-train samples are kept unchanged.
inline KShotSubset kshot_subset(const DatasetManifest& manifest, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw Error("kshot_subset: k = 0 yields an empty train split");
  if (manifest.samples.empty()) throw Error("kshot_subset: manifest carries no samples");
  KShotSubset out;
  out.manifest = manifest;
  out.manifest.samples.clear();
  std::map<std::string, std::vector<const SampleMeta*>> by_class;
  for (const auto& s : manifest.samples) {
    if (s.split == Split::kTrain)
      by_class[s.label].push_back(&s);
    else
      out.manifest.samples.push_back(s);
  }
  for (const auto& label : manifest.label_set) {
    auto pool = by_class[label];
    std::sort(pool.begin(), pool.end(), [](auto* a, auto* b) { return a->id < b->id; });
    Rng rng(substream_seed(seed, "kshot/" + label));
    rng.shuffle(pool);
    if (pool.size() < k) out.short_classes.push_back(label);
    const std::size_t take = std::min(k, pool.size());
    for (std::size_t i = 0; i < take; ++i) out.manifest.samples.push_back(*pool[i]);
  }
  out.manifest.recount();
  out.manifest.name = manifest.name + "-" + std::to_string(k) + "shot";
  return out;
}

// ---------------------------------------------------------------------------
// Score tables

struct ScoreRow {
  std::string id;
  std::string method;
  double vdc = 0, ccs = 0, dd = 0, sfs = 0, cas = 0;
};

using ScoreTable = std::vector<ScoreRow>;

inline constexpr std::string_view kScoreHeader = "id,method,vdc,ccs,dd,sfs,cas";

inline std::string csv_escape(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::vector<std::string> csv_split(std::string_view line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else if (c != '\r') {
      out.back() += c;
    }
  }
  return out;
}

inline std::string write_score_csv(const ScoreTable& table) {
  std::string out(kScoreHeader);
  out += '\n';
  for (const auto& r : table) {
    out += csv_escape(r.id) + ',' + csv_escape(r.method) + ',' + format_real(r.vdc) + ',' +
           format_real(r.ccs) + ',' + format_real(r.dd) + ',' + format_real(r.sfs) + ',' +
           format_real(r.cas) + '\n';
  }
  return out;
}

inline ScoreTable parse_score_csv(std::string_view text) {
  ScoreTable out;
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line)) throw LoadError("score csv: empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kScoreHeader) throw LoadError("score csv: header must be '" + std::string(kScoreHeader) + "'");
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    auto f = csv_split(line);
    if (f.size() != 7) throw LoadError("score csv line " + std::to_string(n) + ": expected 7 fields");
    try {
      out.push_back({f[0], f[1], std::stod(f[2]), std::stod(f[3]), std::stod(f[4]), std::stod(f[5]),
                     std::stod(f[6])});
    } catch (const std::exception&) {
      throw LoadError("score csv line " + std::to_string(n) + ": non-numeric score");
    }
  }
  return out;
}

}  // namespace clinalign
