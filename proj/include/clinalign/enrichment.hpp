#pragma once

// Schema validation for enriched prompts and per-class checklists.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "clinalign/common.hpp"
#include "clinalign/datastore.hpp"

namespace clinalign {

// ---------------------------------------------------------------------------
// Schema

enum class FieldKind {
  kText,    // free phrase, optional word limit
  kChoice,  // exactly one value from `allowed`
  kList,    // comma-separated values, each from `allowed` (or free if empty)
};

struct FieldSpec {
  std::string key;
  FieldKind kind = FieldKind::kText;
  std::vector<std::string> allowed;
  std::optional<std::size_t> max_words;
};

struct ForbiddenRule {
  std::string label;
  std::vector<std::string> terms;
};

struct SchemaSpec {
  std::string domain;
  std::vector<std::string> labels;
  std::vector<FieldSpec> fields;  // schema order; all required
  std::vector<ForbiddenRule> forbidden;

  const FieldSpec* field(std::string_view key) const {
    for (const auto& f : fields)
      if (f.key == key) return &f;
    return nullptr;
  }

  void validate() const {
    static const std::set<std::string> domains{"dermatology", "radiology", "histopathology", "ophthalmology"};
    if (!domains.count(domain)) throw LoadError("schema: unknown domain '" + domain + "'");
    if (fields.empty()) throw LoadError("schema '" + domain + "': no fields");
    std::set<std::string> seen;
    for (const auto& f : fields) {
      if (!seen.insert(f.key).second) throw LoadError("schema '" + domain + "': duplicate field '" + f.key + "'");
      if (f.kind == FieldKind::kChoice && f.allowed.empty())
        throw LoadError("schema '" + domain + "': choice field '" + f.key + "' has no allowed values");
    }
    for (const auto& r : forbidden)
      if (std::find(labels.begin(), labels.end(), r.label) == labels.end())
        throw LoadError("schema '" + domain + "': forbidden-term rule for unknown label '" + r.label + "'");
  }
};

inline FieldKind parse_field_kind(std::string_view s) {
  if (s == "text") return FieldKind::kText;
  if (s == "choice") return FieldKind::kChoice;
  if (s == "list") return FieldKind::kList;
  throw LoadError("schema: unknown field kind '" + std::string(s) + "'");
}

inline SchemaSpec schema_from_json(const json& j) {
  SchemaSpec s;
  s.domain = j.at("domain").get<std::string>();
  s.labels = j.value("labels", std::vector<std::string>{});
  for (const auto& f : j.at("fields")) {
    FieldSpec fs;
    fs.key = f.at("key").get<std::string>();
    fs.kind = parse_field_kind(f.value("kind", "text"));
    fs.allowed = f.value("allowed", std::vector<std::string>{});
    if (f.contains("max_words")) fs.max_words = f.at("max_words").get<std::size_t>();
    s.fields.push_back(std::move(fs));
  }
  if (j.contains("forbidden"))
    for (const auto& [label, terms] : j.at("forbidden").items())
      s.forbidden.push_back({label, terms.get<std::vector<std::string>>()});
  s.validate();
  return s;
}

inline SchemaSpec load_schema(const fs::path& path) {
  try {
    return schema_from_json(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Text helpers

namespace detail {

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    auto comma = s.find(',', start);
    if (comma == std::string_view::npos) comma = s.size();
    if (auto item = trim(s.substr(start, comma - start)); !item.empty()) out.push_back(item);
    start = comma + 1;
  }
  return out;
}

inline std::size_t word_count(std::string_view s) {
  std::size_t n = 0;
  bool in_word = false;
  for (char c : s) {
    const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

// Whole-word, case-insensitive phrase search.
inline bool contains_term(std::string_view text, std::string_view term) {
  const std::string t = lower(text), p = lower(term);
  if (p.empty()) return false;
  auto is_word = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; };
  for (auto pos = t.find(p); pos != std::string::npos; pos = t.find(p, pos + 1)) {
    const bool left = pos == 0 || !is_word(t[pos - 1]);
    const bool right = pos + p.size() == t.size() || !is_word(t[pos + p.size()]);
    if (left && right) return true;
  }
  return false;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Enriched prompts

struct EnrichedPrompt {
  std::string sample_id;
  std::string label;
  std::string domain;
  std::vector<std::pair<std::string, std::string>> fields;  // schema order, normalized
  std::string rendered_text;
};

// "<label>: <field1>; <field2>; ..." in schema order.
inline std::string render_prompt(std::string_view label,
                                 const std::vector<std::pair<std::string, std::string>>& fields) {
  std::string out(label);
  out += ':';
  for (std::size_t i = 0; i < fields.size(); ++i) {
    out += i == 0 ? " " : "; ";
    out += fields[i].second;
  }
  return out;
}

struct Violation {
  std::string rule;  // parse | missing key | closed set | forbidden term | word limit | label | type
  std::string field;
  std::string detail;
};

struct ValidationResult {
  std::optional<EnrichedPrompt> prompt;
  std::vector<Violation> violations;

  bool ok() const { return prompt.has_value(); }
};

inline json to_json(const Violation& v) { return {{"rule", v.rule}, {"field", v.field}, {"detail", v.detail}}; }

inline json to_json(const EnrichedPrompt& p) {
  json fields = json::object();
  for (const auto& [k, v] : p.fields) fields[k] = v;
  return {{"sample_id", p.sample_id}, {"label", p.label}, {"domain", p.domain}, {"fields", fields},
          {"rendered_text", p.rendered_text}};
}

// Key-value document as the generator would return it.
inline std::string to_candidate(const EnrichedPrompt& p) {
  json j = json::object();
  for (const auto& [k, v] : p.fields) j[k] = v;
  return j.dump();
}

// Checks a raw candidate against `schema` for ground-truth `label`. Every
// violated rule is reported; the prompt is returned only when there are none.
inline ValidationResult validate_prompt(std::string_view candidate, const SchemaSpec& schema, const std::string& label,
                                        const std::string& sample_id = {}) {
  ValidationResult r;
  auto fail = [&](std::string rule, std::string field, std::string detail) {
    r.violations.push_back({std::move(rule), std::move(field), std::move(detail)});
  };
  if (!schema.labels.empty() && std::find(schema.labels.begin(), schema.labels.end(), label) == schema.labels.end())
    fail("label", "", "label '" + label + "' is not in the " + schema.domain + " label set");

  json doc = json::parse(candidate, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) {
    fail("parse", "", "candidate is not a JSON object");
    return r;
  }
  if (doc.contains("label") && (!doc["label"].is_string() || doc["label"].get<std::string>() != label))
    fail("label", "label", "candidate label differs from ground truth '" + label + "'");

  EnrichedPrompt p{sample_id, label, schema.domain, {}, {}};
  for (const auto& f : schema.fields) {
    if (!doc.contains(f.key) || doc[f.key].is_null()) {
      fail("missing key", f.key, "required key absent");
      continue;
    }
    const json& v = doc[f.key];
    std::vector<std::string> items;
    std::string value;
    if (v.is_string()) {
      value = detail::trim(v.get<std::string>());
      if (f.kind == FieldKind::kList) items = detail::split_list(value);
    } else if (v.is_array() && f.kind == FieldKind::kList && std::all_of(v.begin(), v.end(), [](const json& e) {
                 return e.is_string();
               })) {
      for (const auto& e : v)
        if (auto t = detail::trim(e.get<std::string>()); !t.empty()) items.push_back(t);
    } else {
      fail("type", f.key, "value must be a string");
      continue;
    }
    if (f.kind == FieldKind::kList) {
      value.clear();
      for (std::size_t i = 0; i < items.size(); ++i) value += (i ? ", " : "") + items[i];
    }
    if (value.empty()) {
      fail("missing key", f.key, "empty value");
      continue;
    }
    if (f.kind == FieldKind::kChoice &&
        std::find(f.allowed.begin(), f.allowed.end(), value) == f.allowed.end())
      fail("closed set", f.key, "'" + value + "' is not an allowed value");
    if (f.kind == FieldKind::kList && !f.allowed.empty())
      for (const auto& it : items)
        if (std::find(f.allowed.begin(), f.allowed.end(), it) == f.allowed.end())
          fail("closed set", f.key, "'" + it + "' is not an allowed value");
    if (f.max_words && detail::word_count(value) > *f.max_words)
      fail("word limit", f.key,
           std::to_string(detail::word_count(value)) + " words exceeds " + std::to_string(*f.max_words));
    p.fields.emplace_back(f.key, value);
  }
  for (const auto& rule : schema.forbidden) {
    if (rule.label != label) continue;
    for (const auto& [key, value] : p.fields)
      for (const auto& term : rule.terms)
        if (detail::contains_term(value, term)) fail("forbidden term", key, "'" + term + "' not allowed for " + label);
  }
  if (r.violations.empty()) {
    p.rendered_text = render_prompt(label, p.fields);
    r.prompt = std::move(p);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Checklists

struct ChecklistItem {
  std::string attribute;
  std::string description;
};

struct Checklist {
  std::string label;
  std::vector<ChecklistItem> items;

  // "<label>: <attribute>: <description>; ..." in item order.
  std::string rendered_text() const {
    std::string out = label + ':';
    for (std::size_t i = 0; i < items.size(); ++i)
      out += (i ? "; " : " ") + items[i].attribute + ": " + items[i].description;
    return out;
  }
};

using ChecklistSet = std::map<std::string, Checklist>;

inline ChecklistSet checklists_from_json(const json& j) {
  if (!j.is_object()) throw LoadError("checklists: expected an object mapping label to items");
  ChecklistSet out;
  for (const auto& [label, items] : j.items()) {
    Checklist c{label, {}};
    for (const auto& it : items)
      c.items.push_back({it.at("attribute").get<std::string>(), it.at("description").get<std::string>()});
    if (c.items.empty()) throw LoadError("checklist for '" + label + "' has no items");
    out.emplace(label, std::move(c));
  }
  return out;
}

inline ChecklistSet load_checklists(const fs::path& path) {
  try {
    return checklists_from_json(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

// Scoring needs exactly one checklist per class and none for unknown labels.
inline void require_checklists(const std::vector<std::string>& label_set, const ChecklistSet& checklists) {
  for (const auto& l : label_set)
    if (!checklists.count(l)) throw LoadError("no checklist for class '" + l + "'");
  for (const auto& [l, _] : checklists)
    if (std::find(label_set.begin(), label_set.end(), l) == label_set.end())
      throw LoadError("checklist for '" + l + "' which is not in the label set");
}

// ---------------------------------------------------------------------------
// Prompt files (JSONL): {"sample_id", "label", "candidate"} per line, where
// candidate is the raw generator text or an object.

struct PromptCandidate {
  std::string sample_id;
  std::string label;
  std::string candidate;
};

inline std::vector<PromptCandidate> load_candidates(const fs::path& path) {
  std::vector<PromptCandidate> out;
  for (const auto& j : read_jsonl(path)) {
    PromptCandidate c{j.at("sample_id").get<std::string>(), j.at("label").get<std::string>(), {}};
    const auto& cand = j.at("candidate");
    c.candidate = cand.is_string() ? cand.get<std::string>() : cand.dump();
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace clinalign
