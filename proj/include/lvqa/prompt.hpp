#pragma once

// Structured prompts: entities (garments) with ordered attribute sets, their
// natural-language rendering, admissibility rules for evaluation items and
// the attribute-swap negatives used by swap tests.

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "lvqa/error.hpp"
#include "lvqa/render_table.hpp"

namespace lvqa {

using Json = nlohmann::json;

enum class AttributeCategory { kPattern, kOther };

inline std::string_view to_string(AttributeCategory c) {
  return c == AttributeCategory::kPattern ? "pattern" : "other";
}

inline AttributeCategory parse_category(std::string_view s) {
  if (s == "pattern") return AttributeCategory::kPattern;
  if (s == "other") return AttributeCategory::kOther;
  throw SchemaError("unknown attribute category \"" + std::string(s) + "\"");
}

/// Trims surrounding whitespace and lowercases. Attribute and class names are
/// compared by exact match after this normalization.
inline std::string normalize_label(std::string_view raw) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  size_t b = 0, e = raw.size();
  while (b < e && is_space(raw[b])) ++b;
  while (e > b && is_space(raw[e - 1])) --e;
  std::string out(raw.substr(b, e - b));
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

struct Attribute {
  std::string name;
  AttributeCategory category = AttributeCategory::kOther;

  bool is_pattern() const { return category == AttributeCategory::kPattern; }
  friend bool operator==(const Attribute&, const Attribute&) = default;
};

inline Attribute make_attribute(std::string_view raw_name, AttributeCategory category) {
  Attribute a{normalize_label(raw_name), category};
  if (a.name.empty()) throw SchemaError("attribute name is empty");
  return a;
}

/// Category is looked up in the pattern vocabulary when only a name is known.
inline Attribute make_attribute(std::string_view raw_name) {
  std::string name = normalize_label(raw_name);
  auto cat = render_table::is_pattern_attribute(name) ? AttributeCategory::kPattern
                                                      : AttributeCategory::kOther;
  return make_attribute(name, cat);
}

struct Entity {
  std::string class_label;
  std::vector<Attribute> attributes;

  bool has_attribute(std::string_view name) const {
    return std::any_of(attributes.begin(), attributes.end(),
                       [&](const Attribute& a) { return a.name == name; });
  }
  friend bool operator==(const Entity&, const Entity&) = default;
};

struct StructuredPrompt {
  std::vector<Entity> entities;
  std::string rendered_text;
  std::string source_id;

  size_t size() const { return entities.size(); }
  friend bool operator==(const StructuredPrompt&, const StructuredPrompt&) = default;
};

struct EvalItem {
  StructuredPrompt prompt;
  std::string image_ref;
  std::string generator_id;
  std::optional<int> group_id;

  /// Stable key used across score files: "source_id/generator_id".
  std::string id() const { return prompt.source_id + "/" + generator_id; }
};

// ---------------------------------------------------------------------------
// Rendering

inline std::string render_entity(const Entity& e) {
  std::string body;
  for (size_t k = 0; k < e.attributes.size(); ++k) {
    if (k > 0) body += ", ";
    body += e.attributes[k].name;
  }
  if (!body.empty()) body += ' ';
  body += e.class_label;
  if (render_table::is_plural_class(e.class_label)) return "a pair of " + body;
  return (render_table::starts_with_vowel(body) ? "an " : "a ") + body;
}

inline std::string render_prompt(const StructuredPrompt& p) {
  std::string out;
  for (size_t i = 0; i < p.entities.size(); ++i) {
    if (i > 0) out += ". ";
    out += render_entity(p.entities[i]);
  }
  return out;
}

// Recomputes rendered_text in place and returns the prompt.
inline StructuredPrompt rerender(StructuredPrompt p) {
  p.rendered_text = render_prompt(p);
  return p;
}

// ---------------------------------------------------------------------------
// Ingestion

struct ParseResult {
  StructuredPrompt prompt;
  std::vector<std::string> warnings;
};

/// Parses one annotation record:
///   {source_id?, garments: [{class, attrs: [name | {name, category}]}]}
/// Garments are reported 1-based in error messages.
inline ParseResult parse_structured_annotation(const Json& record) {
  if (!record.is_object()) throw SchemaError("annotation record is not an object");
  ParseResult out;
  if (auto it = record.find("source_id"); it != record.end()) {
    if (it->is_string()) out.prompt.source_id = it->get<std::string>();
    else if (it->is_number_integer()) out.prompt.source_id = std::to_string(it->get<long long>());
    else throw SchemaError("field \"source_id\" must be a string or integer");
  }
  auto garments = record.find("garments");
  if (garments == record.end()) throw SchemaError("missing field \"garments\"");
  if (!garments->is_array()) throw SchemaError("field \"garments\" must be an array");

  size_t index = 0;
  for (const auto& g : *garments) {
    ++index;
    const std::string where = "garment " + std::to_string(index);
    if (!g.is_object()) throw SchemaError(where + ": not an object");
    auto cls = g.find("class");
    if (cls == g.end()) throw SchemaError(where + ": missing field \"class\"");
    if (!cls->is_string()) throw SchemaError(where + ": field \"class\" must be a string");
    Entity e;
    e.class_label = normalize_label(cls->get<std::string>());
    if (e.class_label.empty()) throw SchemaError(where + ": field \"class\" is empty");

    auto attrs = g.find("attrs");
    if (attrs == g.end()) throw SchemaError(where + ": missing field \"attrs\"");
    if (!attrs->is_array()) throw SchemaError(where + ": field \"attrs\" must be an array");
    for (const auto& a : *attrs) {
      Attribute attr;
      if (a.is_string()) {
        attr = make_attribute(a.get<std::string>());
      } else if (a.is_object()) {
        auto name = a.find("name");
        if (name == a.end() || !name->is_string())
          throw SchemaError(where + ": attribute missing field \"name\"");
        auto cat = a.find("category");
        if (cat == a.end()) {
          attr = make_attribute(name->get<std::string>());
        } else {
          if (!cat->is_string()) throw SchemaError(where + ": attribute \"category\" must be a string");
          try {
            attr = make_attribute(name->get<std::string>(), parse_category(cat->get<std::string>()));
          } catch (const SchemaError& err) {
            throw SchemaError(where + ": " + err.what());
          }
        }
      } else {
        throw SchemaError(where + ": attribute must be a string or object");
      }
      if (attr.name.empty()) throw SchemaError(where + ": attribute name is empty");
      if (e.has_attribute(attr.name)) {
        out.warnings.push_back(where + ": duplicate attribute \"" + attr.name + "\" dropped");
        continue;
      }
      e.attributes.push_back(std::move(attr));
    }
    out.prompt.entities.push_back(std::move(e));
  }
  if (out.prompt.entities.empty()) {
    out.warnings.push_back("empty prompt: record has no garments");
  }
  out.prompt.rendered_text = render_prompt(out.prompt);
  return out;
}

// ---------------------------------------------------------------------------
// Validation

enum class ValidationRule {
  kTooFewEntities,   // N >= 2
  kMissingPattern,   // every entity carries a pattern attribute
  kSharedPattern,    // no pattern attribute on two entities
  kDuplicateClass,   // one class label per prompt (localization is class-level)
};

inline std::string_view to_string(ValidationRule r) {
  switch (r) {
    case ValidationRule::kTooFewEntities: return "a:too-few-entities";
    case ValidationRule::kMissingPattern: return "b:missing-pattern";
    case ValidationRule::kSharedPattern: return "c:shared-pattern";
    case ValidationRule::kDuplicateClass: return "d:duplicate-class";
  }
  return "?";
}

struct Violation {
  ValidationRule rule;
  std::string detail;
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool admissible() const { return violations.empty(); }
  bool has(ValidationRule r) const {
    return std::any_of(violations.begin(), violations.end(),
                       [r](const Violation& v) { return v.rule == r; });
  }
  std::string summary() const {
    std::string s;
    for (const auto& v : violations) {
      if (!s.empty()) s += "; ";
      s += std::string(to_string(v.rule)) + " (" + v.detail + ")";
    }
    return s;
  }
};

inline ValidationReport validate_eval_item(const StructuredPrompt& p) {
  ValidationReport report;
  if (p.entities.size() < 2) {
    report.violations.push_back({ValidationRule::kTooFewEntities,
                                 "prompt has " + std::to_string(p.entities.size()) +
                                     " entities, at least 2 required"});
  }
  std::map<std::string, std::vector<std::string>> pattern_owners;
  std::set<std::string> classes;
  for (const auto& e : p.entities) {
    bool has_pattern = false;
    for (const auto& a : e.attributes) {
      if (!a.is_pattern()) continue;
      has_pattern = true;
      pattern_owners[a.name].push_back(e.class_label);
    }
    if (!has_pattern) {
      report.violations.push_back(
          {ValidationRule::kMissingPattern, "entity \"" + e.class_label + "\" has no pattern attribute"});
    }
    if (!classes.insert(e.class_label).second) {
      report.violations.push_back(
          {ValidationRule::kDuplicateClass, "class \"" + e.class_label + "\" appears more than once"});
    }
  }
  for (const auto& [name, owners] : pattern_owners) {
    if (owners.size() < 2) continue;
    std::string who;
    for (const auto& o : owners) who += (who.empty() ? "" : ", ") + o;
    report.violations.push_back(
        {ValidationRule::kSharedPattern, "pattern \"" + name + "\" shared by " + who});
  }
  return report;
}

// ---------------------------------------------------------------------------
// Swapped negatives

/// Cyclically permutes pattern attributes: entity i receives the pattern
/// attributes of entity (i + 1) mod N. Non-pattern attributes keep their
/// positions; received patterns fill the entity's former pattern slots in
/// order, with any surplus placed after the last slot.
inline StructuredPrompt swap_attributes(const StructuredPrompt& p) {
  if (auto report = validate_eval_item(p); !report.admissible()) {
    throw InvalidItemError("cannot swap inadmissible item \"" + p.source_id + "\": " + report.summary());
  }
  const size_t n = p.entities.size();
  std::vector<std::vector<Attribute>> patterns(n);
  for (size_t i = 0; i < n; ++i) {
    for (const auto& a : p.entities[i].attributes)
      if (a.is_pattern()) patterns[i].push_back(a);
  }

  StructuredPrompt out;
  out.source_id = p.source_id;
  out.entities.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    const Entity& src = p.entities[i];
    const auto& incoming = patterns[(i + 1) % n];
    const size_t slots = patterns[i].size();
    Entity e{src.class_label, {}};
    size_t slot = 0, next = 0;
    for (const auto& a : src.attributes) {
      if (!a.is_pattern()) {
        e.attributes.push_back(a);
        continue;
      }
      ++slot;
      if (slot == slots) {
        while (next < incoming.size()) e.attributes.push_back(incoming[next++]);
      } else if (next < incoming.size()) {
        e.attributes.push_back(incoming[next++]);
      }
    }
    for (size_t k = 0; k < e.attributes.size(); ++k) {
      for (size_t m = k + 1; m < e.attributes.size(); ++m) {
        if (e.attributes[k].name == e.attributes[m].name) {
          throw InvalidItemError("swap would duplicate attribute \"" + e.attributes[k].name +
                                 "\" on \"" + e.class_label + "\"");
        }
      }
    }
    out.entities.push_back(std::move(e));
  }
  out.rendered_text = render_prompt(out);
  return out;
}

// ---------------------------------------------------------------------------
// JSON forms

inline void to_json(Json& j, const Attribute& a) {
  j = Json{{"name", a.name}, {"category", std::string(to_string(a.category))}};
}

inline void to_json(Json& j, const Entity& e) {
  j = Json{{"class", e.class_label}, {"attrs", e.attributes}};
}

/// Structured form used in EvalItem JSONL; accepted back by
/// parse_structured_annotation.
inline Json entities_json(const StructuredPrompt& p) {
  Json arr = Json::array();
  for (const auto& e : p.entities) arr.push_back(e);
  return arr;
}

inline Json to_json(const EvalItem& item) {
  Json j;
  j["source_id"] = item.prompt.source_id;
  j["rendered_text"] = item.prompt.rendered_text;
  j["entities"] = entities_json(item.prompt);
  j["image_ref"] = item.image_ref;
  j["generator_id"] = item.generator_id;
  if (item.group_id) j["group_id"] = *item.group_id;
  return j;
}

inline EvalItem eval_item_from_json(const Json& j) {
  if (!j.is_object()) throw SchemaError("eval item is not an object");
  for (const char* key : {"source_id", "entities", "image_ref", "generator_id"}) {
    if (!j.contains(key)) throw SchemaError(std::string("eval item missing field \"") + key + "\"");
  }
  Json record{{"source_id", j.at("source_id")}, {"garments", j.at("entities")}};
  EvalItem item;
  item.prompt = parse_structured_annotation(record).prompt;
  item.image_ref = j.at("image_ref").get<std::string>();
  item.generator_id = j.at("generator_id").get<std::string>();
  if (auto g = j.find("group_id"); g != j.end() && g->is_number_integer()) item.group_id = g->get<int>();
  return item;
}

}  // namespace lvqa
