#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bomtrace/error.hpp"
#include "bomtrace/events.hpp"
#include "bomtrace/hashing.hpp"
#include "bomtrace/merkle.hpp"
#include "bomtrace/process_tree.hpp"
#include "bomtrace/purl.hpp"

namespace bomtrace {

inline constexpr std::string_view kNamePrefix = "bomfather:";
inline constexpr std::string_view kPidProperty = "bomfather:pid";
inline constexpr std::string_view kVersionProperty = "bomfather:version";
inline constexpr std::string_view kMerkleRootProperty = "bomfather:merkle_root";
inline constexpr std::string_view kDroppedProperty = "bomfather:dropped_events";
inline constexpr std::string_view kStatsPrefix = "bomfather:stats:";
inline constexpr std::string_view kCommandPrefix = "bomfather:command:pid=";

struct Property {
  std::string name;
  std::string value;

  friend bool operator==(const Property&, const Property&) = default;
};

struct HashEntry {
  std::string alg;
  std::string content;

  friend bool operator==(const HashEntry&, const HashEntry&) = default;
};

struct SbomComponent {
  std::string type = "file";
  std::string name;
  std::vector<HashEntry> hashes;
  std::optional<std::string> purl;
  std::vector<Property> properties;

  std::optional<std::string> property(std::string_view key) const {
    for (const auto& p : properties)
      if (p.name == key) return p.value;
    return std::nullopt;
  }

  friend bool operator==(const SbomComponent&, const SbomComponent&) = default;
};

struct SbomDocument {
  std::string bom_format = "CycloneDX";
  std::string spec_version = "1.5";
  std::string serial_number;
  std::int64_t version = 1;
  std::string timestamp;
  std::string tool_name{kToolName};
  std::string tool_version{kToolVersion};
  std::vector<SbomComponent> components;
  std::vector<Property> properties;
  // Set on parse when the document carries no merkle root property.
  bool foreign = false;

  std::optional<std::string> property(std::string_view key) const {
    for (const auto& p : properties)
      if (p.name == key) return p.value;
    return std::nullopt;
  }

  friend bool operator==(const SbomDocument&, const SbomDocument&) = default;
};

struct BuildStats {
  std::uint64_t total_events = 0;
  std::uint64_t open_events = 0;
  std::uint64_t distinct_files = 0;
  std::uint64_t hashable = 0;
  std::uint64_t unhashable = 0;
  std::uint64_t inputs = 0;
  std::uint64_t outputs = 0;
  std::uint64_t intermediates = 0;
  std::uint64_t processes = 0;
  std::uint64_t orphan_processes = 0;
  std::uint64_t orphan_observations = 0;
  std::uint64_t dropped_events = 0;

  friend bool operator==(const BuildStats&, const BuildStats&) = default;
};

struct SbomConfig {
  std::string timestamp;  // taken from the event-log header
  bool inputs_only = false;
};

/// Observations that belong in the document under `inputs_only`.
inline std::vector<FileObservation> select_observations(const std::vector<FileObservation>& all,
                                                        bool inputs_only) {
  if (!inputs_only) return all;
  std::vector<FileObservation> out;
  for (const auto& o : all)
    if (o.classification == Classification::input) out.push_back(o);
  return out;
}

/// Assembles the document. Refuses construction when `tree` was not built
/// from the selected observations.
inline SbomDocument build_document(const std::vector<FileObservation>& observations,
                                   const ProvenanceTree& tree, const ProcessTree& processes,
                                   const BuildStats& stats, const SbomConfig& config) {
  const auto selected = select_observations(observations, config.inputs_only);
  if (ProvenanceTree::from_observations(selected).root() != tree.root())
    throw Error("merkle tree does not match the observations (root recomputation disagrees)");

  SbomDocument doc;
  doc.serial_number = uuid_v5_url_urn(tree.root().hex());
  doc.timestamp = config.timestamp;
  doc.components.reserve(selected.size());
  for (const auto& o : selected) {
    SbomComponent c;
    c.name = std::string(kNamePrefix) + o.path;
    if (o.digest) c.hashes.push_back({std::string(Digest::kAlgorithm), o.digest->hex()});
    if (auto p = purl_for(o)) c.purl = p->to_string();
    c.properties.push_back({std::string(kPidProperty), std::to_string(o.first_pid)});
    if (o.version > 1) c.properties.push_back({std::string(kVersionProperty), std::to_string(o.version)});
    doc.components.push_back(std::move(c));
  }

  for (auto& [name, value] : processes.command_properties())
    doc.properties.push_back({std::move(name), std::move(value)});
  doc.properties.push_back({std::string(kMerkleRootProperty), tree.root().hex()});
  const std::pair<std::string_view, std::uint64_t> counters[] = {
      {"distinct_files", stats.distinct_files},
      {"hashable", stats.hashable},
      {"inputs", stats.inputs},
      {"intermediates", stats.intermediates},
      {"open_events", stats.open_events},
      {"orphan_observations", stats.orphan_observations},
      {"orphan_processes", stats.orphan_processes},
      {"outputs", stats.outputs},
      {"processes", stats.processes},
      {"total_events", stats.total_events},
      {"unhashable", stats.unhashable},
  };
  for (const auto& [name, value] : counters)
    doc.properties.push_back({std::string(kStatsPrefix) + std::string(name), std::to_string(value)});
  if (stats.dropped_events > 0)
    doc.properties.push_back({std::string(kDroppedProperty), std::to_string(stats.dropped_events)});
  return doc;
}

namespace detail {

inline ordered_json properties_json(const std::vector<Property>& props) {
  ordered_json arr = ordered_json::array();
  for (const auto& p : props) {
    ordered_json o;
    o["name"] = p.name;
    o["value"] = p.value;
    arr.push_back(std::move(o));
  }
  return arr;
}

}  // namespace detail

/// Deterministic serialization: fixed key order, 2-space indent, LF, one
/// trailing newline.
inline std::string emit(const SbomDocument& doc) {
  using detail::ordered_json;
  ordered_json j;
  j["bomFormat"] = doc.bom_format;
  j["specVersion"] = doc.spec_version;
  if (!doc.serial_number.empty()) j["serialNumber"] = doc.serial_number;
  j["version"] = doc.version;
  ordered_json tool;
  tool["type"] = "application";
  tool["name"] = doc.tool_name;
  tool["version"] = doc.tool_version;
  ordered_json meta;
  if (!doc.timestamp.empty()) meta["timestamp"] = doc.timestamp;
  meta["tools"]["components"] = ordered_json::array({tool});
  j["metadata"] = std::move(meta);

  ordered_json comps = ordered_json::array();
  for (const auto& c : doc.components) {
    ordered_json o;
    o["type"] = c.type;
    o["name"] = c.name;
    if (!c.hashes.empty()) {
      ordered_json hs = ordered_json::array();
      for (const auto& h : c.hashes) {
        ordered_json ho;
        ho["alg"] = h.alg;
        ho["content"] = h.content;
        hs.push_back(std::move(ho));
      }
      o["hashes"] = std::move(hs);
    }
    if (c.purl) o["purl"] = *c.purl;
    if (!c.properties.empty()) o["properties"] = detail::properties_json(c.properties);
    comps.push_back(std::move(o));
  }
  j["components"] = std::move(comps);
  if (!doc.properties.empty()) j["properties"] = detail::properties_json(doc.properties);
  return j.dump(2) + "\n";
}

namespace detail {

inline std::string str_field(const nlohmann::json& obj, std::string_view key) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) return {};
  return it->get<std::string>();
}

inline std::vector<Property> parse_properties(const nlohmann::json& obj) {
  std::vector<Property> out;
  auto it = obj.find("properties");
  if (it == obj.end() || !it->is_array()) return out;
  for (const auto& p : *it)
    if (p.is_object()) out.push_back({str_field(p, "name"), str_field(p, "value")});
  return out;
}

}  // namespace detail

/// Parses a CycloneDX JSON document. Documents without a merkle-root
/// property parse with `foreign` set.
inline SbomDocument parse_document(std::string_view bytes) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes);
  } catch (const nlohmann::json::parse_error& e) {
    throw DocumentError(e.what(), e.byte);
  }
  if (!j.is_object()) throw DocumentError("document is not a JSON object", 0);
  if (detail::str_field(j, "bomFormat") != "CycloneDX") throw DocumentError("bomFormat is not CycloneDX", 0);

  SbomDocument doc;
  doc.bom_format = "CycloneDX";
  doc.spec_version = detail::str_field(j, "specVersion");
  doc.serial_number = detail::str_field(j, "serialNumber");
  if (auto v = j.find("version"); v != j.end() && v->is_number_integer()) doc.version = v->get<std::int64_t>();
  doc.tool_name.clear();
  doc.tool_version.clear();
  if (auto m = j.find("metadata"); m != j.end() && m->is_object()) {
    doc.timestamp = detail::str_field(*m, "timestamp");
    if (auto t = m->find("tools"); t != m->end()) {
      const nlohmann::json* first = nullptr;
      if (t->is_object() && t->contains("components") && (*t)["components"].is_array() &&
          !(*t)["components"].empty())
        first = &(*t)["components"][0];
      else if (t->is_array() && !t->empty())
        first = &(*t)[0];
      if (first && first->is_object()) {
        doc.tool_name = detail::str_field(*first, "name");
        doc.tool_version = detail::str_field(*first, "version");
      }
    }
  }
  if (auto cs = j.find("components"); cs != j.end()) {
    if (!cs->is_array()) throw DocumentError("components is not an array", 0);
    for (const auto& c : *cs) {
      if (!c.is_object()) throw DocumentError("component is not an object", 0);
      SbomComponent comp;
      comp.type = detail::str_field(c, "type");
      comp.name = detail::str_field(c, "name");
      if (auto hs = c.find("hashes"); hs != c.end() && hs->is_array())
        for (const auto& h : *hs)
          if (h.is_object()) comp.hashes.push_back({detail::str_field(h, "alg"), detail::str_field(h, "content")});
      if (auto p = c.find("purl"); p != c.end() && p->is_string()) comp.purl = p->get<std::string>();
      comp.properties = detail::parse_properties(c);
      doc.components.push_back(std::move(comp));
    }
  }
  doc.properties = detail::parse_properties(j);
  doc.foreign = !doc.property(kMerkleRootProperty).has_value();
  return doc;
}

}  // namespace bomtrace
