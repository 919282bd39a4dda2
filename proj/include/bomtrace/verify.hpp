#pragma once

#include <algorithm>
#include <charconv>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bomtrace/error.hpp"
#include "bomtrace/merkle.hpp"
#include "bomtrace/sbom.hpp"

namespace bomtrace {

enum class Verdict { match, mismatch, unverifiable };

inline std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::match: return "match";
    case Verdict::mismatch: return "mismatch";
    case Verdict::unverifiable: return "unverifiable";
  }
  return "?";
}

struct VerificationReport {
  std::optional<std::string> claimed_root;
  std::string recomputed_root;
  std::optional<std::string> expected_root;
  Verdict verdict = Verdict::unverifiable;
  std::size_t total = 0;
  std::size_t hashable = 0;
  std::size_t unhashable = 0;
  std::vector<std::string> discrepancies;
};

/// Leaves rebuilt from a document's own components.
struct DocumentLeaves {
  std::vector<Leaf> leaves;  // sorted, unique
  std::size_t hashable = 0;
  std::size_t unhashable = 0;
  std::vector<std::string> problems;
};

inline DocumentLeaves leaves_from_document(const SbomDocument& doc) {
  DocumentLeaves out;
  for (const auto& c : doc.components) {
    const HashEntry* sha = nullptr;
    for (const auto& h : c.hashes)
      if (h.alg == Digest::kAlgorithm) sha = &h;
    if (!sha) {
      ++out.unhashable;
      continue;
    }
    ++out.hashable;
    if (!c.name.starts_with(kNamePrefix)) {
      out.problems.push_back("component name lacks prefix: " + c.name);
      continue;
    }
    std::string path = c.name.substr(kNamePrefix.size());
    auto digest = Digest::from_hex(sha->content);
    if (!digest) {
      out.problems.push_back("malformed SHA-256 for " + path);
      continue;
    }
    std::uint32_t version = 1;
    if (auto v = c.property(kVersionProperty)) {
      auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), version);
      if (ec != std::errc{} || ptr != v->data() + v->size() || version == 0) {
        out.problems.push_back("malformed version for " + path);
        continue;
      }
    }
    out.leaves.push_back(Leaf{std::move(path), version, *digest});
  }
  std::sort(out.leaves.begin(), out.leaves.end(), leaf_less);
  auto dup = std::unique(out.leaves.begin(), out.leaves.end(), [&](const Leaf& a, const Leaf& b) {
    return a.path == b.path && a.version == b.version;
  });
  for (auto it = dup; it != out.leaves.end(); ++it)
    out.problems.push_back("duplicate component " + it->path + " version " + std::to_string(it->version));
  out.leaves.erase(dup, out.leaves.end());
  return out;
}

/// Recomputes the root from the components alone and compares it with the
/// embedded claim and, when given, `expected_root`. With a `baseline`, the
/// file-level differences against it are listed as discrepancies.
inline VerificationReport verify_document(const SbomDocument& doc,
                                          const std::optional<std::string>& expected_root = std::nullopt,
                                          const SbomDocument* baseline = nullptr) {
  VerificationReport r;
  DocumentLeaves dl = leaves_from_document(doc);
  const auto tree = ProvenanceTree::build(dl.leaves);
  r.recomputed_root = tree.root().hex();
  r.claimed_root = doc.property(kMerkleRootProperty);
  r.expected_root = expected_root;
  r.total = doc.components.size();
  r.hashable = dl.hashable;
  r.unhashable = dl.unhashable;
  r.discrepancies = std::move(dl.problems);

  if (doc.foreign || !r.claimed_root) {
    r.verdict = Verdict::unverifiable;
    return r;
  }
  bool ok = *r.claimed_root == r.recomputed_root;
  if (expected_root && *expected_root != r.recomputed_root) {
    ok = false;
    r.discrepancies.push_back("recomputed root differs from expected root");
  }
  r.verdict = ok ? Verdict::match : Verdict::mismatch;
  if (baseline) {
    const auto d = diff(ProvenanceTree::build(leaves_from_document(*baseline).leaves), tree);
    for (const auto& p : d.added) r.discrepancies.push_back("added: " + p);
    for (const auto& p : d.removed) r.discrepancies.push_back("removed: " + p);
    for (const auto& p : d.changed) r.discrepancies.push_back("changed: " + p);
  }
  return r;
}

struct DocumentDiff {
  std::string root_a;
  std::string root_b;
  TreeDiff files;
  std::vector<Property> commands_only_in_a;
  std::vector<Property> commands_only_in_b;

  bool identical_roots() const { return root_a == root_b; }
};

/// File-level and command-level differences between two builds. Commands
/// are matched by value (pids differ between builds).
inline DocumentDiff diff_documents(const SbomDocument& a, const SbomDocument& b) {
  if (a.foreign || b.foreign) throw UnverifiableError("cannot diff a document without a merkle root");
  DocumentDiff d;
  const auto ta = ProvenanceTree::build(leaves_from_document(a).leaves);
  const auto tb = ProvenanceTree::build(leaves_from_document(b).leaves);
  d.root_a = ta.root().hex();
  d.root_b = tb.root().hex();
  d.files = diff(ta, tb);

  auto commands = [](const SbomDocument& doc) {
    std::vector<Property> out;
    for (const auto& p : doc.properties)
      if (p.name.starts_with(kCommandPrefix)) out.push_back(p);
    return out;
  };
  auto unmatched = [](const std::vector<Property>& from, const std::vector<Property>& against) {
    std::multiset<std::string> pool;
    for (const auto& p : against) pool.insert(p.value);
    std::vector<Property> out;
    for (const auto& p : from) {
      if (auto it = pool.find(p.value); it != pool.end()) pool.erase(it);
      else out.push_back(p);
    }
    return out;
  };
  const auto ca = commands(a), cb = commands(b);
  d.commands_only_in_a = unmatched(ca, cb);
  d.commands_only_in_b = unmatched(cb, ca);
  return d;
}

inline std::string render_text(const VerificationReport& r) {
  std::ostringstream os;
  os << "verdict: " << to_string(r.verdict) << "\n";
  os << "claimed root:    " << r.claimed_root.value_or("(none)") << "\n";
  os << "recomputed root: " << r.recomputed_root << "\n";
  if (r.expected_root) os << "expected root:   " << *r.expected_root << "\n";
  os << "components: " << r.total << " total, " << r.hashable << " hashable, " << r.unhashable
     << " unhashable\n";
  os << "discrepancies: " << r.discrepancies.size() << "\n";
  for (const auto& d : r.discrepancies) os << "  " << d << "\n";
  return os.str();
}

inline std::string render_json(const VerificationReport& r) {
  nlohmann::ordered_json j;
  j["verdict"] = to_string(r.verdict);
  j["claimed_root"] = r.claimed_root ? nlohmann::ordered_json(*r.claimed_root) : nlohmann::ordered_json();
  j["recomputed_root"] = r.recomputed_root;
  j["expected_root"] = r.expected_root ? nlohmann::ordered_json(*r.expected_root) : nlohmann::ordered_json();
  j["components"] = {{"total", r.total}, {"hashable", r.hashable}, {"unhashable", r.unhashable}};
  j["discrepancies"] = r.discrepancies;
  return j.dump(2) + "\n";
}

inline std::string render_text(const DocumentDiff& d) {
  std::ostringstream os;
  os << "root a: " << d.root_a << "\n";
  os << "root b: " << d.root_b << "\n";
  auto list = [&](std::string_view title, const std::vector<std::string>& items) {
    os << title << " (" << items.size() << "):\n";
    for (const auto& i : items) os << "  " << i << "\n";
  };
  list("added", d.files.added);
  list("removed", d.files.removed);
  list("changed", d.files.changed);
  auto cmds = [&](std::string_view title, const std::vector<Property>& items) {
    os << title << " (" << items.size() << "):\n";
    for (const auto& p : items) {
      std::string v = p.value;
      std::replace(v.begin(), v.end(), '\n', ' ');
      os << "  " << p.name << ": " << v << "\n";
    }
  };
  cmds("commands only in a", d.commands_only_in_a);
  cmds("commands only in b", d.commands_only_in_b);
  return os.str();
}

inline std::string render_json(const DocumentDiff& d) {
  auto props = [](const std::vector<Property>& ps) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& p : ps) arr.push_back({{"name", p.name}, {"value", p.value}});
    return arr;
  };
  nlohmann::ordered_json j;
  j["identical"] = d.identical_roots();
  j["root_a"] = d.root_a;
  j["root_b"] = d.root_b;
  j["added"] = d.files.added;
  j["removed"] = d.files.removed;
  j["changed"] = d.files.changed;
  j["commands_only_in_a"] = props(d.commands_only_in_a);
  j["commands_only_in_b"] = props(d.commands_only_in_b);
  return j.dump(2) + "\n";
}

}  // namespace bomtrace
