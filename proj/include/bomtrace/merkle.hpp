#pragma once

// Content-based Merkle tree over file observations.
//
// Leaves commit to (path, version, content digest). Hashing uses one-byte
// domain separation (0x00 leaf, 0x01 interior) and the tree shape splits n
// leaves at the largest power of two strictly below n, which gives
// unambiguous inclusion proofs for any n.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "bomtrace/error.hpp"
#include "bomtrace/hashing.hpp"
#include "bomtrace/sha256.hpp"

namespace bomtrace {

struct Leaf {
  std::string path;
  std::uint32_t version = 1;
  Digest digest;

  friend bool operator==(const Leaf&, const Leaf&) = default;
};

/// Sort order of leaves: path as raw bytes, then version.
inline bool leaf_less(const Leaf& a, const Leaf& b) {
  if (int c = a.path.compare(b.path); c != 0) return c < 0;
  return a.version < b.version;
}

/// SHA-256(0x00 || path || 0x00 || digest || version as u32 big-endian)
inline Digest leaf_hash(const Leaf& leaf) {
  Sha256 h;
  h.update(std::uint8_t{0x00});
  h.update(leaf.path);
  h.update(std::uint8_t{0x00});
  h.update(leaf.digest.bytes());
  const std::uint8_t version[4] = {static_cast<std::uint8_t>(leaf.version >> 24),
                                   static_cast<std::uint8_t>(leaf.version >> 16),
                                   static_cast<std::uint8_t>(leaf.version >> 8),
                                   static_cast<std::uint8_t>(leaf.version)};
  h.update(version);
  return h.finish();
}

/// SHA-256(0x01 || left || right)
inline Digest interior_hash(const Digest& left, const Digest& right) {
  Sha256 h;
  h.update(std::uint8_t{0x01});
  h.update(left.bytes());
  h.update(right.bytes());
  return h.finish();
}

inline const Digest& empty_tree_root() {
  static const Digest root = sha256(std::string_view{});
  return root;
}

namespace detail {

/// Largest power of two strictly less than n (n > 1).
inline std::size_t split_point(std::size_t n) { return std::bit_floor(n - 1); }

inline Digest subtree_root(std::span<const Digest> leaf_hashes) {
  if (leaf_hashes.empty()) return empty_tree_root();
  if (leaf_hashes.size() == 1) return leaf_hashes.front();
  const std::size_t k = split_point(leaf_hashes.size());
  return interior_hash(subtree_root(leaf_hashes.first(k)), subtree_root(leaf_hashes.subspan(k)));
}

inline void audit_path(std::span<const Digest> leaf_hashes, std::size_t index, std::vector<Digest>& out) {
  if (leaf_hashes.size() <= 1) return;
  const std::size_t k = split_point(leaf_hashes.size());
  if (index < k) {
    audit_path(leaf_hashes.first(k), index, out);
    out.push_back(subtree_root(leaf_hashes.subspan(k)));
  } else {
    audit_path(leaf_hashes.subspan(k), index - k, out);
    out.push_back(subtree_root(leaf_hashes.first(k)));
  }
}

inline void require_sorted_unique(std::span<const Leaf> leaves) {
  for (std::size_t i = 1; i < leaves.size(); ++i) {
    if (!leaf_less(leaves[i - 1], leaves[i])) {
      if (leaves[i - 1].path == leaves[i].path && leaves[i - 1].version == leaves[i].version)
        throw Error("duplicate leaf " + leaves[i].path + " version " + std::to_string(leaves[i].version));
      throw Error("leaves not sorted at " + leaves[i].path);
    }
  }
}

}  // namespace detail

/// Root over leaves that are already sorted and unique; throws otherwise.
inline Digest compute_root(std::span<const Leaf> leaves) {
  detail::require_sorted_unique(leaves);
  std::vector<Digest> hashes;
  hashes.reserve(leaves.size());
  for (const auto& l : leaves) hashes.push_back(leaf_hash(l));
  return detail::subtree_root(hashes);
}

struct InclusionProof {
  std::uint64_t index = 0;
  std::uint64_t count = 0;
  std::vector<Digest> siblings;  // leaf to root

  friend bool operator==(const InclusionProof&, const InclusionProof&) = default;

  std::string to_json() const {
    nlohmann::ordered_json j;
    j["index"] = index;
    j["count"] = count;
    j["siblings"] = nlohmann::ordered_json::array();
    for (const auto& s : siblings) j["siblings"].push_back(s.hex());
    return j.dump();
  }

  static InclusionProof from_json(std::string_view text) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(std::string("malformed proof: ") + e.what());
    }
    if (!j.is_object() || !j.contains("index") || !j.contains("count") || !j.contains("siblings") ||
        !j["index"].is_number_unsigned() || !j["count"].is_number_unsigned() || !j["siblings"].is_array())
      throw Error("malformed proof: expected {\"index\",\"count\",\"siblings\"}");
    InclusionProof p;
    p.index = j["index"].get<std::uint64_t>();
    p.count = j["count"].get<std::uint64_t>();
    for (const auto& s : j["siblings"]) {
      auto d = s.is_string() ? Digest::from_hex(s.get<std::string>()) : std::nullopt;
      if (!d) throw Error("malformed proof: sibling is not 64 lowercase hex");
      p.siblings.push_back(*d);
    }
    return p;
  }
};

/// Immutable tree over a canonical leaf set.
class ProvenanceTree {
 public:
  ProvenanceTree() : root_(empty_tree_root()) {}

  /// Leaves in any order; they are sorted here. Duplicates are rejected.
  static ProvenanceTree build(std::vector<Leaf> leaves) {
    std::sort(leaves.begin(), leaves.end(), leaf_less);
    detail::require_sorted_unique(leaves);
    ProvenanceTree t;
    t.leaves_ = std::move(leaves);
    t.hashes_.reserve(t.leaves_.size());
    for (const auto& l : t.leaves_) t.hashes_.push_back(leaf_hash(l));
    t.root_ = detail::subtree_root(t.hashes_);
    return t;
  }

  /// Leaves from the hashable observations (optionally only inputs).
  static ProvenanceTree from_observations(const std::vector<FileObservation>& observations,
                                          bool inputs_only = false) {
    std::vector<Leaf> leaves;
    for (const auto& o : observations) {
      if (!o.digest) continue;
      if (inputs_only && o.classification != Classification::input) continue;
      leaves.push_back(Leaf{o.path, o.version, *o.digest});
    }
    return build(std::move(leaves));
  }

  const std::vector<Leaf>& leaves() const { return leaves_; }
  const std::vector<Digest>& leaf_hashes() const { return hashes_; }
  const Digest& root() const { return root_; }
  std::size_t size() const { return leaves_.size(); }

  std::optional<std::size_t> index_of(std::string_view path, std::uint32_t version) const {
    Leaf probe{std::string(path), version, {}};
    auto it = std::lower_bound(leaves_.begin(), leaves_.end(), probe, leaf_less);
    if (it == leaves_.end() || it->path != path || it->version != version) return std::nullopt;
    return static_cast<std::size_t>(it - leaves_.begin());
  }

  /// Index of the highest version of `path`.
  std::optional<std::size_t> latest_index_of(std::string_view path) const {
    std::optional<std::size_t> found;
    Leaf probe{std::string(path), 0, {}};
    for (auto it = std::lower_bound(leaves_.begin(), leaves_.end(), probe, leaf_less);
         it != leaves_.end() && it->path == path; ++it)
      found = static_cast<std::size_t>(it - leaves_.begin());
    return found;
  }

 private:
  std::vector<Leaf> leaves_;
  std::vector<Digest> hashes_;
  Digest root_;
};

inline InclusionProof prove_inclusion(const ProvenanceTree& tree, std::size_t index) {
  if (index >= tree.size())
    throw Error("leaf index " + std::to_string(index) + " out of range for " +
                std::to_string(tree.size()) + " leaves");
  InclusionProof proof;
  proof.index = index;
  proof.count = tree.size();
  detail::audit_path(tree.leaf_hashes(), index, proof.siblings);
  return proof;
}

/// Recomputes leaf-to-root using the split-rule position arithmetic.
inline bool verify_inclusion(const Digest& root, const Leaf& leaf, const InclusionProof& proof) {
  if (proof.index >= proof.count) return false;
  std::uint64_t fn = proof.index;
  std::uint64_t sn = proof.count - 1;
  Digest r = leaf_hash(leaf);
  for (const auto& p : proof.siblings) {
    if (sn == 0) return false;
    if ((fn & 1) || fn == sn) {
      r = interior_hash(p, r);
      if (!(fn & 1)) {
        while (!(fn & 1) && fn != 0) {
          fn >>= 1;
          sn >>= 1;
        }
      }
    } else {
      r = interior_hash(r, p);
    }
    fn >>= 1;
    sn >>= 1;
  }
  return sn == 0 && r == root;
}

struct TreeDiff {
  std::vector<std::string> added;
  std::vector<std::string> removed;
  std::vector<std::string> changed;

  bool empty() const { return added.empty() && removed.empty() && changed.empty(); }
  friend bool operator==(const TreeDiff&, const TreeDiff&) = default;
};

/// Leaf-granular comparison: added = only in b, removed = only in a,
/// changed = in both with differing latest-version digests.
inline TreeDiff diff(const ProvenanceTree& a, const ProvenanceTree& b) {
  auto latest = [](const ProvenanceTree& t) {
    std::map<std::string, const Leaf*> m;
    for (const auto& l : t.leaves()) {
      auto& slot = m[l.path];
      if (!slot || slot->version < l.version) slot = &l;
    }
    return m;
  };
  const auto la = latest(a);
  const auto lb = latest(b);
  TreeDiff d;
  for (const auto& [path, leaf] : lb)
    if (!la.contains(path)) d.added.push_back(path);
  for (const auto& [path, leaf] : la) {
    auto it = lb.find(path);
    if (it == lb.end()) d.removed.push_back(path);
    else if (it->second->digest != leaf->digest) d.changed.push_back(path);
  }
  return d;
}

}  // namespace bomtrace
