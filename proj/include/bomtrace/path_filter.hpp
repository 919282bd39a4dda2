#pragma once

#include <fnmatch.h>

#include <string>
#include <string_view>
#include <vector>

namespace bomtrace {

/// Include/exclude glob filter over canonical paths. Globs use fnmatch(3)
/// without FNM_PATHNAME, so `*` also matches `/`. Exclusion wins over
/// inclusion; an empty include list admits everything.
class PathFilter {
 public:
  static std::vector<std::string> default_excludes() {
    return {"/proc", "/proc/*", "/sys", "/sys/*", "/dev", "/dev/*"};
  }

  PathFilter() : excludes_(default_excludes()) {}
  PathFilter(std::vector<std::string> includes, std::vector<std::string> excludes)
      : includes_(std::move(includes)), excludes_(std::move(excludes)) {}

  static PathFilter with_defaults(std::vector<std::string> includes,
                                  std::vector<std::string> extra_excludes) {
    auto ex = default_excludes();
    ex.insert(ex.end(), extra_excludes.begin(), extra_excludes.end());
    return PathFilter(std::move(includes), std::move(ex));
  }

  bool excluded(std::string_view path) const {
    const std::string p(path);
    for (const auto& g : excludes_)
      if (::fnmatch(g.c_str(), p.c_str(), 0) == 0) return true;
    if (includes_.empty()) return false;
    for (const auto& g : includes_)
      if (::fnmatch(g.c_str(), p.c_str(), 0) == 0) return false;
    return true;
  }

  const std::vector<std::string>& includes() const { return includes_; }
  const std::vector<std::string>& excludes() const { return excludes_; }

 private:
  std::vector<std::string> includes_;
  std::vector<std::string> excludes_;
};

}  // namespace bomtrace
