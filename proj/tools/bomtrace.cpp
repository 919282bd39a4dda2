// bomtrace command-line driver.

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bomtrace/bomtrace.hpp"

namespace fs = std::filesystem;
using namespace bomtrace;

namespace {

enum class Level { quiet, error, warn, info, debug };

Level log_level() {
  static const Level level = [] {
    const char* v = std::getenv("BOMTRACE_LOG");
    std::string s = v ? v : "";
    if (s == "quiet" || s == "off") return Level::quiet;
    if (s == "error") return Level::error;
    if (s == "info") return Level::info;
    if (s == "debug") return Level::debug;
    return Level::warn;
  }();
  return level;
}

void diag(Level level, const std::string& msg) {
  if (level > log_level()) return;
  static constexpr const char* kNames[] = {"", "error", "warning", "info", "debug"};
  std::cerr << "bomtrace: " << kNames[static_cast<int>(level)] << ": " << msg << "\n";
}

/// Output file written to a sibling temp path and renamed into place on
/// commit(). Abandoned outputs are removed.
class AtomicFile {
 public:
  explicit AtomicFile(fs::path target)
      : target_(std::move(target)),
        temp_(target_.string() + ".tmp." + std::to_string(::getpid())) {
    out_.open(temp_, std::ios::binary | std::ios::trunc);
    if (!out_) throw Error("cannot write " + temp_.string());
  }
  AtomicFile(const AtomicFile&) = delete;
  AtomicFile& operator=(const AtomicFile&) = delete;
  ~AtomicFile() {
    if (!committed_) {
      out_.close();
      std::error_code ec;
      fs::remove(temp_, ec);
    }
  }

  std::ofstream& stream() { return out_; }

  void commit() {
    out_.close();
    if (!out_) throw Error("write failed: " + temp_.string());
    fs::rename(temp_, target_);
    committed_ = true;
  }

 private:
  fs::path target_;
  fs::path temp_;
  std::ofstream out_;
  bool committed_ = false;
};

void write_atomically(const fs::path& target, const std::string& bytes) {
  AtomicFile f(target);
  f.stream() << bytes;
  f.commit();
}

std::string read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::system_error(errno, std::generic_category(), path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct NotFound : Error {
  using Error::Error;
};

void require_file(const std::string& path) {
  if (!fs::exists(path)) throw NotFound("no such file: " + path);
}

SbomDocument load_document(const std::string& path) {
  require_file(path);
  return parse_document(read_all(path));
}

struct CommonOptions {
  std::vector<std::string> includes;
  std::vector<std::string> excludes;
  bool no_redact = false;
  std::vector<std::string> redact_patterns;
  bool inputs_only = false;
  bool verbatim_env = false;
  unsigned workers = 1;

  PipelineOptions pipeline() const {
    PipelineOptions opt;
    opt.filter = PathFilter::with_defaults(includes, excludes);
    if (no_redact) {
      opt.redaction = RedactionPolicy::disabled();
    } else {
      opt.redaction = RedactionPolicy::defaults();
      opt.redaction.patterns.insert(opt.redaction.patterns.end(), redact_patterns.begin(),
                                    redact_patterns.end());
    }
    opt.verbatim_env = verbatim_env;
    opt.inputs_only = inputs_only;
    opt.workers = workers == 0 ? std::max(1u, std::thread::hardware_concurrency()) : workers;
    return opt;
  }
};

void add_common(CLI::App* cmd, CommonOptions& c) {
  cmd->add_option("--include", c.includes, "Only record paths matching GLOB (repeatable)");
  cmd->add_option("--exclude", c.excludes, "Skip paths matching GLOB (repeatable; wins over --include)");
  cmd->add_flag("--no-redact", c.no_redact, "Keep environment values verbatim in the log");
  cmd->add_option("--redact-pattern", c.redact_patterns, "Extra env-key substring to redact (repeatable)");
  cmd->add_flag("--inputs-only", c.inputs_only, "Only list files read before any write");
  cmd->add_flag("--verbatim-env", c.verbatim_env, "Keep empty environment entries in command properties");
}

void warn_on_drops(const BuildStats& s) {
  if (s.dropped_events > 0)
    diag(Level::warn, std::to_string(s.dropped_events) + " events were dropped; the SBOM may be incomplete");
}

bool want_json(const std::string& format) { return format == "json"; }

int cmd_trace(const CommonOptions& common, LiveBackend backend, const std::string& pin_dir,
              const std::string& out, const std::string& events_out, std::vector<std::string> command) {
  LiveOptions lo;
  lo.command = std::move(command);
  lo.backend = backend;
  lo.pin_dir = pin_dir;
  LiveSource source(lo);

  AtomicFile events(events_out);
  LogWriter writer(events.stream());
  writer.header(source.header());
  LiveRecorder recorder(writer, common.pipeline());
  while (auto e = source.next()) {
    diag(Level::debug, serialize_event(*e));
    recorder.push(std::move(*e), source.last_truncated());
  }
  PipelineResult result = recorder.finish(source.header());
  events.commit();
  write_atomically(out, emit(result.document));
  warn_on_drops(result.stats);
  if (auto n = source.truncated(EventKind::fork))
    diag(Level::warn, std::to_string(n) + " fork records were truncated (traced-pid set full); "
                      "descendants of those processes may be missing");
  if (auto n = source.truncated(EventKind::exec))
    diag(Level::warn, std::to_string(n) + " exec records had argv/env truncated");
  if (source.skipped() > 0)
    diag(Level::info, std::to_string(source.skipped()) + " records without an absolute path were skipped");
  diag(Level::info, "merkle root " + result.tree.root().hex());
  return source.root_status().value_or(0);
}

int cmd_replay(const CommonOptions& common, const std::string& events, const std::string& out) {
  require_file(events);
  ReplaySource source(events);
  PipelineResult result = run_replay(source, common.pipeline());
  const std::string bytes = emit(result.document);
  if (out.empty() || out == "-")
    std::cout << bytes;
  else
    write_atomically(out, bytes);
  warn_on_drops(result.stats);
  diag(Level::info, "merkle root " + result.tree.root().hex());
  return exit_code::ok;
}

int cmd_verify(const std::string& path, const std::string& expected, const std::string& baseline_path,
               const std::string& format) {
  SbomDocument doc = load_document(path);
  std::optional<SbomDocument> baseline;
  if (!baseline_path.empty()) baseline = load_document(baseline_path);
  if (!expected.empty() && !Digest::is_valid_hex(expected))
    throw CLI::ValidationError("--expected-root", "expected 64 lowercase hex characters");
  auto report = verify_document(doc, expected.empty() ? std::nullopt : std::optional(expected),
                                baseline ? &*baseline : nullptr);
  std::cout << (want_json(format) ? render_json(report) : render_text(report));
  switch (report.verdict) {
    case Verdict::match: return exit_code::ok;
    case Verdict::mismatch: return exit_code::mismatch;
    case Verdict::unverifiable: return exit_code::unverifiable;
  }
  return exit_code::unverifiable;
}

int cmd_diff(const std::string& a, const std::string& b, const std::string& format) {
  auto da = load_document(a);
  auto db = load_document(b);
  auto d = diff_documents(da, db);
  std::cout << (want_json(format) ? render_json(d) : render_text(d));
  return d.identical_roots() ? exit_code::ok : exit_code::differs;
}

int cmd_proof(const std::string& path, const std::string& file, std::optional<std::uint32_t> version,
              const std::string& out) {
  auto doc = load_document(path);
  if (doc.foreign) throw UnverifiableError("document carries no merkle root");
  auto leaves = leaves_from_document(doc);
  for (const auto& p : leaves.problems) diag(Level::warn, p);
  const auto tree = ProvenanceTree::build(leaves.leaves);
  auto index = version ? tree.index_of(file, *version) : tree.latest_index_of(file);
  if (!index) throw NotFound("no component for " + file);
  const Leaf& leaf = tree.leaves()[*index];
  const auto proof = prove_inclusion(tree, *index);

  nlohmann::ordered_json j;
  j["path"] = leaf.path;
  j["version"] = leaf.version;
  j["sha256"] = leaf.digest.hex();
  j["root"] = tree.root().hex();
  j["proof"] = nlohmann::ordered_json::parse(proof.to_json());
  const std::string bytes = j.dump(2) + "\n";
  if (out.empty() || out == "-")
    std::cout << bytes;
  else
    write_atomically(out, bytes);
  return exit_code::ok;
}

int cmd_proof_verify(const std::string& root_hex, std::string path, std::optional<std::uint32_t> version,
                     std::string sha_hex, const std::string& proof_arg) {
  auto root = Digest::from_hex(root_hex);
  if (!root) throw CLI::ValidationError("--root", "expected 64 lowercase hex characters");
  const std::string text = fs::exists(proof_arg) ? read_all(proof_arg) : proof_arg;

  InclusionProof proof;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw UnverifiableError(std::string("malformed proof: ") + e.what());
  }
  try {
    if (j.is_object() && j.contains("proof")) {
      if (path.empty() && j.contains("path") && j["path"].is_string()) path = j["path"].get<std::string>();
      if (!version && j.contains("version") && j["version"].is_number_unsigned())
        version = j["version"].get<std::uint32_t>();
      if (sha_hex.empty() && j.contains("sha256") && j["sha256"].is_string()) sha_hex = j["sha256"].get<std::string>();
      proof = InclusionProof::from_json(j["proof"].dump());
    } else {
      proof = InclusionProof::from_json(text);
    }
  } catch (const UnverifiableError&) {
    throw;
  } catch (const Error& e) {
    throw UnverifiableError(e.what());
  }
  if (path.empty()) throw CLI::ValidationError("--path", "leaf path is required");
  auto digest = Digest::from_hex(sha_hex);
  if (!digest) throw CLI::ValidationError("--sha256", "expected 64 lowercase hex characters");

  const Leaf leaf{path, version.value_or(1), *digest};
  if (verify_inclusion(*root, leaf, proof)) {
    std::cout << "valid\n";
    return exit_code::ok;
  }
  std::cout << "invalid\n";
  return exit_code::mismatch;
}

int cmd_stats(const std::string& events, const std::string& format) {
  require_file(events);
  ReplaySource source(events);
  auto s = compute_log_stats(source);
  std::cout << (want_json(format) ? render_json(s) : render_text(s));
  return exit_code::ok;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bomtrace: build provenance tracing and CycloneDX SBOM generation"};
  app.set_version_flag("--version", std::string(kToolName) + " " + std::string(kToolVersion));
  app.require_subcommand(1);

  CommonOptions common;
  std::string out, trace_out, events_out, events, format = "text";
  std::string expected_root, baseline;
  std::string sbom_a, sbom_b;
  std::string path, sha256, root, proof;
  std::optional<std::uint32_t> version;
  std::string backend_name = "ebpf";
  std::string pin_dir{kDefaultPinDir};
  std::vector<std::string> command;

  auto* trace = app.add_subcommand("trace", "Run a command under tracing and write its SBOM");
  add_common(trace, common);
  trace->add_option("--out", trace_out, "SBOM output path")->default_val("sbom.json");
  trace->add_option("--events-out", events_out, "Event log output path")->default_val("events.jsonl");
  trace->add_option("--backend", backend_name, "Capture backend")
      ->check(CLI::IsMember({"ebpf", "ptrace"}))
      ->default_val("ebpf");
  trace->add_option("--pin-dir", pin_dir, "Directory holding the kernel probe's pinned maps")
      ->default_val(std::string(kDefaultPinDir));
  trace->add_option("command", command, "Command to trace (after --)")->required();

  auto* replay = app.add_subcommand("replay", "Build the SBOM from a recorded event log");
  add_common(replay, common);
  replay->add_option("--events,events", events, "Event log to replay")->required();
  replay->add_option("--out", out, "SBOM output path ('-' for stdout)");
  replay->add_option("--workers", common.workers, "Hashing workers (0 = one per CPU)")->default_val(1);

  auto* verify = app.add_subcommand("verify", "Recompute and check an SBOM's merkle root");
  verify->add_option("sbom", sbom_a, "SBOM to verify")->required();
  verify->add_option("--expected-root", expected_root, "Root the document must match");
  verify->add_option("--baseline", baseline, "Earlier SBOM to list file differences against");
  verify->add_option("--format", format)->check(CLI::IsMember({"text", "json"}));

  auto* diffcmd = app.add_subcommand("diff", "Compare two SBOMs");
  diffcmd->add_option("a", sbom_a, "First SBOM")->required();
  diffcmd->add_option("b", sbom_b, "Second SBOM")->required();
  diffcmd->add_option("--format", format)->check(CLI::IsMember({"text", "json"}));

  auto* proofcmd = app.add_subcommand("proof", "Emit an inclusion proof for one file");
  proofcmd->add_option("sbom", sbom_a, "SBOM holding the file")->required();
  proofcmd->add_option("--path", path, "File path (without the name prefix)")->required();
  proofcmd->add_option("--version", version, "File version (default: latest)");
  proofcmd->add_option("--out", out, "Proof output path ('-' for stdout)");

  auto* proof_verify = app.add_subcommand("proof-verify", "Check an inclusion proof against a root");
  proof_verify->add_option("--root", root, "Trusted merkle root")->required();
  proof_verify->add_option("--proof", proof, "Proof file or inline JSON")->required();
  proof_verify->add_option("--path", path, "File path");
  proof_verify->add_option("--version", version, "File version");
  proof_verify->add_option("--sha256", sha256, "File SHA-256");

  auto* stats = app.add_subcommand("stats", "Summarize an event log");
  stats->add_option("--events,events", events, "Event log")->required();
  stats->add_option("--format", format)->check(CLI::IsMember({"text", "json"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? exit_code::ok : exit_code::usage;
  }

  try {
    if (*trace)
      return cmd_trace(common, backend_name == "ptrace" ? LiveBackend::ptrace : LiveBackend::ebpf, pin_dir, trace_out,
                       events_out, command);
    if (*replay) return cmd_replay(common, events, out);
    if (*verify) return cmd_verify(sbom_a, expected_root, baseline, format);
    if (*diffcmd) return cmd_diff(sbom_a, sbom_b, format);
    if (*proofcmd) return cmd_proof(sbom_a, path, version, out);
    if (*proof_verify) return cmd_proof_verify(root, path, version, sha256, proof);
    if (*stats) return cmd_stats(events, format);
  } catch (const CLI::ValidationError& e) {
    diag(Level::error, e.what());
    return exit_code::usage;
  } catch (const NotFound& e) {
    diag(Level::error, e.what());
    return exit_code::not_found;
  } catch (const PermissionError& e) {
    diag(Level::error, e.what());
    return exit_code::privilege;
  } catch (const UnsupportedError& e) {
    diag(Level::error, e.what());
    return exit_code::unsupported;
  } catch (const ParseError& e) {
    diag(Level::error, std::string("malformed event log: ") + e.what());
    return exit_code::malformed_log;
  } catch (const DocumentError& e) {
    diag(Level::error, std::string("malformed SBOM: ") + e.what());
    return exit_code::unverifiable;
  } catch (const UnverifiableError& e) {
    diag(Level::error, e.what());
    return exit_code::unverifiable;
  } catch (const std::system_error& e) {
    diag(Level::error, e.what());
    return e.code() == std::errc::no_such_file_or_directory ? exit_code::not_found : exit_code::usage;
  } catch (const std::exception& e) {
    diag(Level::error, e.what());
    return exit_code::usage;
  }
  return exit_code::usage;
}
