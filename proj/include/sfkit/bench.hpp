#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sfkit/cropblend.hpp"
#include "sfkit/matching.hpp"
#include "sfkit/metrics.hpp"

namespace sfkit {

class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Every sample in a batch was skipped; maps to its own CLI exit code.
class AllSkippedError : public EvalError {
 public:
  using EvalError::EvalError;
};

struct ManifestEntry {
  std::string sample_id;
  std::string subject_path;
  std::string generated_path;
  std::string refined_path;  // optional, empty when absent
  std::string method_tag;
  std::string backbone_tag;
};

struct Manifest {
  int schema_version = 1;
  std::vector<ManifestEntry> entries;
};

/// External refiner invocation: command template with {subject} {crop} {out}
/// placeholders, file-and-process based, no text channel.
struct RefinerSpec {
  std::string command;
  double timeout_sec = 300.0;
  int workers = 0;  // 0 = hardware concurrency
};

/// In-process refiner used for testing and embedding: maps (subject, crop) to
/// the refined crop. Throwing marks the sample as skipped.
using RefinerFn = std::function<Image(const Image& subject, const Image& crop)>;

struct Skip {
  std::string sample_id;
  std::string reason;
};

struct GroupSummary {
  std::string method_tag;
  std::string backbone_tag;
  ReportSummary summary;
};

struct EvalConfig {
  MatcherConfig matcher;
  int tau = 0;
  int workers = 0;          // 0 = hardware concurrency
  bool on_crop = false;     // match on subject-region crops instead of full images
  std::string clip_emb_dir; // optional directories of per-sample embeddings
  std::string dino_emb_dir;
};

struct EvalReport {
  int schema_version = 1;
  std::string tool_version;
  std::string generated_at;  // timestamp, excluded from determinism comparisons
  EvalConfig config;
  std::vector<SampleResult> samples;  // ordered by sample_id
  std::vector<Skip> skips;            // ordered by sample_id
  std::vector<GroupSummary> groups;   // ordered by (method, backbone)
  std::optional<ReportSummary> overall;
};

struct RefineConfig {
  MatcherConfig matcher;
  CropConfig crop;
  BlendMode blend_mode = BlendMode::kSeamless;
  int workers = 0;
};

struct RefineOutcome {
  Manifest manifest;        // refined_path filled where refinement succeeded
  std::vector<Skip> skips;
  std::vector<CropRegion> regions;  // parallel to manifest entries that succeeded
};

Manifest load_manifest(const std::string& path);
void save_manifest(const Manifest& m, const std::string& path);

/// Keeps entries whose (subject, generated) verified match count reaches
/// min_matches. Per-sample failures become skips, never aborting the batch.
struct FilterOutcome {
  Manifest manifest;
  std::vector<std::pair<std::string, int>> counts;  // per evaluated sample
  std::vector<Skip> skips;
};
FilterOutcome quality_filter(const Manifest& m, int min_matches,
                             const MatcherConfig& cfg, int workers = 0);

/// Per entry: n_base = verified(subject, generated), n_refined =
/// verified(subject, refined), AKI, then per-(method, backbone) aggregation.
/// Throws EvalError when every sample skipped.
EvalReport run_eval(const Manifest& m, const EvalConfig& cfg);

/// The crop-refine-blend loop around an external command.
RefineOutcome run_refine(const Manifest& m, const RefinerSpec& refiner,
                         const RefineConfig& cfg, const std::string& out_dir);

/// Same loop around an in-process refiner.
RefineOutcome run_refine(const Manifest& m, const RefinerFn& refiner,
                         const RefineConfig& cfg, const std::string& out_dir);

/// Writes subject-region crops of generated (and refined, when present)
/// images plus a crop manifest for an external embedder.
struct CropExportOutcome {
  std::vector<Skip> skips;
  std::string manifest_path;
  int crops_written = 0;
};
CropExportOutcome export_subject_crops(const Manifest& m, const MatcherConfig& cfg,
                                       const CropConfig& crop_cfg,
                                       const std::string& out_dir, int workers = 0);

/// Seeded fixed-size subset preserving the distribution of baseline match
/// counts (stratified by n_base deciles).
Manifest stratified_subset(const Manifest& m,
                           const std::vector<std::pair<std::string, int>>& base_counts,
                           int subset_size, std::uint64_t seed);

std::string eval_report_to_json(const EvalReport& report);
EvalReport eval_report_from_json(const std::string& text);

enum class ScatterFormat { kCsv, kSvg };

/// CSV columns sample_id,n_base,n_refined,aki; SVG is a scatter of
/// (n_base, n_refined) with the dashed y=x reference line and the
/// above-line region shaded.
void emit_scatter(const EvalReport& report, const std::string& path,
                  ScatterFormat format);

}  // namespace sfkit
