// Command-line front end: detection, matching, evaluation, crop-based
// refinement, pseudo-pair synthesis, degradation validation and reporting.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 all samples skipped.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "sfkit/bench.hpp"
#include "sfkit/degrade.hpp"
#include "sfkit/rng.hpp"
#include "sfkit/version.hpp"
#include "sfkit/worker_pool.hpp"

using namespace sfkit;
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitAllSkipped = 3;

struct CommonOpts {
  std::string config_path;
  std::uint64_t seed = 42;
  bool seed_set = false;
  int workers = 0;
};

ModelKind parse_kind(const std::string& s) {
  if (s == "affine") return ModelKind::kAffine;
  if (s == "homography") return ModelKind::kHomography;
  throw std::invalid_argument("model kind must be 'affine' or 'homography'");
}

BlendMode parse_blend(const std::string& s) {
  if (s == "seamless") return BlendMode::kSeamless;
  if (s == "mixed") return BlendMode::kMixed;
  if (s == "direct") return BlendMode::kDirect;
  throw std::invalid_argument("blend mode must be seamless, mixed or direct");
}

// Config file: JSON overriding matcher/crop/blend defaults field by field.
struct ToolConfig {
  MatcherConfig matcher;
  CropConfig crop;
  BlendMode blend = BlendMode::kSeamless;
};

ToolConfig load_config(const CommonOpts& opts) {
  ToolConfig cfg;
  if (!opts.config_path.empty()) {
    std::ifstream in(opts.config_path);
    if (!in) throw std::runtime_error("cannot open config " + opts.config_path);
    json j;
    in >> j;
    if (j.contains("detector")) {
      const auto& d = j["detector"];
      if (d.contains("threshold")) cfg.matcher.detector.threshold = d["threshold"].get<float>();
      if (d.contains("levels")) cfg.matcher.detector.levels = d["levels"].get<int>();
      if (d.contains("scale_factor"))
        cfg.matcher.detector.scale_factor = d["scale_factor"].get<double>();
      if (d.contains("max_per_level"))
        cfg.matcher.detector.max_per_level = d["max_per_level"].get<int>();
      if (d.contains("max_total")) cfg.matcher.detector.max_total = d["max_total"].get<int>();
    }
    if (j.contains("ratio")) cfg.matcher.ratio = j["ratio"].get<float>();
    if (j.contains("max_dimension")) cfg.matcher.max_dimension = j["max_dimension"].get<int>();
    if (j.contains("ransac")) {
      const auto& r = j["ransac"];
      if (r.contains("kind")) cfg.matcher.ransac.kind = parse_kind(r["kind"].get<std::string>());
      if (r.contains("inlier_px")) cfg.matcher.ransac.inlier_px = r["inlier_px"].get<double>();
      if (r.contains("max_iters")) cfg.matcher.ransac.max_iters = r["max_iters"].get<int>();
      if (r.contains("confidence")) cfg.matcher.ransac.confidence = r["confidence"].get<double>();
      if (r.contains("seed")) cfg.matcher.ransac.seed = r["seed"].get<std::uint64_t>();
    }
    if (j.contains("crop")) {
      const auto& c = j["crop"];
      if (c.contains("margin")) cfg.crop.margin = c["margin"].get<double>();
      if (c.contains("snap")) cfg.crop.snap = c["snap"].get<int>();
      if (c.contains("min_size")) cfg.crop.min_size = c["min_size"].get<int>();
    }
    if (j.contains("blend_mode")) cfg.blend = parse_blend(j["blend_mode"].get<std::string>());
  }
  if (opts.seed_set) cfg.matcher.ransac.seed = opts.seed;
  return cfg;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

json skips_to_json(const std::vector<Skip>& skips) {
  json arr = json::array();
  for (const auto& s : skips) arr.push_back({{"sample_id", s.sample_id}, {"reason", s.reason}});
  return arr;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_detect(const std::string& image_path, const std::string& out,
               const std::string& image_id, const CommonOpts& opts) {
  const ToolConfig cfg = load_config(opts);
  const Image img = load_image(image_path);
  const std::string id = image_id.empty() ? fs::path(image_path).stem().string() : image_id;
  const KeypointSet set = detect_and_describe(img, cfg.matcher.detector, id);
  write_text(out, keypointset_to_json(set));
  std::cout << set.keypoints.size() << " keypoints -> " << out << "\n";
  return kExitOk;
}

int cmd_match(const std::string& image_a, const std::string& image_b,
              const std::string& import_path, bool verify_import,
              const std::string& out, const CommonOpts& opts) {
  const ToolConfig cfg = load_config(opts);
  if (!import_path.empty()) {
    std::optional<RansacConfig> verify;
    if (verify_import) verify = cfg.matcher.ransac;
    const ExternalMatches ext = load_external_matches_file(import_path, verify);
    std::cout << "imported pairs: " << ext.pairs.size()
              << ", verified inliers: " << ext.matchset.inlier_count() << "\n";
    if (!out.empty())
      write_text(out, matchset_to_json(ext.matchset, ext.pairs, ext.image_a, ext.image_b));
    return kExitOk;
  }
  const Image a = load_image(image_a);
  const Image b = load_image(image_b);
  const MatchCountResult r = match_count(a, b, cfg.matcher);
  std::cout << "verified: " << r.count << "\nraw: " << r.raw_count << "\n";
  if (!out.empty()) write_text(out, matchset_to_json(r.matchset, r.kps_ref, r.kps_other));
  return kExitOk;
}

int cmd_eval(const std::string& manifest_path, const std::string& out, int tau,
             bool on_crop, const std::string& clip_dir, const std::string& dino_dir,
             const CommonOpts& opts) {
  const ToolConfig tool = load_config(opts);
  EvalConfig cfg;
  cfg.matcher = tool.matcher;
  cfg.tau = tau;
  cfg.workers = opts.workers;
  cfg.on_crop = on_crop;
  cfg.clip_emb_dir = clip_dir;
  cfg.dino_emb_dir = dino_dir;
  const Manifest m = load_manifest(manifest_path);
  const EvalReport report = run_eval(m, cfg);
  write_text(out, eval_report_to_json(report));
  if (report.overall) {
    std::cout << "samples: " << report.overall->n_samples
              << ", skips: " << report.skips.size()
              << ", mean AKI: " << report.overall->mean_aki
              << ", K_Gain: " << percent_string(report.overall->k_gain) << "%\n";
  }
  return kExitOk;
}

int cmd_refine(const std::string& manifest_path, const std::string& refiner_cmd,
               const std::string& out_dir, const std::string& out, double timeout,
               const std::string& blend_mode, const CommonOpts& opts) {
  const ToolConfig tool = load_config(opts);
  RefineConfig cfg;
  cfg.matcher = tool.matcher;
  cfg.crop = tool.crop;
  cfg.blend_mode = blend_mode.empty() ? tool.blend : parse_blend(blend_mode);
  cfg.workers = opts.workers;
  RefinerSpec spec;
  spec.command = refiner_cmd;
  spec.timeout_sec = timeout;

  const Manifest m = load_manifest(manifest_path);
  const RefineOutcome outcome = run_refine(m, spec, cfg, out_dir);
  save_manifest(outcome.manifest, out);

  json log;
  log["schema_version"] = kReportSchemaVersion;
  log["skips"] = skips_to_json(outcome.skips);
  log["refined"] = static_cast<int>(m.entries.size() - outcome.skips.size());
  write_text((fs::path(out_dir) / "refine_log.json").string(), log.dump(2) + "\n");

  std::cout << "refined " << (m.entries.size() - outcome.skips.size()) << "/"
            << m.entries.size() << " samples -> " << out << "\n";
  for (const auto& s : outcome.skips)
    std::cerr << "skip " << s.sample_id << ": " << s.reason << "\n";
  if (!m.entries.empty() && outcome.skips.size() == m.entries.size()) {
    std::cerr << "every sample skipped\n";
    return kExitAllSkipped;
  }
  return kExitOk;
}

int cmd_pseudo_pair(const std::string& images_dir, const std::string& list_path,
                    const std::string& out_dir, const std::string& out,
                    double strength, double level, bool swap,
                    const std::string& external_cmd, double timeout,
                    const CommonOpts& opts) {
  std::vector<std::string> inputs;
  if (!list_path.empty()) {
    std::ifstream in(list_path);
    if (!in) throw std::runtime_error("cannot open list " + list_path);
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) inputs.push_back(line);
  } else {
    std::vector<fs::path> found;
    for (const auto& entry : fs::directory_iterator(images_dir)) {
      const std::string ext = entry.path().extension().string();
      if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") found.push_back(entry.path());
    }
    std::sort(found.begin(), found.end());
    for (const auto& p : found) inputs.push_back(p.string());
  }
  if (inputs.empty()) throw std::runtime_error("no input images");

  fs::create_directories(out_dir);
  std::ofstream records(out);
  if (!records) throw std::runtime_error("cannot write " + out);

  // Per-item seeds derive from the index, so the worker pool cannot change
  // any output; records are written in input order afterwards.
  struct Row {
    bool ok = false;
    std::string line;
    std::string error;
  };
  std::vector<Row> rows(inputs.size());
  parallel_items(inputs.size(), opts.workers, [&](std::size_t i) {
    try {
      const Image clean = load_image(inputs[i]);
      DegradeSpec dspec;
      dspec.strength = strength;
      dspec.seed = mix_seed(opts.seed, i);
      if (level > 0.0) dspec.level = level;
      if (!external_cmd.empty()) {
        dspec.method = DegradeMethod::kExternal;
        dspec.external_cmd = external_cmd;
        dspec.timeout_sec = timeout;
      }
      AugmentSpec aspec;
      aspec.seed = mix_seed(opts.seed ^ 0xa5a5a5a5ULL, i);

      PseudoPair pair = make_pseudo_pair(clean, dspec, aspec, swap);
      const std::string stem = fs::path(inputs[i]).stem().string();
      pair.record.clean_path = inputs[i];
      pair.record.degraded_path = (fs::path(out_dir) / (stem + "_degraded.png")).string();
      pair.record.reference_path = (fs::path(out_dir) / (stem + "_reference.png")).string();
      save_image(pair.degraded, pair.record.degraded_path);
      save_image(pair.reference, pair.record.reference_path);
      rows[i].line = pair_record_to_json(pair.record);
      rows[i].ok = true;
    } catch (const std::exception& e) {
      rows[i].error = e.what();
    }
  });

  int done = 0, skipped = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].ok) {
      records << rows[i].line << "\n";
      ++done;
    } else {
      std::cerr << "skip " << inputs[i] << ": " << rows[i].error << "\n";
      ++skipped;
    }
  }
  std::cout << done << " pairs -> " << out << "\n";
  if (done == 0 && skipped > 0) return kExitAllSkipped;
  return kExitOk;
}

int cmd_validate_degrade(const std::string& image_path, const std::string& out,
                         int variants, double strength, bool control,
                         const std::string& map_out, const CommonOpts& opts) {
  const Image clean = load_image(image_path);
  std::vector<Image> degraded;
  degraded.reserve(variants);
  for (int i = 0; i < variants; ++i)
    degraded.push_back(degrade_builtin(clean, strength, mix_seed(opts.seed, i)));
  const ValidationReport rep = validate_degradation(clean, degraded);

  json j;
  j["schema_version"] = kReportSchemaVersion;
  j["image"] = image_path;
  j["n_variants"] = rep.n_variants;
  j["strength"] = strength;
  j["seed"] = opts.seed;
  j["degenerate"] = rep.degenerate;
  if (!rep.degenerate) {
    j["pearson_r"] = rep.pearson_r;
    j["hi_lo_ratio"] = rep.hi_lo_ratio;
  }
  if (control) {
    std::vector<Image> flat;
    Rng noise_seed(opts.seed ^ 0x5eedULL);
    for (int i = 0; i < variants; ++i) {
      Image v = clean;
      Rng rng(noise_seed.next_u64());
      for (auto& p : v.pixels)
        p = std::clamp(p + 0.02f * static_cast<float>(rng.next_normal()), 0.0f, 1.0f);
      flat.push_back(std::move(v));
    }
    const ValidationReport ctl = validate_degradation(clean, flat);
    j["control_hi_lo_ratio"] = ctl.hi_lo_ratio;
  }
  if (!map_out.empty()) {
    const FloatMap var = variance_map(degraded);
    float vmax = 0.0f;
    for (float v : var.values) vmax = std::max(vmax, v);
    Image vis(var.width, var.height, 1);
    for (std::size_t i = 0; i < var.values.size(); ++i)
      vis.pixels[i] = vmax > 0 ? var.values[i] / vmax : 0.0f;
    save_image(vis, map_out);
    j["variance_map"] = map_out;
  }
  write_text(out, j.dump(2) + "\n");
  std::cout << (rep.degenerate
                    ? std::string("degenerate (no variance)")
                    : "pearson_r " + std::to_string(rep.pearson_r) + ", hi/lo " +
                          std::to_string(rep.hi_lo_ratio))
            << " -> " << out << "\n";
  return kExitOk;
}

int cmd_filter(const std::string& manifest_path, const std::string& out, int min_matches,
               const std::string& log_path, int sample_n, const CommonOpts& opts) {
  const ToolConfig tool = load_config(opts);
  const Manifest m = load_manifest(manifest_path);
  const FilterOutcome outcome = quality_filter(m, min_matches, tool.matcher, opts.workers);

  Manifest result = outcome.manifest;
  if (sample_n > 0)
    result = stratified_subset(result, outcome.counts, sample_n, opts.seed);
  save_manifest(result, out);

  if (!log_path.empty()) {
    json log;
    log["schema_version"] = kReportSchemaVersion;
    json counts = json::array();
    for (const auto& [id, c] : outcome.counts)
      counts.push_back({{"sample_id", id}, {"count", c}});
    log["counts"] = std::move(counts);
    log["skips"] = skips_to_json(outcome.skips);
    log["min_matches"] = min_matches;
    write_text(log_path, log.dump(2) + "\n");
  }
  std::cout << "kept " << result.entries.size() << "/" << m.entries.size() << " entries -> "
            << out << "\n";
  if (!m.entries.empty() && outcome.skips.size() == m.entries.size()) return kExitAllSkipped;
  return kExitOk;
}

int cmd_crops(const std::string& manifest_path, const std::string& out_dir,
              const CommonOpts& opts) {
  const ToolConfig tool = load_config(opts);
  const Manifest m = load_manifest(manifest_path);
  const CropExportOutcome out =
      export_subject_crops(m, tool.matcher, tool.crop, out_dir, opts.workers);
  std::cout << out.crops_written << " crops -> " << out.manifest_path << "\n";
  for (const auto& s : out.skips) std::cerr << "skip " << s.sample_id << ": " << s.reason << "\n";
  if (!m.entries.empty() && out.skips.size() == m.entries.size()) return kExitAllSkipped;
  return kExitOk;
}

int cmd_scatter(const std::string& report_path, const std::string& out,
                const std::string& format) {
  std::ifstream in(report_path);
  if (!in) throw std::runtime_error("cannot open report " + report_path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const EvalReport report = eval_report_from_json(text);
  emit_scatter(report, out, format == "svg" ? ScatterFormat::kSvg : ScatterFormat::kCsv);
  std::cout << report.samples.size() << " points -> " << out << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"subject-fidelity toolkit: keypoint metrics, crop-based refinement, "
               "pseudo-pair synthesis"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  CommonOpts common;
  std::string manifest_path, out, out_dir, config_path;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "JSON config overriding defaults");
    sub->add_option("--seed", common.seed, "RANSAC / synthesis seed")
        ->each([&](const std::string&) { common.seed_set = true; });
    sub->add_option("--workers", common.workers, "worker limit (0 = all cores)");
  };

  // detect
  std::string image_path, image_id;
  auto* detect = app.add_subcommand("detect", "detect keypoints and descriptors");
  detect->add_option("--image", image_path, "input image")->required();
  detect->add_option("--out", out, "output keypoint-set JSON")->required();
  detect->add_option("--id", image_id, "image id recorded in the output");
  add_common(detect);

  // match
  std::string image_a, image_b, import_path;
  bool verify_import = false;
  auto* match = app.add_subcommand("match", "match two images, or import external matches");
  match->add_option("--image-a", image_a, "reference image");
  match->add_option("--image-b", image_b, "other image");
  match->add_option("--import", import_path, "external-match JSON to import instead");
  match->add_flag("--verify-import", verify_import, "re-verify imported pairs with RANSAC");
  match->add_option("--out", out, "output match-set JSON");
  add_common(match);

  // eval
  int tau = 0;
  bool on_crop = false;
  std::string clip_dir, dino_dir;
  auto* eval = app.add_subcommand("eval", "per-sample keypoint deltas and dataset gain");
  eval->add_option("--manifest", manifest_path, "dataset manifest")->required();
  eval->add_option("--out", out, "output report JSON")->required();
  eval->add_option("--tau", tau, "improvement threshold (strict >)");
  eval->add_flag("--on-crop", on_crop, "match on subject crops instead of full images");
  eval->add_option("--clip-emb", clip_dir, "directory of CLIP embeddings per sample");
  eval->add_option("--dino-emb", dino_dir, "directory of DINO embeddings per sample");
  add_common(eval);

  // refine
  std::string refiner_cmd, blend_mode;
  double timeout = 300.0;
  auto* refine = app.add_subcommand("refine", "crop, run an external refiner, paste back");
  refine->add_option("--manifest", manifest_path, "dataset manifest")->required();
  refine->add_option("--refiner-cmd", refiner_cmd,
                     "command template with {subject} {crop} {out}")->required();
  refine->add_option("--out-dir", out_dir, "directory for crops and refined images")
      ->required();
  refine->add_option("--out", out, "output manifest with refined paths")->required();
  refine->add_option("--timeout", timeout, "per-sample refiner timeout in seconds");
  refine->add_option("--blend-mode", blend_mode, "seamless | mixed | direct");
  add_common(refine);

  // pseudo-pair
  std::string images_dir, list_path, external_cmd;
  double strength = 0.5, level = 0.0;
  bool swap = false;
  auto* pseudo = app.add_subcommand("pseudo-pair", "synthesize degraded/reference pairs");
  pseudo->add_option("--images", images_dir, "directory of clean images");
  pseudo->add_option("--list", list_path, "file listing clean images, one per line");
  pseudo->add_option("--out-dir", out_dir, "directory for synthesized images")->required();
  pseudo->add_option("--out", out, "output JSONL pair records")->required();
  pseudo->add_option("--strength", strength, "builtin degrader strength");
  pseudo->add_option("--level", level, "fixed level 1.0/0.5/0.25 (unset: drawn per pair)");
  pseudo->add_flag("--swap", swap, "degrade the augmented view instead of the clean image");
  pseudo->add_option("--external-cmd", external_cmd,
                     "external degrader template with {in} {out}");
  pseudo->add_option("--timeout", timeout, "external degrader timeout in seconds");
  add_common(pseudo);

  // validate-degrade
  int variants = 10;
  bool control = false;
  std::string map_out;
  auto* validate = app.add_subcommand("validate-degrade",
                                      "variance-map check of the builtin degrader");
  validate->add_option("--image", image_path, "clean input image")->required();
  validate->add_option("--out", out, "output report JSON")->required();
  validate->add_option("--variants", variants, "number of degraded variants");
  validate->add_option("--strength", strength, "degrader strength");
  validate->add_flag("--control", control, "also run the uniform-noise control");
  validate->add_option("--map-out", map_out, "write the normalized variance map as PNG");
  add_common(validate);

  // filter
  int min_matches = 10, sample_n = 0;
  std::string log_path;
  auto* filter = app.add_subcommand("filter", "coarse quality filter on verified matches");
  filter->add_option("--manifest", manifest_path, "dataset manifest")->required();
  filter->add_option("--out", out, "output filtered manifest")->required();
  filter->add_option("--min-matches", min_matches, "minimum verified matches");
  filter->add_option("--log", log_path, "write per-sample counts and skips");
  filter->add_option("--sample", sample_n, "stratified subset size after filtering");
  add_common(filter);

  // crops
  auto* crops = app.add_subcommand("crops", "export subject-region crops for embedding");
  crops->add_option("--manifest", manifest_path, "dataset manifest")->required();
  crops->add_option("--out-dir", out_dir, "output directory")->required();
  add_common(crops);

  // scatter
  std::string report_path, format = "csv";
  auto* scatter = app.add_subcommand("scatter", "emit scatter data (CSV) or plot (SVG)");
  scatter->add_option("--report", report_path, "evaluation report JSON")->required();
  scatter->add_option("--out", out, "output path")->required();
  scatter->add_option("--format", format, "csv | svg")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (detect->parsed()) return cmd_detect(image_path, out, image_id, common);
    if (match->parsed()) {
      if (import_path.empty() && (image_a.empty() || image_b.empty())) {
        std::cerr << "match needs --image-a/--image-b or --import\n";
        return kExitUsage;
      }
      return cmd_match(image_a, image_b, import_path, verify_import, out, common);
    }
    if (eval->parsed())
      return cmd_eval(manifest_path, out, tau, on_crop, clip_dir, dino_dir, common);
    if (refine->parsed())
      return cmd_refine(manifest_path, refiner_cmd, out_dir, out, timeout, blend_mode,
                        common);
    if (pseudo->parsed()) {
      if (images_dir.empty() && list_path.empty()) {
        std::cerr << "pseudo-pair needs --images or --list\n";
        return kExitUsage;
      }
      return cmd_pseudo_pair(images_dir, list_path, out_dir, out, strength, level, swap,
                             external_cmd, timeout, common);
    }
    if (validate->parsed())
      return cmd_validate_degrade(image_path, out, variants, strength, control, map_out,
                                  common);
    if (filter->parsed())
      return cmd_filter(manifest_path, out, min_matches, log_path, sample_n, common);
    if (crops->parsed()) return cmd_crops(manifest_path, out_dir, common);
    if (scatter->parsed()) {
      if (format != "csv" && format != "svg") {
        std::cerr << "--format must be csv or svg\n";
        return kExitUsage;
      }
      return cmd_scatter(report_path, out, format);
    }
  } catch (const AllSkippedError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitAllSkipped;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
