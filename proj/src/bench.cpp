#include "sfkit/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <set>
#include <thread>

#include <nlohmann/json.hpp>

#include "sfkit/rng.hpp"
#include "sfkit/subprocess.hpp"
#include "sfkit/version.hpp"
#include "sfkit/worker_pool.hpp"

namespace sfkit {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open manifest " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ManifestError("manifest " + path + ": invalid JSON: " + e.what());
  }
  if (!j.contains("entries") || !j["entries"].is_array())
    throw ManifestError("manifest " + path + ": missing 'entries' array");

  Manifest m;
  if (j.contains("schema_version")) m.schema_version = j["schema_version"].get<int>();
  std::set<std::string> seen;
  std::size_t index = 0;
  for (const auto& e : j["entries"]) {
    ManifestEntry entry;
    for (const char* key : {"sample_id", "subject_path", "generated_path"})
      if (!e.contains(key) || !e[key].is_string())
        throw ManifestError("manifest " + path + ": entry " + std::to_string(index) +
                            " missing string field '" + key + "'");
    entry.sample_id = e["sample_id"].get<std::string>();
    entry.subject_path = e["subject_path"].get<std::string>();
    entry.generated_path = e["generated_path"].get<std::string>();
    if (e.contains("refined_path") && e["refined_path"].is_string())
      entry.refined_path = e["refined_path"].get<std::string>();
    if (e.contains("method_tag")) entry.method_tag = e["method_tag"].get<std::string>();
    if (e.contains("backbone_tag")) entry.backbone_tag = e["backbone_tag"].get<std::string>();
    if (!seen.insert(entry.sample_id).second)
      throw ManifestError("manifest " + path + ": duplicate sample_id '" +
                          entry.sample_id + "'");
    m.entries.push_back(std::move(entry));
    ++index;
  }
  return m;
}

void save_manifest(const Manifest& m, const std::string& path) {
  json j;
  j["schema_version"] = m.schema_version;
  json arr = json::array();
  for (const auto& e : m.entries) {
    json je;
    je["sample_id"] = e.sample_id;
    je["subject_path"] = e.subject_path;
    je["generated_path"] = e.generated_path;
    if (!e.refined_path.empty()) je["refined_path"] = e.refined_path;
    if (!e.method_tag.empty()) je["method_tag"] = e.method_tag;
    if (!e.backbone_tag.empty()) je["backbone_tag"] = e.backbone_tag;
    arr.push_back(std::move(je));
  }
  j["entries"] = std::move(arr);
  std::ofstream out(path);
  if (!out) throw ManifestError("cannot write manifest " + path);
  out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Quality filter
// ---------------------------------------------------------------------------

FilterOutcome quality_filter(const Manifest& m, int min_matches,
                             const MatcherConfig& cfg, int workers) {
  struct PerEntry {
    bool ok = false;
    int count = 0;
    std::string error;
  };
  std::vector<PerEntry> results(m.entries.size());

  parallel_items(m.entries.size(), workers, [&](std::size_t i) {
    const auto& e = m.entries[i];
    try {
      const Image subject = load_image(e.subject_path);
      const Image generated = load_image(e.generated_path);
      results[i].count = match_count(subject, generated, cfg).count;
      results[i].ok = true;
    } catch (const std::exception& ex) {
      results[i].error = ex.what();
    }
  });

  FilterOutcome out;
  out.manifest.schema_version = m.schema_version;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    if (!results[i].ok) {
      out.skips.push_back({m.entries[i].sample_id, results[i].error});
      continue;
    }
    out.counts.emplace_back(m.entries[i].sample_id, results[i].count);
    if (results[i].count >= min_matches) out.manifest.entries.push_back(m.entries[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

namespace {

std::optional<double> embedding_similarity(const std::string& dir,
                                           const std::string& sample_id,
                                           const std::string& other_role) {
  if (dir.empty()) return std::nullopt;
  auto find_one = [&](const std::string& role) -> std::optional<EmbeddingVector> {
    for (const char* ext : {".json", ".emb"}) {
      const fs::path p = fs::path(dir) / (sample_id + "." + role + ext);
      if (fs::exists(p)) return load_embedding(p.string());
    }
    return std::nullopt;
  };
  const auto subject = find_one("subject");
  const auto other = find_one(other_role);
  if (!subject || !other) return std::nullopt;
  return cosine_similarity(*subject, *other);
}

Image crop_for_matching(const Image& subject, const Image& full,
                        const MatcherConfig& cfg, const CropConfig& crop_cfg) {
  const MatchCountResult mc = match_count(subject, full, cfg);
  const CropRegion region =
      subject_crop(mc.matchset, mc.kps_other, full.width, full.height, crop_cfg);
  return extract_crop(full, region);
}

}  // namespace

EvalReport run_eval(const Manifest& m, const EvalConfig& cfg) {
  struct PerEntry {
    bool ok = false;
    SampleResult result;
    std::string error;
  };
  std::vector<PerEntry> rows(m.entries.size());

  parallel_items(m.entries.size(), cfg.workers, [&](std::size_t i) {
    const auto& e = m.entries[i];
    auto& row = rows[i];
    try {
      if (e.refined_path.empty())
        throw EvalError("no refined_path for sample " + e.sample_id);
      const Image subject = load_image(e.subject_path);
      Image generated = load_image(e.generated_path);
      Image refined = load_image(e.refined_path);
      if (cfg.on_crop) {
        generated = crop_for_matching(subject, generated, cfg.matcher, CropConfig{});
        refined = crop_for_matching(subject, refined, cfg.matcher, CropConfig{});
      }
      const MatchCountResult base = match_count(subject, generated, cfg.matcher);
      const MatchCountResult ref = match_count(subject, refined, cfg.matcher);
      row.result.sample_id = e.sample_id;
      row.result.method_tag = e.method_tag;
      row.result.backbone_tag = e.backbone_tag;
      row.result.n_base = base.count;
      row.result.n_refined = ref.count;
      row.result.n_base_raw = base.raw_count;
      row.result.n_refined_raw = ref.raw_count;
      row.result.aki = compute_aki(ref.count, base.count);
      row.result.clip_i = embedding_similarity(cfg.clip_emb_dir, e.sample_id, "refined");
      row.result.dino = embedding_similarity(cfg.dino_emb_dir, e.sample_id, "refined");
      row.ok = true;
    } catch (const std::exception& ex) {
      row.error = ex.what();
    }
  });

  EvalReport report;
  report.schema_version = kReportSchemaVersion;
  report.tool_version = kToolVersion;
  report.generated_at = now_utc();
  report.config = cfg;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].ok)
      report.samples.push_back(rows[i].result);
    else
      report.skips.push_back({m.entries[i].sample_id, rows[i].error});
  }
  std::sort(report.samples.begin(), report.samples.end(),
            [](const SampleResult& a, const SampleResult& b) {
              return a.sample_id < b.sample_id;
            });
  std::sort(report.skips.begin(), report.skips.end(),
            [](const Skip& a, const Skip& b) { return a.sample_id < b.sample_id; });

  if (report.samples.empty())
    throw AllSkippedError("run_eval: every sample was skipped (" +
                          std::to_string(report.skips.size()) + " skips)");

  // Per (method, backbone) groups, ordered by key.
  std::map<std::pair<std::string, std::string>, std::vector<SampleResult>> groups;
  for (const auto& s : report.samples)
    groups[{s.method_tag, s.backbone_tag}].push_back(s);
  for (const auto& [key, members] : groups) {
    GroupSummary g;
    g.method_tag = key.first;
    g.backbone_tag = key.second;
    g.summary = aggregate(members, cfg.tau);
    report.groups.push_back(std::move(g));
  }
  report.overall = aggregate(report.samples, cfg.tau);
  return report;
}

// ---------------------------------------------------------------------------
// Refinement orchestration
// ---------------------------------------------------------------------------

namespace {

struct RefineRow {
  bool ok = false;
  std::string refined_path;
  CropRegion region;
  std::string error;
};

RefineOutcome run_refine_impl(
    const Manifest& m, const RefineConfig& cfg, const std::string& out_dir,
    const std::function<Image(const ManifestEntry&, const Image& subject,
                              const Image& crop, const std::string& stem)>& refine_crop) {
  fs::create_directories(out_dir);
  std::vector<RefineRow> rows(m.entries.size());

  parallel_items(m.entries.size(), cfg.workers, [&](std::size_t i) {
    const auto& e = m.entries[i];
    auto& row = rows[i];
    try {
      const Image subject = load_image(e.subject_path);
      const Image generated = load_image(e.generated_path);

      const MatchCountResult mc = match_count(subject, generated, cfg.matcher);
      const CropRegion region = subject_crop(mc.matchset, mc.kps_other,
                                             generated.width, generated.height, cfg.crop);
      const Image crop = extract_crop(generated, region);

      const std::string stem = (fs::path(out_dir) / e.sample_id).string();
      const Image refined_crop = refine_crop(e, subject, crop, stem);
      if (refined_crop.width != crop.width || refined_crop.height != crop.height ||
          refined_crop.channels != crop.channels)
        throw EvalError("dim mismatch: refiner returned " +
                        std::to_string(refined_crop.width) + "x" +
                        std::to_string(refined_crop.height));

      const Image blended = poisson_blend(generated, refined_crop, region, cfg.blend_mode);
      const std::string refined_path = stem + "_refined.png";
      save_image(blended, refined_path);
      row.refined_path = refined_path;
      row.region = region;
      row.ok = true;
    } catch (const std::exception& ex) {
      row.error = ex.what();
    }
  });

  RefineOutcome out;
  out.manifest.schema_version = m.schema_version;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    ManifestEntry e = m.entries[i];
    if (rows[i].ok) {
      e.refined_path = rows[i].refined_path;
      out.regions.push_back(rows[i].region);
    } else {
      out.skips.push_back({e.sample_id, rows[i].error});
    }
    out.manifest.entries.push_back(std::move(e));
  }
  return out;
}

}  // namespace

RefineOutcome run_refine(const Manifest& m, const RefinerSpec& refiner,
                         const RefineConfig& cfg, const std::string& out_dir) {
  for (const char* key : {"{subject}", "{crop}", "{out}"})
    if (refiner.command.find(key) == std::string::npos)
      throw EvalError(std::string("refiner template missing ") + key);

  RefineConfig cfg2 = cfg;
  if (cfg2.workers == 0 && refiner.workers != 0) cfg2.workers = refiner.workers;

  return run_refine_impl(
      m, cfg2, out_dir,
      [&](const ManifestEntry&, const Image& subject, const Image& crop,
          const std::string& stem) {
        const std::string subject_path = stem + "_subject.png";
        const std::string crop_path = stem + "_crop.png";
        const std::string out_path = stem + "_refined_crop.png";
        save_image(subject, subject_path);
        save_image(crop, crop_path);

        std::string cmd = refiner.command;
        substitute_placeholder(cmd, "{subject}", subject_path);
        substitute_placeholder(cmd, "{crop}", crop_path);
        substitute_placeholder(cmd, "{out}", out_path);
        const CommandResult res = run_command(cmd, refiner.timeout_sec);
        if (res.timed_out) throw EvalError("refiner timed out");
        if (res.exit_code != 0)
          throw EvalError("refiner exited " + std::to_string(res.exit_code) + ": " +
                          res.stderr_tail);
        return load_image(out_path);
      });
}

RefineOutcome run_refine(const Manifest& m, const RefinerFn& refiner,
                         const RefineConfig& cfg, const std::string& out_dir) {
  return run_refine_impl(m, cfg, out_dir,
                         [&](const ManifestEntry&, const Image& subject,
                             const Image& crop, const std::string&) {
                           return refiner(subject, crop);
                         });
}

// ---------------------------------------------------------------------------
// Subject-crop export
// ---------------------------------------------------------------------------

CropExportOutcome export_subject_crops(const Manifest& m, const MatcherConfig& cfg,
                                       const CropConfig& crop_cfg,
                                       const std::string& out_dir, int workers) {
  fs::create_directories(out_dir);
  struct Row {
    bool ok = false;
    std::string error;
    json entry;
    int written = 0;
  };
  std::vector<Row> rows(m.entries.size());

  parallel_items(m.entries.size(), workers, [&](std::size_t i) {
    const auto& e = m.entries[i];
    auto& row = rows[i];
    try {
      const Image subject = load_image(e.subject_path);
      const Image generated = load_image(e.generated_path);
      const MatchCountResult mc = match_count(subject, generated, cfg);
      const CropRegion region = subject_crop(mc.matchset, mc.kps_other,
                                             generated.width, generated.height, crop_cfg);
      const std::string gen_crop = (fs::path(out_dir) / (e.sample_id + "_generated_crop.png")).string();
      save_image(extract_crop(generated, region), gen_crop);
      ++row.written;

      row.entry["sample_id"] = e.sample_id;
      row.entry["subject_path"] = e.subject_path;
      row.entry["generated_crop"] = gen_crop;
      row.entry["region"] = {{"x0", region.x0}, {"y0", region.y0},
                             {"w", region.w}, {"h", region.h}};

      if (!e.refined_path.empty()) {
        const Image refined = load_image(e.refined_path);
        const MatchCountResult mcr = match_count(subject, refined, cfg);
        const CropRegion region_r = subject_crop(mcr.matchset, mcr.kps_other,
                                                 refined.width, refined.height, crop_cfg);
        const std::string ref_crop = (fs::path(out_dir) / (e.sample_id + "_refined_crop.png")).string();
        save_image(extract_crop(refined, region_r), ref_crop);
        ++row.written;
        row.entry["refined_crop"] = ref_crop;
      }
      row.ok = true;
    } catch (const std::exception& ex) {
      row.error = ex.what();
    }
  });

  CropExportOutcome out;
  json entries = json::array();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].ok) {
      entries.push_back(rows[i].entry);
      out.crops_written += rows[i].written;
    } else {
      out.skips.push_back({m.entries[i].sample_id, rows[i].error});
    }
  }
  json j;
  j["schema_version"] = 1;
  j["entries"] = std::move(entries);
  out.manifest_path = (fs::path(out_dir) / "crop_manifest.json").string();
  std::ofstream f(out.manifest_path);
  if (!f) throw ManifestError("cannot write " + out.manifest_path);
  f << j.dump(2) << "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Stratified subset
// ---------------------------------------------------------------------------

Manifest stratified_subset(const Manifest& m,
                           const std::vector<std::pair<std::string, int>>& base_counts,
                           int subset_size, std::uint64_t seed) {
  if (subset_size <= 0 || m.entries.empty()) return Manifest{m.schema_version, {}};

  std::map<std::string, int> count_of;
  for (const auto& [id, c] : base_counts) count_of[id] = c;

  struct Item {
    std::size_t index;
    int count;
  };
  std::vector<Item> items;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    auto it = count_of.find(m.entries[i].sample_id);
    if (it != count_of.end()) items.push_back({i, it->second});
  }
  if (items.empty()) return Manifest{m.schema_version, {}};

  // Decile strata over the observed counts, sampled proportionally.
  std::sort(items.begin(), items.end(), [&](const Item& a, const Item& b) {
    return a.count != b.count ? a.count < b.count
                              : m.entries[a.index].sample_id < m.entries[b.index].sample_id;
  });
  const std::size_t n = items.size();
  const std::size_t take = std::min<std::size_t>(subset_size, n);
  Rng rng(seed);
  std::vector<std::size_t> chosen;
  for (int d = 0; d < 10; ++d) {
    const std::size_t lo = n * d / 10, hi = n * (d + 1) / 10;
    if (lo >= hi) continue;
    std::vector<std::size_t> stratum;
    for (std::size_t i = lo; i < hi; ++i) stratum.push_back(items[i].index);
    std::size_t want = take * (hi - lo) / n;
    want = std::min(want, stratum.size());
    // Seeded partial Fisher-Yates.
    for (std::size_t i = 0; i < want; ++i) {
      const std::size_t j = i + rng.next_below(stratum.size() - i);
      std::swap(stratum[i], stratum[j]);
      chosen.push_back(stratum[i]);
    }
  }
  // Rounding may leave a shortfall; fill from unchosen items in count order.
  std::set<std::size_t> picked(chosen.begin(), chosen.end());
  for (const auto& item : items) {
    if (chosen.size() >= take) break;
    if (picked.insert(item.index).second) chosen.push_back(item.index);
  }
  std::sort(chosen.begin(), chosen.end());

  Manifest out;
  out.schema_version = m.schema_version;
  for (std::size_t idx : chosen) out.entries.push_back(m.entries[idx]);
  return out;
}

// ---------------------------------------------------------------------------
// Report serialization
// ---------------------------------------------------------------------------

namespace {

json summary_to_json(const ReportSummary& s) {
  json j;
  j["n_samples"] = s.n_samples;
  j["mean_aki"] = s.mean_aki;
  j["k_gain"] = s.k_gain;
  j["k_gain_percent"] = percent_string(s.k_gain);
  j["improved"] = s.improved;
  j["tau"] = s.tau;
  if (s.mean_clip_i) j["mean_clip_i"] = *s.mean_clip_i;
  if (s.mean_dino) j["mean_dino"] = *s.mean_dino;
  return j;
}

ReportSummary summary_from_json(const json& j) {
  ReportSummary s;
  s.n_samples = j.at("n_samples").get<int>();
  s.mean_aki = j.at("mean_aki").get<double>();
  s.k_gain = j.at("k_gain").get<double>();
  s.improved = j.at("improved").get<int>();
  s.tau = j.at("tau").get<int>();
  if (j.contains("mean_clip_i")) s.mean_clip_i = j["mean_clip_i"].get<double>();
  if (j.contains("mean_dino")) s.mean_dino = j["mean_dino"].get<double>();
  return s;
}

}  // namespace

std::string eval_report_to_json(const EvalReport& report) {
  json j;
  j["schema_version"] = report.schema_version;
  j["tool_version"] = report.tool_version;
  j["generated_at"] = report.generated_at;

  json cfg;
  cfg["tau"] = report.config.tau;
  cfg["seed"] = report.config.matcher.ransac.seed;
  cfg["ratio"] = report.config.matcher.ratio;
  cfg["model"] = report.config.matcher.ransac.kind == ModelKind::kAffine ? "affine"
                                                                         : "homography";
  cfg["inlier_px"] = report.config.matcher.ransac.inlier_px;
  cfg["max_iters"] = report.config.matcher.ransac.max_iters;
  cfg["confidence"] = report.config.matcher.ransac.confidence;
  cfg["detector"] = {{"threshold", report.config.matcher.detector.threshold},
                     {"levels", report.config.matcher.detector.levels},
                     {"scale_factor", report.config.matcher.detector.scale_factor},
                     {"max_per_level", report.config.matcher.detector.max_per_level},
                     {"max_total", report.config.matcher.detector.max_total}};
  cfg["max_dimension"] = report.config.matcher.max_dimension;
  cfg["on_crop"] = report.config.on_crop;
  j["config"] = std::move(cfg);

  json samples = json::array();
  for (const auto& s : report.samples) {
    json js;
    js["sample_id"] = s.sample_id;
    js["n_base"] = s.n_base;
    js["n_refined"] = s.n_refined;
    js["aki"] = s.aki;
    js["n_base_raw"] = s.n_base_raw;
    js["n_refined_raw"] = s.n_refined_raw;
    if (!s.method_tag.empty()) js["method_tag"] = s.method_tag;
    if (!s.backbone_tag.empty()) js["backbone_tag"] = s.backbone_tag;
    if (s.clip_i) js["clip_i"] = *s.clip_i;
    if (s.dino) js["dino"] = *s.dino;
    samples.push_back(std::move(js));
  }
  j["samples"] = std::move(samples);

  json skips = json::array();
  for (const auto& s : report.skips)
    skips.push_back({{"sample_id", s.sample_id}, {"reason", s.reason}});
  j["skips"] = std::move(skips);

  json groups = json::array();
  for (const auto& g : report.groups) {
    json jg;
    jg["method_tag"] = g.method_tag;
    jg["backbone_tag"] = g.backbone_tag;
    jg["summary"] = summary_to_json(g.summary);
    groups.push_back(std::move(jg));
  }
  j["groups"] = std::move(groups);
  if (report.overall) j["overall"] = summary_to_json(*report.overall);
  return j.dump(2) + "\n";
}

EvalReport eval_report_from_json(const std::string& text) {
  const json j = json::parse(text);
  EvalReport r;
  r.schema_version = j.at("schema_version").get<int>();
  r.tool_version = j.at("tool_version").get<std::string>();
  r.generated_at = j.at("generated_at").get<std::string>();
  r.config.tau = j.at("config").at("tau").get<int>();
  for (const auto& s : j.at("samples")) {
    SampleResult sr;
    sr.sample_id = s.at("sample_id").get<std::string>();
    sr.n_base = s.at("n_base").get<int>();
    sr.n_refined = s.at("n_refined").get<int>();
    sr.aki = s.at("aki").get<int>();
    sr.n_base_raw = s.value("n_base_raw", 0);
    sr.n_refined_raw = s.value("n_refined_raw", 0);
    sr.method_tag = s.value("method_tag", "");
    sr.backbone_tag = s.value("backbone_tag", "");
    if (s.contains("clip_i")) sr.clip_i = s["clip_i"].get<double>();
    if (s.contains("dino")) sr.dino = s["dino"].get<double>();
    r.samples.push_back(std::move(sr));
  }
  for (const auto& s : j.at("skips"))
    r.skips.push_back({s.at("sample_id").get<std::string>(),
                       s.at("reason").get<std::string>()});
  for (const auto& g : j.at("groups")) {
    GroupSummary gs;
    gs.method_tag = g.at("method_tag").get<std::string>();
    gs.backbone_tag = g.at("backbone_tag").get<std::string>();
    gs.summary = summary_from_json(g.at("summary"));
    r.groups.push_back(std::move(gs));
  }
  if (j.contains("overall")) r.overall = summary_from_json(j.at("overall"));
  return r;
}

}  // namespace sfkit
