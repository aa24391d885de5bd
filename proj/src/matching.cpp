#include "sfkit/matching.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sfkit/kernels.hpp"
#include "sfkit/rng.hpp"

namespace sfkit {

using json = nlohmann::ordered_json;

std::pair<double, double> GeomModel::apply(double x, double y) const {
  const double X = h[0] * x + h[1] * y + h[2];
  const double Y = h[3] * x + h[4] * y + h[5];
  const double W = h[6] * x + h[7] * y + h[8];
  return {X / W, Y / W};
}

std::optional<GeomModel> GeomModel::inverse() const {
  const auto& m = h;
  std::array<double, 9> adj = {
      m[4] * m[8] - m[5] * m[7], m[2] * m[7] - m[1] * m[8], m[1] * m[5] - m[2] * m[4],
      m[5] * m[6] - m[3] * m[8], m[0] * m[8] - m[2] * m[6], m[2] * m[3] - m[0] * m[5],
      m[3] * m[7] - m[4] * m[6], m[1] * m[6] - m[0] * m[7], m[0] * m[4] - m[1] * m[3]};
  const double det = m[0] * adj[0] + m[1] * adj[3] + m[2] * adj[6];
  if (std::fabs(det) < 1e-12) return std::nullopt;
  GeomModel inv;
  inv.kind = kind;
  for (int i = 0; i < 9; ++i) inv.h[i] = adj[i] / det;
  if (std::fabs(inv.h[8]) > 1e-12) {
    const double s = inv.h[8];
    for (auto& v : inv.h) v /= s;
  }
  return inv;
}

int MatchSet::inlier_count() const {
  int n = 0;
  for (auto m : inlier_mask) n += m ? 1 : 0;
  return n;
}

// ---------------------------------------------------------------------------
// Candidate matching
// ---------------------------------------------------------------------------

std::vector<Match> match_descriptors(const KeypointSet& a, const KeypointSet& b,
                                     float ratio) {
  if (ratio <= 0.0f || ratio > 1.0f)
    throw std::invalid_argument("match_descriptors: ratio must be in (0,1]");
  std::vector<Match> out;
  if (a.descriptors.empty() || b.descriptors.empty()) return out;

  const std::size_t na = a.descriptors.size(), nb = b.descriptors.size();
  std::vector<int> best_ab(na), dist_ab(na), second_ab(na);
  std::vector<int> best_ba(nb), dist_ba(nb), second_ba(nb);
  kernels::hamming_best2(a.descriptors.front().bits.data(), na,
                         b.descriptors.front().bits.data(), nb,
                         best_ab.data(), dist_ab.data(), second_ab.data());
  kernels::hamming_best2(b.descriptors.front().bits.data(), nb,
                         a.descriptors.front().bits.data(), na,
                         best_ba.data(), dist_ba.data(), second_ba.data());

  for (std::size_t i = 0; i < na; ++i) {
    const int j = best_ab[i];
    if (j < 0 || best_ba[j] != static_cast<int>(i)) continue;
    // Lowe-style ratio test in multiplicative form; a lone candidate
    // (second == 257 sentinel) always passes.
    if (second_ab[i] <= 256 &&
        !(static_cast<double>(dist_ab[i]) < ratio * static_cast<double>(second_ab[i])))
      continue;
    out.push_back({static_cast<int>(i), j, dist_ab[i]});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model estimation (small dense solvers, no external dependency)
// ---------------------------------------------------------------------------

namespace {

// Gaussian elimination with partial pivoting; a is n x n row-major, b length n.
bool solve_dense(std::vector<double>& a, std::vector<double>& b, int n) {
  for (int col = 0; col < n; ++col) {
    int pivot = col;
    for (int r = col + 1; r < n; ++r)
      if (std::fabs(a[r * n + col]) > std::fabs(a[pivot * n + col])) pivot = r;
    if (std::fabs(a[pivot * n + col]) < 1e-14) return false;
    if (pivot != col) {
      for (int c = 0; c < n; ++c) std::swap(a[col * n + c], a[pivot * n + c]);
      std::swap(b[col], b[pivot]);
    }
    const double d = a[col * n + col];
    for (int r = col + 1; r < n; ++r) {
      const double f = a[r * n + col] / d;
      if (f == 0.0) continue;
      for (int c = col; c < n; ++c) a[r * n + c] -= f * a[col * n + c];
      b[r] -= f * b[col];
    }
  }
  for (int r = n - 1; r >= 0; --r) {
    double acc = b[r];
    for (int c = r + 1; c < n; ++c) acc -= a[r * n + c] * b[c];
    b[r] = acc / a[r * n + r];
  }
  return true;
}

// Eigenvector of the smallest eigenvalue of a symmetric n x n matrix via
// cyclic Jacobi rotations. Plenty for the 9x9 DLT normal matrix.
std::vector<double> min_eigenvector(std::vector<double> a, int n) {
  std::vector<double> v(n * n, 0.0);
  for (int i = 0; i < n; ++i) v[i * n + i] = 1.0;
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < n; ++p)
      for (int q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    if (off < 1e-24) break;
    for (int p = 0; p < n; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::fabs(apq) < 1e-30) continue;
        const double app = a[p * n + p], aqq = a[q * n + q];
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = v[k * n + p], vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }
  int min_i = 0;
  for (int i = 1; i < n; ++i)
    if (a[i * n + i] < a[min_i * n + min_i]) min_i = i;
  std::vector<double> out(n);
  for (int k = 0; k < n; ++k) out[k] = v[k * n + min_i];
  return out;
}

struct Normalization {
  double cx, cy, scale;
};

Normalization hartley_normalize(const std::vector<PointPair>& corr, bool side_a) {
  double cx = 0.0, cy = 0.0;
  for (const auto& p : corr) {
    cx += side_a ? p.xa : p.xb;
    cy += side_a ? p.ya : p.yb;
  }
  cx /= corr.size();
  cy /= corr.size();
  double mean_dist = 0.0;
  for (const auto& p : corr) {
    const double dx = (side_a ? p.xa : p.xb) - cx;
    const double dy = (side_a ? p.ya : p.yb) - cy;
    mean_dist += std::sqrt(dx * dx + dy * dy);
  }
  mean_dist /= corr.size();
  const double scale = mean_dist > 1e-12 ? std::sqrt(2.0) / mean_dist : 1.0;
  return {cx, cy, scale};
}

GeomModel estimate_affine(const std::vector<PointPair>& corr) {
  // Two independent 3-unknown least-squares problems sharing the same normal
  // matrix [xx xy x; xy yy y; x y n].
  std::vector<double> ata(9, 0.0), bx(3, 0.0), by(3, 0.0);
  for (const auto& p : corr) {
    const double row[3] = {p.xa, p.ya, 1.0};
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) ata[i * 3 + j] += row[i] * row[j];
      bx[i] += row[i] * p.xb;
      by[i] += row[i] * p.yb;
    }
  }
  std::vector<double> a1 = ata, a2 = ata;
  if (!solve_dense(a1, bx, 3) || !solve_dense(a2, by, 3))
    throw EstimationError("estimate_model: degenerate affine configuration");
  GeomModel m;
  m.kind = ModelKind::kAffine;
  m.h = {bx[0], bx[1], bx[2], by[0], by[1], by[2], 0.0, 0.0, 1.0};
  for (double v : m.h)
    if (!std::isfinite(v)) throw EstimationError("estimate_model: non-finite affine");
  return m;
}

GeomModel estimate_homography(const std::vector<PointPair>& corr) {
  const Normalization na = hartley_normalize(corr, true);
  const Normalization nb = hartley_normalize(corr, false);

  // Normal matrix of the 2n x 9 DLT system.
  std::vector<double> ata(81, 0.0);
  for (const auto& p : corr) {
    const double x = (p.xa - na.cx) * na.scale, y = (p.ya - na.cy) * na.scale;
    const double X = (p.xb - nb.cx) * nb.scale, Y = (p.yb - nb.cy) * nb.scale;
    const double r1[9] = {-x, -y, -1, 0, 0, 0, x * X, y * X, X};
    const double r2[9] = {0, 0, 0, -x, -y, -1, x * Y, y * Y, Y};
    for (int i = 0; i < 9; ++i)
      for (int j = i; j < 9; ++j)
        ata[i * 9 + j] += r1[i] * r1[j] + r2[i] * r2[j];
  }
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < i; ++j) ata[i * 9 + j] = ata[j * 9 + i];

  const std::vector<double> hn = min_eigenvector(std::move(ata), 9);

  // Denormalize: H = Tb^-1 * Hn * Ta.
  const double ta[9] = {na.scale, 0, -na.scale * na.cx, 0, na.scale, -na.scale * na.cy, 0, 0, 1};
  const double tbinv[9] = {1.0 / nb.scale, 0, nb.cx, 0, 1.0 / nb.scale, nb.cy, 0, 0, 1};
  double tmp[9], out[9];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      tmp[i * 3 + j] = 0.0;
      for (int k = 0; k < 3; ++k) tmp[i * 3 + j] += hn[i * 3 + k] * ta[k * 3 + j];
    }
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      out[i * 3 + j] = 0.0;
      for (int k = 0; k < 3; ++k) out[i * 3 + j] += tbinv[i * 3 + k] * tmp[k * 3 + j];
    }

  GeomModel m;
  m.kind = ModelKind::kHomography;
  std::copy(out, out + 9, m.h.begin());
  if (std::fabs(m.h[8]) > 1e-12) {
    const double s = m.h[8];
    for (auto& v : m.h) v /= s;
  }
  const double det = m.h[0] * (m.h[4] * m.h[8] - m.h[5] * m.h[7]) -
                     m.h[1] * (m.h[3] * m.h[8] - m.h[5] * m.h[6]) +
                     m.h[2] * (m.h[3] * m.h[7] - m.h[4] * m.h[6]);
  if (!std::isfinite(det) || std::fabs(det) < 1e-12)
    throw EstimationError("estimate_model: singular homography");
  for (double v : m.h)
    if (!std::isfinite(v)) throw EstimationError("estimate_model: non-finite homography");
  return m;
}

bool three_collinear(const std::vector<PointPair>& pts, bool side_a) {
  const std::size_t n = pts.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      for (std::size_t k = j + 1; k < n; ++k) {
        const double x1 = side_a ? pts[i].xa : pts[i].xb, y1 = side_a ? pts[i].ya : pts[i].yb;
        const double x2 = side_a ? pts[j].xa : pts[j].xb, y2 = side_a ? pts[j].ya : pts[j].yb;
        const double x3 = side_a ? pts[k].xa : pts[k].xb, y3 = side_a ? pts[k].ya : pts[k].yb;
        const double area2 = std::fabs((x2 - x1) * (y3 - y1) - (x3 - x1) * (y2 - y1));
        double span = std::max({std::fabs(x2 - x1), std::fabs(y2 - y1),
                                std::fabs(x3 - x1), std::fabs(y3 - y1), 1.0});
        if (area2 < 1e-9 * span * span) return true;
      }
  return false;
}

double symmetric_transfer_error(const GeomModel& m, const GeomModel& inv,
                                const PointPair& p) {
  const auto [fx, fy] = m.apply(p.xa, p.ya);
  const auto [bx, by] = inv.apply(p.xb, p.yb);
  const double df = std::hypot(fx - p.xb, fy - p.yb);
  const double db = std::hypot(bx - p.xa, by - p.ya);
  return std::max(df, db);
}

}  // namespace

GeomModel estimate_model(const std::vector<PointPair>& corr, ModelKind kind) {
  const std::size_t min_n = kind == ModelKind::kAffine ? 3 : 4;
  if (corr.size() < min_n)
    throw EstimationError("estimate_model: insufficient correspondences");
  if (corr.size() == min_n && (three_collinear(corr, true) || three_collinear(corr, false)))
    throw EstimationError("estimate_model: collinear minimal sample");
  return kind == ModelKind::kAffine ? estimate_affine(corr) : estimate_homography(corr);
}

// ---------------------------------------------------------------------------
// RANSAC
// ---------------------------------------------------------------------------

namespace {

MatchSet ransac_core(const std::vector<Match>& matches,
                     const std::vector<PointPair>& pairs, const RansacConfig& cfg) {
  MatchSet result;
  result.matches = matches;
  result.inlier_mask.assign(matches.size(), 0);
  result.rng_seed = cfg.seed;

  const std::size_t sample_size = cfg.kind == ModelKind::kAffine ? 3 : 4;
  const std::size_t n = pairs.size();
  if (n < sample_size) return result;

  Rng rng(cfg.seed);
  std::vector<std::uint8_t> best_mask(n, 0);
  int best_inliers = 0;
  double adaptive_bound = static_cast<double>(cfg.max_iters);

  for (int iter = 0; iter < cfg.max_iters && iter < adaptive_bound; ++iter) {
    // Draw a minimal sample without replacement.
    std::array<std::size_t, 4> idx{};
    for (std::size_t s = 0; s < sample_size; ++s) {
      bool fresh = true;
      do {
        idx[s] = rng.next_below(n);
        fresh = true;
        for (std::size_t t = 0; t < s; ++t)
          if (idx[t] == idx[s]) fresh = false;
      } while (!fresh);
    }
    std::vector<PointPair> sample;
    for (std::size_t s = 0; s < sample_size; ++s) sample.push_back(pairs[idx[s]]);

    GeomModel model;
    try {
      model = estimate_model(sample, cfg.kind);
    } catch (const EstimationError&) {
      continue;  // degenerate sample, try again
    }
    const auto inv = model.inverse();
    if (!inv) continue;

    std::vector<std::uint8_t> mask(n, 0);
    int inliers = 0;
    const std::int64_t nn = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(static) reduction(+ : inliers)
    for (std::int64_t i = 0; i < nn; ++i) {
      if (symmetric_transfer_error(model, *inv, pairs[i]) <= cfg.inlier_px) {
        mask[i] = 1;
        ++inliers;
      }
    }
    if (inliers > best_inliers) {
      best_inliers = inliers;
      best_mask = std::move(mask);
      // Adaptive stopping: log(1-confidence) / log(1 - w^s).
      const double w = static_cast<double>(inliers) / static_cast<double>(n);
      const double denom = std::log(1.0 - std::min(0.999999, std::pow(w, sample_size)));
      if (denom < 0.0)
        adaptive_bound = std::log(std::max(1e-12, 1.0 - cfg.confidence)) / denom;
    }
  }

  if (best_inliers < static_cast<int>(sample_size)) return result;

  // Refit on the consensus set, then recompute the mask with the refit model.
  std::vector<PointPair> consensus;
  for (std::size_t i = 0; i < n; ++i)
    if (best_mask[i]) consensus.push_back(pairs[i]);
  GeomModel final_model;
  try {
    final_model = estimate_model(consensus, cfg.kind);
  } catch (const EstimationError&) {
    result.inlier_mask = best_mask;  // refit failed, keep the hypothesis mask
    return result;
  }
  const auto inv = final_model.inverse();
  if (!inv) {
    result.inlier_mask = best_mask;
    return result;
  }
  for (std::size_t i = 0; i < n; ++i)
    result.inlier_mask[i] =
        symmetric_transfer_error(final_model, *inv, pairs[i]) <= cfg.inlier_px ? 1 : 0;
  result.model = final_model;
  return result;
}

}  // namespace

MatchSet ransac_verify(const std::vector<Match>& matches, const KeypointSet& a,
                       const KeypointSet& b, const RansacConfig& cfg) {
  std::vector<PointPair> pairs;
  pairs.reserve(matches.size());
  for (const auto& m : matches) {
    const auto& ka = a.keypoints.at(m.idx_a);
    const auto& kb = b.keypoints.at(m.idx_b);
    pairs.push_back({ka.x, ka.y, kb.x, kb.y});
  }
  return ransac_core(matches, pairs, cfg);
}

MatchSet ransac_verify_points(const std::vector<PointPair>& pairs, const RansacConfig& cfg) {
  std::vector<Match> synthetic(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i)
    synthetic[i] = {static_cast<int>(i), static_cast<int>(i), 0};
  return ransac_core(synthetic, pairs, cfg);
}

// ---------------------------------------------------------------------------
// Full pipeline and import/export
// ---------------------------------------------------------------------------

MatchCountResult match_count(const Image& img_ref, const Image& img_other,
                             const MatcherConfig& cfg) {
  auto maybe_shrink = [&](const Image& img) {
    if (cfg.max_dimension <= 0) return img;
    const int longest = std::max(img.width, img.height);
    if (longest <= cfg.max_dimension) return img;
    const double s = static_cast<double>(cfg.max_dimension) / longest;
    return resize(img, std::max(1, static_cast<int>(std::lround(img.width * s))),
                  std::max(1, static_cast<int>(std::lround(img.height * s))));
  };

  MatchCountResult r;
  r.kps_ref = detect_and_describe(maybe_shrink(img_ref), cfg.detector, "ref");
  r.kps_other = detect_and_describe(maybe_shrink(img_other), cfg.detector, "other");
  std::vector<Match> candidates = match_descriptors(r.kps_ref, r.kps_other, cfg.ratio);
  r.raw_count = static_cast<int>(candidates.size());
  r.matchset = ransac_verify(candidates, r.kps_ref, r.kps_other, cfg.ransac);
  r.count = r.matchset.inlier_count();
  return r;
}

namespace {

json model_to_json(const GeomModel& m) {
  json j;
  j["kind"] = m.kind == ModelKind::kAffine ? "affine" : "homography";
  json coeffs = json::array();
  const int n = m.kind == ModelKind::kAffine ? 6 : 9;
  for (int i = 0; i < n; ++i) coeffs.push_back(m.h[i]);
  j["coefficients"] = std::move(coeffs);
  return j;
}

}  // namespace

ExternalMatches load_external_matches_file(const std::string& path,
                                           const std::optional<RansacConfig>& verify) {
  std::ifstream in(path);
  if (!in) throw MatchImportError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw MatchImportError("invalid JSON in " + path + ": " + e.what());
  }
  if (!j.contains("pairs") || !j["pairs"].is_array())
    throw MatchImportError(path + ": missing 'pairs' array");

  ExternalMatches out;
  if (j.contains("image_a") && j["image_a"].is_string())
    out.image_a = j["image_a"].get<std::string>();
  if (j.contains("image_b") && j["image_b"].is_string())
    out.image_b = j["image_b"].get<std::string>();

  std::size_t index = 0;
  for (const auto& p : j["pairs"]) {
    for (const char* key : {"xa", "ya", "xb", "yb"})
      if (!p.contains(key) || !p[key].is_number())
        throw MatchImportError(path + ": pair " + std::to_string(index) +
                               " missing numeric '" + key + "'");
    PointPair pp{p["xa"].get<double>(), p["ya"].get<double>(),
                 p["xb"].get<double>(), p["yb"].get<double>()};
    if (!std::isfinite(pp.xa) || !std::isfinite(pp.ya) || !std::isfinite(pp.xb) ||
        !std::isfinite(pp.yb))
      throw MatchImportError(path + ": non-finite coordinate at pair " +
                             std::to_string(index));
    out.pairs.push_back(pp);
    ++index;
  }

  if (verify) {
    out.matchset = ransac_verify_points(out.pairs, *verify);
  } else {
    for (std::size_t i = 0; i < out.pairs.size(); ++i)
      out.matchset.matches.push_back({static_cast<int>(i), static_cast<int>(i), 0});
    out.matchset.inlier_mask.assign(out.pairs.size(), 1);
  }
  return out;
}

MatchSet load_external_matches(const std::string& path,
                               const std::optional<RansacConfig>& verify) {
  return load_external_matches_file(path, verify).matchset;
}

std::string matchset_to_json(const MatchSet& set, const std::vector<PointPair>& pairs,
                             const std::string& image_a, const std::string& image_b) {
  json j;
  j["image_a"] = image_a;
  j["image_b"] = image_b;
  json arr = json::array();
  for (std::size_t i = 0; i < set.matches.size(); ++i) {
    const auto& p = pairs[i];
    arr.push_back({{"xa", p.xa},
                   {"ya", p.ya},
                   {"xb", p.xb},
                   {"yb", p.yb},
                   {"score", 1.0 - set.matches[i].distance / 256.0}});
  }
  j["pairs"] = std::move(arr);
  json mask = json::array();
  for (auto v : set.inlier_mask) mask.push_back(static_cast<bool>(v));
  j["inlier_mask"] = std::move(mask);
  j["inlier_count"] = set.inlier_count();
  if (set.model) j["model"] = model_to_json(*set.model);
  j["rng_seed"] = set.rng_seed;
  return j.dump(2) + "\n";
}

std::string matchset_to_json(const MatchSet& set, const KeypointSet& a,
                             const KeypointSet& b) {
  std::vector<PointPair> pairs;
  pairs.reserve(set.matches.size());
  for (const auto& m : set.matches) {
    const auto& ka = a.keypoints.at(m.idx_a);
    const auto& kb = b.keypoints.at(m.idx_b);
    pairs.push_back({ka.x, ka.y, kb.x, kb.y});
  }
  return matchset_to_json(set, pairs, a.image_id, b.image_id);
}

}  // namespace sfkit
