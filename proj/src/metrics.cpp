#include "sfkit/metrics.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace sfkit {

using json = nlohmann::ordered_json;

int compute_aki(int n_refined, int n_base) {
  if (n_refined < 0 || n_base < 0)
    throw std::invalid_argument("compute_aki: counts must be >= 0");
  return n_refined - n_base;
}

double compute_k_gain(const std::vector<int>& akis, int tau) {
  if (akis.empty()) throw std::invalid_argument("compute_k_gain: no samples");
  long improved = 0;
  for (int a : akis)
    if (a > tau) ++improved;  // strict: ties count as non-improvements
  return static_cast<double>(improved) / static_cast<double>(akis.size());
}

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dim() != b.dim() || a.dim() == 0)
    throw std::invalid_argument("cosine_similarity: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (int i = 0; i < a.dim(); ++i) {
    dot += static_cast<double>(a.values[i]) * b.values[i];
    na += static_cast<double>(a.values[i]) * a.values[i];
    nb += static_cast<double>(b.values[i]) * b.values[i];
  }
  if (na == 0.0 || nb == 0.0)
    throw std::invalid_argument("cosine_similarity: zero vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

ReportSummary aggregate(const std::vector<SampleResult>& results, int tau) {
  if (results.empty()) throw std::invalid_argument("aggregate: no samples");
  ReportSummary s;
  s.n_samples = static_cast<int>(results.size());
  s.tau = tau;

  long long aki_sum = 0;  // integer sum before division, exact
  std::vector<int> akis;
  akis.reserve(results.size());
  double clip_sum = 0.0, dino_sum = 0.0;
  int clip_n = 0, dino_n = 0;
  for (const auto& r : results) {
    aki_sum += r.aki;
    akis.push_back(r.aki);
    if (r.clip_i) {
      clip_sum += *r.clip_i;
      ++clip_n;
    }
    if (r.dino) {
      dino_sum += *r.dino;
      ++dino_n;
    }
  }
  s.mean_aki = static_cast<double>(aki_sum) / s.n_samples;
  s.k_gain = compute_k_gain(akis, tau);
  for (int a : akis)
    if (a > tau) ++s.improved;
  if (clip_n > 0) s.mean_clip_i = clip_sum / clip_n;
  if (dino_n > 0) s.mean_dino = dino_sum / dino_n;
  return s;
}

std::string percent_string(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", fraction * 100.0);
  return buf;
}

// ---------------------------------------------------------------------------
// Embedding file I/O
// ---------------------------------------------------------------------------

namespace {
constexpr char kEmbMagic[4] = {'E', 'M', 'B', 'V'};
}

EmbeddingVector load_embedding(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open embedding file " + path);
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() == 4 && std::memcmp(magic, kEmbMagic, 4) == 0) {
    std::uint32_t dim = 0;
    unsigned char dim_bytes[4];
    in.read(reinterpret_cast<char*>(dim_bytes), 4);
    if (in.gcount() != 4) throw std::runtime_error(path + ": truncated header");
    dim = dim_bytes[0] | (dim_bytes[1] << 8) | (dim_bytes[2] << 16)
          | (static_cast<std::uint32_t>(dim_bytes[3]) << 24);
    if (dim == 0 || dim > (1u << 24)) throw std::runtime_error(path + ": bad dimension");
    EmbeddingVector v;
    v.values.resize(dim);
    in.read(reinterpret_cast<char*>(v.values.data()),
            static_cast<std::streamsize>(dim * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(dim * sizeof(float)))
      throw std::runtime_error(path + ": truncated values");
    for (float f : v.values)
      if (!std::isfinite(f)) throw std::runtime_error(path + ": non-finite value");
    return v;
  }

  // Fall back to the JSON form.
  in.clear();
  in.seekg(0);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error(path + ": neither EMBV binary nor JSON: " + e.what());
  }
  EmbeddingVector v;
  if (j.contains("image_id")) v.image_id = j["image_id"].get<std::string>();
  const auto& vals = j.at("values");
  v.values.reserve(vals.size());
  for (const auto& x : vals) v.values.push_back(x.get<float>());
  if (j.contains("dim") && j["dim"].get<int>() != v.dim())
    throw std::runtime_error(path + ": dim field does not match values length");
  if (v.values.empty()) throw std::runtime_error(path + ": empty embedding");
  for (float f : v.values)
    if (!std::isfinite(f)) throw std::runtime_error(path + ": non-finite value");
  return v;
}

void save_embedding_json(const EmbeddingVector& v, const std::string& path) {
  json j;
  j["image_id"] = v.image_id;
  j["dim"] = v.dim();
  j["values"] = v.values;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

void save_embedding_binary(const EmbeddingVector& v, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(kEmbMagic, 4);
  const std::uint32_t dim = static_cast<std::uint32_t>(v.dim());
  const unsigned char dim_bytes[4] = {
      static_cast<unsigned char>(dim & 0xff),
      static_cast<unsigned char>((dim >> 8) & 0xff),
      static_cast<unsigned char>((dim >> 16) & 0xff),
      static_cast<unsigned char>((dim >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(dim_bytes), 4);
  out.write(reinterpret_cast<const char*>(v.values.data()),
            static_cast<std::streamsize>(v.values.size() * sizeof(float)));
}

}  // namespace sfkit
