#pragma once

#include <optional>
#include <string>
#include <vector>

namespace sfkit {

/// Per-sample keypoint deltas plus optional embedding similarities.
struct SampleResult {
  std::string sample_id;
  int n_base = 0;     // verified matches (reference, generated)
  int n_refined = 0;  // verified matches (reference, refined)
  int aki = 0;        // n_refined - n_base
  int n_base_raw = 0;
  int n_refined_raw = 0;
  std::string method_tag;
  std::string backbone_tag;
  std::optional<double> clip_i;
  std::optional<double> dino;
};

struct ReportSummary {
  int n_samples = 0;
  double mean_aki = 0.0;
  double k_gain = 0.0;  // fraction in [0,1]
  int improved = 0;     // samples with aki > tau
  int tau = 0;
  std::optional<double> mean_clip_i;
  std::optional<double> mean_dino;
};

struct EmbeddingVector {
  std::string image_id;
  std::vector<float> values;

  int dim() const { return static_cast<int>(values.size()); }
};

int compute_aki(int n_refined, int n_base);

/// (1/N) * sum [aki > tau], strict inequality. Throws on an empty list.
double compute_k_gain(const std::vector<int>& akis, int tau);

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b);

ReportSummary aggregate(const std::vector<SampleResult>& results, int tau);

/// One-decimal percent rendering used in reports ("91.2").
std::string percent_string(double fraction);

// Embedding files: JSON {image_id, dim, values:[...]} or little-endian binary
// ("EMBV", u32 dim, dim float32 values). Format chosen by sniffing the magic.
EmbeddingVector load_embedding(const std::string& path);
void save_embedding_json(const EmbeddingVector& v, const std::string& path);
void save_embedding_binary(const EmbeddingVector& v, const std::string& path);

}  // namespace sfkit
