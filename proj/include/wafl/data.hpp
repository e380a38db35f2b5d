#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "wafl/core_math.hpp"
#include "wafl/error.hpp"

namespace wafl {

/// z = (x, y). For classification y holds the class index as a double.
struct LabeledExample {
  Vec x;
  double y = 0.0;

  int label() const { return static_cast<int>(y); }
  friend bool operator==(const LabeledExample& a, const LabeledExample& b) {
    return a.y == b.y && a.x.size() == b.x.size() && a.x == b.x;
  }
};

using Examples = std::vector<LabeledExample>;

struct ClientDataset {
  int client_id = 0;
  Examples train;
  Examples test;

  friend bool operator==(const ClientDataset&, const ClientDataset&) = default;
};

struct FederationData {
  std::vector<ClientDataset> clients;
  ProbabilityVector weights;
  int feature_dim = 0;
  int num_classes = 0;

  std::size_t num_clients() const { return clients.size(); }
  std::size_t total_train() const;
  /// Throws InvalidArgument when the invariants do not hold.
  void validate() const;

  friend bool operator==(const FederationData&, const FederationData&) = default;
};

/// Weighted point cloud; points are the rows of `points`.
struct EmpiricalDistribution {
  Mat points;
  ProbabilityVector masses;

  std::size_t size() const { return static_cast<std::size_t>(points.rows()); }
  int dim() const { return static_cast<int>(points.cols()); }
};

// ---------------------------------------------------------------------------
// IDX files

/// Raised by the IDX reader. `kind` tells the failure apart, `path` names the file.
class IdxError : public Error {
 public:
  enum class Kind { Io, BadMagic, Truncated, CountMismatch };

  IdxError(Kind kind, std::filesystem::path path, const std::string& detail);

  Kind kind() const { return kind_; }
  const std::filesystem::path& path() const { return path_; }

 private:
  Kind kind_;
  std::filesystem::path path_;
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

struct IdxImages {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols, row-major

  std::size_t count() const { return rows * cols == 0 ? 0 : pixels.size() / (rows * cols); }
};

IdxImages read_idx_images(const std::filesystem::path& path);
std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path);
void write_idx_images(const std::filesystem::path& path, const IdxImages& images);
void write_idx_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels);

/// Reads an IDX image/label pair; pixels are scaled to [0, 1].
/// `limit` keeps only the first `limit` examples when set.
Examples load_idx(const std::filesystem::path& images_path,
                  const std::filesystem::path& labels_path,
                  std::optional<std::size_t> limit = std::nullopt);

/// CSV with header "y,x0,x1,..." and one example per row.
Examples load_csv(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Synthetic data and partitioning

/// Gaussian blobs with identity covariance. Class c is centered at
/// class_separation * u_c where u_c are fixed unit directions; labels cycle
/// through the classes so class sizes differ by at most one.
Examples gen_synthetic_mixture(int num_classes, int feature_dim, std::size_t n,
                               double class_separation, std::uint64_t seed);

/// Adds `offset` to every feature vector (domain shift for adaptation scenarios).
Examples translate_features(Examples examples, const Vec& offset);

int infer_num_classes(const Examples& examples);

/// Label-skewed split: every client holds exactly `labels_per_client` classes,
/// client sizes follow a log-normal law with standard deviation
/// `size_dispersion` in log space, and each shard is split 75/25 train/test.
FederationData partition_noniid(const Examples& examples, int m, int labels_per_client,
                                double size_dispersion, std::uint64_t seed);

/// Wraps whole datasets as clients (one per dataset) without splitting.
FederationData federation_from_datasets(std::vector<Examples> train_sets, int num_classes);

/// lambda_i = n_i / n over train sizes.
ProbabilityVector default_weights(const FederationData& federation);

/// Feature-only embedding, or the joint (x, sqrt(kappa) * y) embedding whose
/// squared Euclidean distances equal ||x - x'||^2 + kappa |y - y'|^2.
struct LabelEmbedding {
  std::optional<double> kappa;  // nullopt: features only

  static LabelEmbedding features_only() { return {}; }
  static LabelEmbedding joint(double kappa) { return {kappa}; }
};

EmpiricalDistribution to_empirical(const Examples& dataset,
                                   LabelEmbedding embedding = LabelEmbedding::features_only());

/// All test (or train) examples of all clients in client order.
Examples pooled_test(const FederationData& federation);
Examples pooled_train(const FederationData& federation);

}  // namespace wafl
