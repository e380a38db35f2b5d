#include "wafl/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace wafl {
namespace {

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>((v >> 24) & 0xff), static_cast<char>((v >> 16) & 0xff),
                         static_cast<char>((v >> 8) & 0xff), static_cast<char>(v & 0xff)};
  out.write(bytes, 4);
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError(IdxError::Kind::Io, path, "cannot open file");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string idx_kind_name(IdxError::Kind kind) {
  switch (kind) {
    case IdxError::Kind::Io: return "I/O error";
    case IdxError::Kind::BadMagic: return "bad IDX magic";
    case IdxError::Kind::Truncated: return "truncated IDX";
    case IdxError::Kind::CountMismatch: return "count mismatch";
  }
  return "IDX error";
}

}  // namespace

IdxError::IdxError(Kind kind, std::filesystem::path path, const std::string& detail)
    : Error(idx_kind_name(kind) + " in " + path.string() + ": " + detail),
      kind_(kind),
      path_(std::move(path)) {}

std::size_t FederationData::total_train() const {
  std::size_t n = 0;
  for (const auto& c : clients) n += c.train.size();
  return n;
}

void FederationData::validate() const {
  if (clients.empty()) throw InvalidArgument("federation has no clients");
  if (weights.size() != clients.size()) {
    throw InvalidArgument("federation weights length does not match the number of clients");
  }
  if (total_train() == 0) throw InvalidArgument("federation has no training examples");
  for (const auto& c : clients) {
    if (c.train.empty()) {
      throw InvalidArgument("client " + std::to_string(c.client_id) + " has an empty train set");
    }
    for (const auto* split : {&c.train, &c.test}) {
      for (const auto& z : *split) {
        if (z.x.size() != feature_dim || !z.x.allFinite()) {
          throw InvalidArgument("client " + std::to_string(c.client_id) +
                                " holds an example with wrong dimension or non-finite features");
        }
        if (num_classes > 1 && (z.label() < 0 || z.label() >= num_classes)) {
          throw InvalidArgument("client " + std::to_string(c.client_id) + " holds label " +
                                std::to_string(z.label()) + " outside the class range");
        }
      }
    }
  }
}

IdxImages read_idx_images(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  if (bytes.size() < 16) throw IdxError(IdxError::Kind::Truncated, path, "truncated IDX header");
  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic != kIdxImagesMagic) {
    throw IdxError(IdxError::Kind::BadMagic, path, "expected 0x00000803 for images");
  }
  IdxImages images;
  const std::size_t count = read_be32(bytes, 4);
  images.rows = read_be32(bytes, 8);
  images.cols = read_be32(bytes, 12);
  const std::size_t payload = count * images.rows * images.cols;
  if (bytes.size() - 16 < payload) {
    throw IdxError(IdxError::Kind::Truncated, path, "payload shorter than header declares");
  }
  images.pixels.assign(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(payload));
  return images;
}

std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  if (bytes.size() < 8) throw IdxError(IdxError::Kind::Truncated, path, "truncated IDX header");
  if (read_be32(bytes, 0) != kIdxLabelsMagic) {
    throw IdxError(IdxError::Kind::BadMagic, path, "expected 0x00000801 for labels");
  }
  const std::size_t count = read_be32(bytes, 4);
  if (bytes.size() - 8 < count) {
    throw IdxError(IdxError::Kind::Truncated, path, "payload shorter than header declares");
  }
  return {bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(count)};
}

void write_idx_images(const std::filesystem::path& path, const IdxImages& images) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IdxError(IdxError::Kind::Io, path, "cannot open file for writing");
  write_be32(out, kIdxImagesMagic);
  write_be32(out, static_cast<std::uint32_t>(images.count()));
  write_be32(out, images.rows);
  write_be32(out, images.cols);
  out.write(reinterpret_cast<const char*>(images.pixels.data()),
            static_cast<std::streamsize>(images.pixels.size()));
}

void write_idx_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IdxError(IdxError::Kind::Io, path, "cannot open file for writing");
  write_be32(out, kIdxLabelsMagic);
  write_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

Examples load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                  std::optional<std::size_t> limit) {
  const IdxImages images = read_idx_images(images_path);
  const auto labels = read_idx_labels(labels_path);
  if (images.count() != labels.size()) {
    throw IdxError(IdxError::Kind::CountMismatch, labels_path,
                   "count mismatch: " + std::to_string(images.count()) + " images vs " +
                       std::to_string(labels.size()) + " labels");
  }
  const std::size_t dim = std::size_t{images.rows} * images.cols;
  const std::size_t n = std::min(labels.size(), limit.value_or(labels.size()));
  Examples out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    LabeledExample z;
    z.x.resize(static_cast<Eigen::Index>(dim));
    for (std::size_t j = 0; j < dim; ++j) {
      z.x[static_cast<Eigen::Index>(j)] = images.pixels[i * dim + j] / 255.0;
    }
    z.y = labels[i];
    out.push_back(std::move(z));
  }
  return out;
}

Examples load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open CSV file " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("y", 0) != 0) {
    throw Error(path.string() + ":1: expected header row starting with \"y,x0,...\"");
  }
  const auto columns = static_cast<Eigen::Index>(std::count(line.begin(), line.end(), ','));
  Examples out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<double> values;
    std::stringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) {
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str()) {
        throw Error(path.string() + ":" + std::to_string(line_no) + ": not a number: '" + cell + "'");
      }
      values.push_back(v);
    }
    if (static_cast<Eigen::Index>(values.size()) != columns + 1) {
      throw Error(path.string() + ":" + std::to_string(line_no) + ": expected " +
                  std::to_string(columns + 1) + " columns");
    }
    LabeledExample z;
    z.y = values[0];
    z.x = Eigen::Map<const Vec>(values.data() + 1, columns);
    out.push_back(std::move(z));
  }
  return out;
}

Examples gen_synthetic_mixture(int num_classes, int feature_dim, std::size_t n, double class_separation,
                               std::uint64_t seed) {
  if (num_classes < 2) throw InvalidArgument("synthetic mixture needs at least 2 classes");
  if (feature_dim < 1) throw InvalidArgument("synthetic mixture needs feature_dim >= 1");
  if (n < static_cast<std::size_t>(num_classes)) {
    throw InvalidArgument("synthetic mixture needs n >= num_classes");
  }
  std::vector<Vec> centers;
  for (int c = 0; c < num_classes; ++c) {
    Vec u = Vec::Zero(feature_dim);
    if (feature_dim == 1) {
      u[0] = -1.0 + 2.0 * c / (num_classes - 1);
    } else {
      const double angle = 2.0 * std::numbers::pi * c / num_classes;
      u[0] = std::cos(angle);
      u[1] = std::sin(angle);
    }
    centers.push_back(class_separation * u);
  }
  auto rng = derive_stream(seed, "synthetic");
  Examples out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    LabeledExample z;
    const int c = static_cast<int>(i % static_cast<std::size_t>(num_classes));
    z.x = centers[static_cast<std::size_t>(c)];
    for (int j = 0; j < feature_dim; ++j) z.x[j] += rng.normal();
    z.y = c;
    out.push_back(std::move(z));
  }
  return out;
}

Examples translate_features(Examples examples, const Vec& offset) {
  for (auto& z : examples) {
    if (z.x.size() != offset.size()) throw InvalidArgument("translate_features: dimension mismatch");
    z.x += offset;
  }
  return examples;
}

int infer_num_classes(const Examples& examples) {
  int top = -1;
  for (const auto& z : examples) top = std::max(top, z.label());
  return top + 1;
}

FederationData partition_noniid(const Examples& examples, int m, int labels_per_client,
                                double size_dispersion, std::uint64_t seed) {
  if (examples.empty()) throw InvalidArgument("partition_noniid: no examples");
  if (m < 1) throw InvalidArgument("partition_noniid: need at least one client");
  const int num_classes = infer_num_classes(examples);
  if (labels_per_client < 1 || labels_per_client > num_classes) {
    throw InvalidArgument("partition_noniid: labels_per_client must be in [1, num_classes]");
  }
  if (size_dispersion < 0.0) throw InvalidArgument("partition_noniid: negative size dispersion");

  // Client i holds the consecutive labels i, i+1, ..., i+L-1 (mod C).
  std::vector<std::vector<int>> demanders(static_cast<std::size_t>(num_classes));
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < labels_per_client; ++j) {
      demanders[static_cast<std::size_t>((i + j) % num_classes)].push_back(i);
    }
  }

  auto size_rng = derive_stream(seed, "partition:sizes");
  std::vector<double> appetite(static_cast<std::size_t>(m));
  for (auto& a : appetite) a = std::exp(size_dispersion * size_rng.normal());

  std::vector<std::vector<std::size_t>> pools(static_cast<std::size_t>(num_classes));
  for (std::size_t k = 0; k < examples.size(); ++k) {
    pools[static_cast<std::size_t>(examples[k].label())].push_back(k);
  }

  std::vector<std::vector<std::size_t>> shards(static_cast<std::size_t>(m));
  for (int c = 0; c < num_classes; ++c) {
    const auto& who = demanders[static_cast<std::size_t>(c)];
    if (who.empty()) continue;
    auto pool = pools[static_cast<std::size_t>(c)];
    if (pool.size() < who.size()) {
      throw InvalidArgument("infeasible label assignment: label " + std::to_string(c) + " has " +
                            std::to_string(pool.size()) + " examples for " + std::to_string(who.size()) +
                            " clients");
    }
    auto pool_rng = derive_stream(seed, "partition:label:" + std::to_string(c));
    pool_rng.shuffle(pool);

    // Largest-remainder apportionment with a floor of one example per holder.
    double total_appetite = 0.0;
    for (int i : who) total_appetite += appetite[static_cast<std::size_t>(i)];
    const std::size_t spare = pool.size() - who.size();
    std::vector<std::size_t> counts(who.size(), 1);
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < who.size(); ++k) {
      const double exact = static_cast<double>(spare) * appetite[static_cast<std::size_t>(who[k])] / total_appetite;
      const auto whole = static_cast<std::size_t>(std::floor(exact));
      counts[k] += whole;
      assigned += whole;
      remainders.emplace_back(exact - static_cast<double>(whole), k);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; assigned < spare; ++r, ++assigned) ++counts[remainders[r % remainders.size()].second];

    std::size_t cursor = 0;
    for (std::size_t k = 0; k < who.size(); ++k) {
      auto& shard = shards[static_cast<std::size_t>(who[k])];
      shard.insert(shard.end(), pool.begin() + static_cast<std::ptrdiff_t>(cursor),
                   pool.begin() + static_cast<std::ptrdiff_t>(cursor + counts[k]));
      cursor += counts[k];
    }
  }

  FederationData fed;
  fed.feature_dim = static_cast<int>(examples.front().x.size());
  fed.num_classes = num_classes;
  for (int i = 0; i < m; ++i) {
    auto shard = shards[static_cast<std::size_t>(i)];
    auto split_rng = derive_stream(seed, "partition:client:" + std::to_string(i));
    split_rng.shuffle(shard);
    const std::size_t n_train =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.75 * static_cast<double>(shard.size()))));
    ClientDataset client;
    client.client_id = i;
    for (std::size_t k = 0; k < shard.size(); ++k) {
      (k < n_train ? client.train : client.test).push_back(examples[shard[k]]);
    }
    fed.clients.push_back(std::move(client));
  }
  fed.weights = default_weights(fed);
  fed.validate();
  return fed;
}

FederationData federation_from_datasets(std::vector<Examples> train_sets, int num_classes) {
  if (train_sets.empty()) throw InvalidArgument("federation_from_datasets: no datasets");
  FederationData fed;
  fed.num_classes = num_classes;
  fed.feature_dim = train_sets.front().empty() ? 0 : static_cast<int>(train_sets.front().front().x.size());
  for (std::size_t i = 0; i < train_sets.size(); ++i) {
    ClientDataset c;
    c.client_id = static_cast<int>(i);
    c.train = std::move(train_sets[i]);
    fed.clients.push_back(std::move(c));
  }
  fed.weights = default_weights(fed);
  fed.validate();
  return fed;
}

ProbabilityVector default_weights(const FederationData& federation) {
  Vec sizes(static_cast<Eigen::Index>(federation.clients.size()));
  for (std::size_t i = 0; i < federation.clients.size(); ++i) {
    sizes[static_cast<Eigen::Index>(i)] = static_cast<double>(federation.clients[i].train.size());
  }
  return ProbabilityVector::from_weights(sizes);
}

EmpiricalDistribution to_empirical(const Examples& dataset, LabelEmbedding embedding) {
  if (dataset.empty()) throw InvalidArgument("to_empirical: empty dataset");
  const auto dim = dataset.front().x.size();
  const Eigen::Index cols = dim + (embedding.kappa ? 1 : 0);
  EmpiricalDistribution dist;
  dist.points.resize(static_cast<Eigen::Index>(dataset.size()), cols);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    if (dataset[i].x.size() != dim) throw InvalidArgument("to_empirical: inconsistent dimensions");
    dist.points.row(row).head(dim) = dataset[i].x.transpose();
    if (embedding.kappa) dist.points(row, dim) = std::sqrt(*embedding.kappa) * dataset[i].y;
  }
  dist.masses = ProbabilityVector::uniform(dataset.size());
  return dist;
}

Examples pooled_test(const FederationData& federation) {
  Examples out;
  for (const auto& c : federation.clients) out.insert(out.end(), c.test.begin(), c.test.end());
  return out;
}

Examples pooled_train(const FederationData& federation) {
  Examples out;
  for (const auto& c : federation.clients) out.insert(out.end(), c.train.begin(), c.train.end());
  return out;
}

}  // namespace wafl
