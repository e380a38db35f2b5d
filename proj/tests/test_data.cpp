#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "doctest.h"
#include "wafl/data.hpp"
#include "wafl/surrogate.hpp"

using namespace wafl;
namespace fs = std::filesystem;

namespace {

const fs::path kData = WAFL_DATA_DIR;
const fs::path kImages = kData / "mnist-small-images-idx3-ubyte";
const fs::path kLabels = kData / "mnist-small-labels-idx1-ubyte";

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "wafl_test_data";
  fs::create_directories(dir);
  return dir / name;
}

std::vector<char> bytes_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::set<int> labels_of(const ClientDataset& c) {
  std::set<int> out;
  for (const auto* split : {&c.train, &c.test}) {
    for (const auto& z : *split) out.insert(z.label());
  }
  return out;
}

}  // namespace

TEST_CASE("load_idx reads the mnist-small files") {
  const auto examples = load_idx(kImages, kLabels);
  REQUIRE(examples.size() == 10000);
  std::set<int> labels;
  for (const auto& z : examples) {
    REQUIRE(z.x.size() == 784);
    REQUIRE(z.x.minCoeff() >= 0.0);
    REQUIRE(z.x.maxCoeff() <= 1.0);
    labels.insert(z.label());
  }
  CHECK(labels == std::set<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  CHECK(load_idx(kImages, kLabels, 25).size() == 25);
}

TEST_CASE("IDX error variants name the file") {
  const auto empty = scratch("empty.idx");
  std::ofstream(empty).close();
  try {
    read_idx_images(empty);
    FAIL("expected an error");
  } catch (const IdxError& e) {
    CHECK(e.kind() == IdxError::Kind::Truncated);
    CHECK(std::string(e.what()).find("truncated IDX header") != std::string::npos);
    CHECK(std::string(e.what()).find("empty.idx") != std::string::npos);
  }

  IdxImages ten{2, 2, std::vector<std::uint8_t>(40, 7)};
  write_idx_images(scratch("ten-images"), ten);
  write_idx_labels(scratch("nine-labels"), std::vector<std::uint8_t>(9, 1));
  try {
    load_idx(scratch("ten-images"), scratch("nine-labels"));
    FAIL("expected an error");
  } catch (const IdxError& e) {
    CHECK(e.kind() == IdxError::Kind::CountMismatch);
    CHECK(std::string(e.what()).find("count mismatch") != std::string::npos);
  }

  // Labels file passed as images: wrong magic.
  try {
    read_idx_images(scratch("nine-labels"));
    FAIL("expected an error");
  } catch (const IdxError& e) {
    CHECK(e.kind() == IdxError::Kind::BadMagic);
  }

  // Header claims more pixels than present.
  {
    auto bytes = bytes_of(scratch("ten-images"));
    bytes.resize(bytes.size() - 3);
    std::ofstream(scratch("short-images"), std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS_AS(read_idx_images(scratch("short-images")), IdxError);
  CHECK_THROWS_AS(read_idx_images(scratch("does-not-exist")), IdxError);
}

TEST_CASE("IDX re-serialization reproduces the input bytes") {
  const auto images = read_idx_images(kImages);
  const auto labels = read_idx_labels(kLabels);
  write_idx_images(scratch("rt-images"), images);
  write_idx_labels(scratch("rt-labels"), labels);
  CHECK(bytes_of(scratch("rt-images")) == bytes_of(kImages));
  CHECK(bytes_of(scratch("rt-labels")) == bytes_of(kLabels));

  // Through the scaled examples too: pixel = round(255 x).
  const auto examples = load_idx(kImages, kLabels, 50);
  IdxImages back{images.rows, images.cols, {}};
  for (const auto& z : examples) {
    for (double v : z.x) back.pixels.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
  }
  CHECK(std::equal(back.pixels.begin(), back.pixels.end(), images.pixels.begin()));
}

TEST_CASE("load_csv parses the y,x0,... layout") {
  const auto path = scratch("small.csv");
  std::ofstream(path) << "y,x0,x1\n1,0.5,2\n0,-1,3.25\n";
  const auto ex = load_csv(path);
  REQUIRE(ex.size() == 2);
  CHECK(ex[0].y == 1.0);
  CHECK(ex[1].x == Vec{{-1.0, 3.25}});
  std::ofstream(scratch("bad.csv")) << "y,x0\n1,abc\n";
  CHECK_THROWS_WITH(load_csv(scratch("bad.csv")), doctest::Contains(":2:"));
}

TEST_CASE("gen_synthetic_mixture is deterministic and validated") {
  const auto a = gen_synthetic_mixture(2, 2, 100, 10.0, 7);
  const auto b = gen_synthetic_mixture(2, 2, 100, 10.0, 7);
  CHECK(a == b);
  CHECK(a.size() == 100);
  int ones = 0;
  for (const auto& z : a) ones += z.label();
  CHECK(ones == 50);
  CHECK(gen_synthetic_mixture(2, 2, 100, 10.0, 8) != a);
  CHECK_THROWS_AS(gen_synthetic_mixture(1, 2, 10, 1.0, 0), InvalidArgument);
  CHECK_THROWS_AS(gen_synthetic_mixture(3, 2, 2, 1.0, 0), InvalidArgument);
}

TEST_CASE("partition_noniid on MNIST: every client holds exactly two labels") {
  const auto examples = load_idx(kImages, kLabels);
  const auto fed = partition_noniid(examples, 100, 2, 0.5, 3);
  REQUIRE(fed.num_clients() == 100);
  std::size_t assigned = 0;
  for (const auto& c : fed.clients) {
    CHECK(labels_of(c).size() == 2);
    assigned += c.train.size() + c.test.size();
  }
  CHECK(assigned <= examples.size());
  CHECK(fed.feature_dim == 784);
  CHECK(fed.num_classes == 10);
}

TEST_CASE("partition_noniid edge cases") {
  const auto examples = gen_synthetic_mixture(3, 2, 90, 4.0, 1);
  const auto whole = partition_noniid(examples, 1, 3, 0.7, 9);
  REQUIRE(whole.num_clients() == 1);
  CHECK(whole.clients[0].train.size() + whole.clients[0].test.size() == 90);
  CHECK(whole.clients[0].train.size() == 68);  // round(0.75 * 90)

  // Two classes, three clients, no size dispersion: near-equal shards.
  const auto two = gen_synthetic_mixture(2, 2, 100, 4.0, 2);
  const auto fed = partition_noniid(two, 3, 2, 0.0, 5);
  std::vector<std::size_t> sizes;
  for (const auto& c : fed.clients) {
    CHECK(labels_of(c).size() == 2);
    sizes.push_back(c.train.size() + c.test.size());
  }
  CHECK(sizes == std::vector<std::size_t>{34, 34, 32});

  CHECK_THROWS_WITH_AS(partition_noniid(gen_synthetic_mixture(2, 2, 4, 1.0, 0), 5, 2, 0.0, 0),
                       doctest::Contains("label 0"), InvalidArgument);
  CHECK_THROWS_AS(partition_noniid(two, 0, 1, 0.0, 0), InvalidArgument);
  CHECK_THROWS_AS(partition_noniid(two, 2, 3, 0.0, 0), InvalidArgument);
}

TEST_CASE("partition_noniid property: no duplication, labels from the source") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto examples = gen_synthetic_mixture(5, 3, 400, 3.0, seed);
    const auto fed = partition_noniid(examples, 7, 2, 1.0, seed);
    std::map<std::tuple<double, double, double, double>, int> seen;
    for (const auto& z : examples) seen[{z.x[0], z.x[1], z.x[2], z.y}] = 0;
    for (const auto& c : fed.clients) {
      for (const auto* split : {&c.train, &c.test}) {
        for (const auto& z : *split) {
          auto it = seen.find({z.x[0], z.x[1], z.x[2], z.y});
          REQUIRE(it != seen.end());
          CHECK(++it->second == 1);
        }
      }
    }
    CHECK(fed.weights == default_weights(fed));
  }
}

TEST_CASE("default_weights is proportional to train sizes") {
  auto make = [](std::vector<std::size_t> sizes) {
    FederationData fed;
    fed.feature_dim = 1;
    fed.num_classes = 2;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      ClientDataset c;
      c.client_id = static_cast<int>(i);
      c.train.assign(sizes[i], LabeledExample{Vec::Zero(1), 0.0});
      fed.clients.push_back(c);
    }
    return fed;
  };
  CHECK(default_weights(make({10, 30})).values() == Vec{{0.25, 0.75}});
  CHECK(default_weights(make({5, 5, 5, 5})).values() == Vec::Constant(4, 0.25));
  CHECK(default_weights(make({3})).values() == Vec::Constant(1, 1.0));
}

TEST_CASE("to_empirical embeddings") {
  Examples four(4, LabeledExample{Vec::Zero(3), 1.0});
  const auto dist = to_empirical(four);
  CHECK(dist.masses.values() == Vec::Constant(4, 0.25));
  CHECK(dist.dim() == 3);

  const auto mnist = load_idx(kImages, kLabels, 5);
  CHECK(to_empirical(mnist).dim() == 784);
  const auto joint = to_empirical(mnist, LabelEmbedding::joint(2.0));
  CHECK(joint.dim() == 785);
  // Squared distances in the joint embedding equal the transport cost with the same kappa.
  for (std::size_t i = 0; i < mnist.size(); ++i) {
    for (std::size_t j = 0; j < mnist.size(); ++j) {
      const double embedded = (joint.points.row(static_cast<Eigen::Index>(i)) -
                               joint.points.row(static_cast<Eigen::Index>(j))).squaredNorm();
      CHECK(embedded == doctest::Approx(transport_cost_sq(mnist[i], mnist[j], 2.0)).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(to_empirical(Examples{}), InvalidArgument);
}
