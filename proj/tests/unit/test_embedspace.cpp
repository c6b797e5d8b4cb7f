#include "torch_doctest.hpp"

#include <algorithm>
#include <cmath>

#include "fracgan/common/error.hpp"
#include "fracgan/common/rng.hpp"
#include "fracgan/common/text.hpp"
#include "fracgan/embedspace/embedspace.hpp"
#include "fracgan/nn/tensor_util.hpp"
#include "test_support.hpp"

using namespace fracgan;
using namespace fracgan::embedspace;

namespace {

dataset::LabeledDataset phantoms(int patients, int per_patient, uint64_t seed) {
  dataset::PhantomConfig c;
  c.n_patients = patients;
  c.images_per_patient = per_patient;
  c.seed = seed;
  return dataset::generate_phantom(c);
}

ExtractorConfig quick(uint64_t seed = 0) {
  ExtractorConfig c;
  c.epochs = 2;
  c.seed = seed;
  return c;
}

Matrix random_matrix(Rng& rng, size_t r, size_t c, double sd = 1.0) {
  Matrix m(r, c);
  for (auto& v : m.data) v = sd * rng.normal();
  return m;
}

// Exhaustive oracle: all distances first, then the first minimum.
std::pair<size_t, double> oracle_nn(const std::vector<std::vector<float>>& corpus, const std::vector<float>& q) {
  std::vector<double> d;
  for (const auto& row : corpus) {
    double s = 0.0;
    for (size_t k = 0; k < q.size(); ++k) s += std::abs(static_cast<double>(row[k]) - static_cast<double>(q[k]));
    d.push_back(s);
  }
  const auto it = std::min_element(d.begin(), d.end());
  return {static_cast<size_t>(it - d.begin()), *it};
}

}  // namespace

TEST_CASE("extractor: layers, determinism, errors") {
  const auto e = build_extractor(quick());
  CHECK(e.num_layers() == 8);
  CHECK(e.validation_auc() == -1.0);

  const Image img(32, 0.3f);
  const auto emb = embed_layers(e, img);
  REQUIRE(emb.size() == e.num_layers());
  // Shallow to deep: spatial size never grows, channels never shrink.
  const size_t expected[] = {16 * 32 * 32, 16 * 32 * 32, 32 * 16 * 16, 32 * 16 * 16,
                             64 * 8 * 8,   64 * 8 * 8,   128 * 4 * 4, 128 * 4 * 4};
  for (size_t l = 0; l < emb.size(); ++l) {
    CHECK(emb[l].layer_index == l);
    CHECK(emb[l].vector.size() == expected[l]);
  }

  const auto again = build_extractor(quick());
  const auto p1 = e.model.net->parameters(), p2 = again.model.net->parameters();
  REQUIRE(p1.size() == p2.size());
  for (size_t i = 0; i < p1.size(); ++i) CHECK(torch::equal(p1[i], p2[i]));

  CHECK_THROWS_AS(embed_layers(e, Image(64, 0.3f)), ConfigError);

  auto ds = phantoms(10, 2, 3);
  dataset::LabeledDataset one_class(32);
  for (const auto& r : ds.records()) {
    if (r.label == dataset::ConditionLabel::kNonFracture) one_class.add(r);
  }
  CHECK_THROWS_AS(train_feature_extractor(one_class, quick()), ConfigError);
}

TEST_CASE("embed_layers: identical inputs and the zero input") {
  const auto e = build_extractor(quick(4));
  const auto ds = phantoms(2, 1, 5);
  auto a = embed_layers(e, ds[0].pixels);
  auto b = embed_layers(e, Image(ds[0].pixels));
  for (size_t l = 0; l < a.size(); ++l) CHECK(a[l].vector == b[l].vector);

  // Intensity 0.5 maps to a zero input tensor.
  auto cfg = quick(4);
  cfg.conv_bias = false;
  const auto bias_free = build_extractor(cfg);
  for (const auto& layer : embed_layers(bias_free, Image(32, 0.5f))) {
    CHECK(std::all_of(layer.vector.begin(), layer.vector.end(), [](float v) { return v == 0.0f; }));
  }
}

TEST_CASE("train_feature_extractor learns the fracture task") {
  const auto ds = phantoms(120, 4, 21);
  auto cfg = quick(1);
  cfg.epochs = 4;
  const auto e = train_feature_extractor(ds, cfg);
  MESSAGE("extractor validation AUC: " << e.validation_auc());
  CHECK(e.validation_auc() > 0.9);

  testing::TempDir tmp("extractor");
  e.save(tmp.path() / "x.fgck");
  const auto back = Extractor::load(tmp.path() / "x.fgck");
  const auto a = embed_layers(e, ds[3].pixels), b = embed_layers(back, ds[3].pixels);
  for (size_t l = 0; l < a.size(); ++l) CHECK(a[l].vector == b[l].vector);
}

TEST_CASE("nearest_neighbor: worked examples and errors") {
  LayerCorpus corpus;
  corpus.push_back(std::vector<float>{0.0f, 0.0f});
  corpus.push_back(std::vector<float>{1.0f, 1.0f});
  const auto hit = nearest_neighbor(std::vector<float>{0.1f, 0.1f}, corpus);
  CHECK(hit.corpus_index == 0);
  CHECK(hit.l1_distance == doctest::Approx(0.2).epsilon(1e-6));

  const auto self = nearest_neighbor(std::vector<float>{1.0f, 1.0f}, corpus);
  CHECK(self.corpus_index == 1);
  CHECK(self.l1_distance == 0.0);

  corpus.push_back(std::vector<float>{0.0f, 0.0f});
  CHECK(nearest_neighbor(std::vector<float>{0.0f, 0.0f}, corpus).corpus_index == 0);
  CHECK(nearest_neighbor(std::vector<float>{0.5f, 0.5f}, corpus).corpus_index == 0);

  CHECK_THROWS_AS(nearest_neighbor(std::vector<float>{1.0f}, corpus), ConfigError);
  CHECK_THROWS_AS(nearest_neighbor(std::vector<float>{1.0f}, LayerCorpus{}), ConfigError);
  CHECK_THROWS_AS(corpus.push_back(std::vector<float>{1.0f}), ConfigError);
}

TEST_CASE("nearest_neighbor matches an exhaustive oracle on random corpora") {
  Rng rng(404);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<float>> rows(100, std::vector<float>(32));
    LayerCorpus corpus;
    for (auto& row : rows) {
      // Coarse values make exact ties common.
      for (auto& v : row) v = static_cast<float>(rng.below(4));
      corpus.push_back(row);
    }
    for (int q = 0; q < 10; ++q) {
      std::vector<float> query(32);
      for (auto& v : query) v = static_cast<float>(rng.below(4));
      if (q == 0) query = rows[rng.below(100)];
      const auto hit = nearest_neighbor(query, corpus);
      const auto [idx, dist] = oracle_nn(rows, query);
      CHECK(hit.corpus_index == idx);
      CHECK(hit.l1_distance == dist);
    }
  }
}

TEST_CASE("L1 distance axioms") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const size_t n = 1 + rng.below(40);
    std::vector<float> a(n), b(n), c(n);
    for (size_t i = 0; i < n; ++i) {
      a[i] = static_cast<float>(rng.normal());
      b[i] = static_cast<float>(rng.normal());
      c[i] = static_cast<float>(rng.normal());
    }
    CHECK(l1_distance(a, a) == 0.0);
    CHECK(l1_distance(a, b) == l1_distance(b, a));
    CHECK(l1_distance(a, b) >= 0.0);
    CHECK(l1_distance(a, c) <= l1_distance(a, b) + l1_distance(b, c) + 1e-9);
    if (a != b) CHECK(l1_distance(a, b) > 0.0);
  }
}

TEST_CASE("memorization_report flags a planted copy") {
  const auto train = phantoms(8, 3, 30);
  const auto others = phantoms(4, 2, 31);
  const auto e = build_extractor(quick(2));

  dataset::LabeledDataset samples(32);
  for (const auto& r : others.records()) {
    auto s = r;
    s.image_id = "sample_" + r.image_id;
    samples.add(s);
  }
  auto planted = train[5];
  planted.image_id = "planted";
  samples.add(planted);

  const auto rows = memorization_report(samples, e, train);
  REQUIRE(rows.size() == samples.size());
  const auto& copy = rows.back();
  CHECK(copy.sample_id == "planted");
  CHECK(copy.copy_flag);
  REQUIRE(copy.hits.size() == e.num_layers());
  for (size_t l = 0; l < copy.hits.size(); ++l) {
    CHECK(copy.hits[l].layer_index == l);
    CHECK(copy.hits[l].l1_distance == 0.0);
    CHECK(copy.hits[l].train_image_id == train[5].image_id);
  }
  for (size_t i = 0; i + 1 < rows.size(); ++i) CHECK_FALSE(rows[i].copy_flag);

  // Streaming scan agrees with the per-layer corpus search.
  const auto corpora = embed_corpus(e, train);
  const auto q = embed_layers(e, samples[0].pixels);
  for (size_t l = 0; l < corpora.size(); ++l) {
    const auto hit = nearest_neighbor(q[l].vector, corpora[l]);
    CHECK(hit.corpus_index == rows[0].hits[l].corpus_index);
    CHECK(hit.l1_distance == rows[0].hits[l].l1_distance);
  }

  testing::TempDir tmp("neighbors");
  write_neighbors_csv(rows, tmp.path() / "neighbors.csv");
  const auto lines = split(trim(read_text_file(tmp.path() / "neighbors.csv")), '\n');
  CHECK(lines.size() == 1 + rows.size() * e.num_layers());
  CHECK(lines[0] == "sample_id,layer_index,train_image_id,l1_distance,copy_flag");
  CHECK(lines.back() == "planted," + std::to_string(e.num_layers() - 1) + "," + train[5].image_id + ",0,1");

  const auto montage = neighbor_montage(rows, samples, train, 4);
  CHECK(montage.width == static_cast<int>(1 + e.num_layers()) * 34);
  CHECK(montage.height == 4 * 34);
}

TEST_CASE("joint_affinities: bisection hits the perplexity") {
  Rng rng(8);
  const auto x = random_matrix(rng, 60, 5);
  for (double perp : {5.0, 15.0, 30.0}) {
    const auto a = joint_affinities(x, perp);
    double total = 0.0;
    for (size_t i = 0; i < x.rows; ++i) {
      CHECK(std::abs(a.perplexity[i] - perp) < 1e-4);
      CHECK(a.p(i, i) == 0.0);
      for (size_t j = 0; j < x.rows; ++j) {
        CHECK(a.p(i, j) == a.p(j, i));
        total += a.p(i, j);
      }
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
  // Widely spread inputs still converge.
  const auto far = random_matrix(rng, 40, 3, 1e3);
  const auto a = joint_affinities(far, 10.0);
  for (double p : a.perplexity) CHECK(std::abs(p - 10.0) < 1e-4);
}

TEST_CASE("tsne gradient matches central differences") {
  Rng rng(12);
  for (int trial = 0; trial < 5; ++trial) {
    const auto x = random_matrix(rng, 8, 4);
    const auto p = joint_affinities(x, 3.0).p;
    auto y = random_matrix(rng, 8, 2);
    const auto g = tsne_gradient(p, y);
    const double h = 1e-6;
    for (size_t k = 0; k < y.data.size(); ++k) {
      const double orig = y.data[k];
      y.data[k] = orig + h;
      const double plus = tsne_kl(p, y);
      y.data[k] = orig - h;
      const double minus = tsne_kl(p, y);
      y.data[k] = orig;
      const double fd = (plus - minus) / (2 * h);
      CHECK(std::abs(g.data[k] - fd) <= 1e-4 * std::max(std::abs(fd), 1e-6));
    }
  }
}

TEST_CASE("tsne: preconditions, determinism, KL, centering") {
  Rng rng(3);
  CHECK_THROWS_AS(tsne(random_matrix(rng, 10, 3)), ConfigError);
  TsneConfig small;
  small.perplexity = 2.0;
  CHECK_THROWS_AS(tsne(random_matrix(rng, 3, 3), small), ConfigError);
  small.iterations = 50;
  CHECK_THROWS_AS(tsne(random_matrix(rng, 10, 3), small), ConfigError);

  const auto x = random_matrix(rng, 80, 6);
  TsneConfig cfg;
  cfg.perplexity = 15.0;
  cfg.seed = 9;
  const auto a = tsne(x, cfg);
  const auto b = tsne(x, cfg);
  CHECK(a.y.data == b.y.data);
  cfg.seed = 10;
  CHECK(tsne(x, cfg).y.data != a.y.data);

  REQUIRE(a.kl_history.size() == 1001);
  CHECK(a.kl_history.back() <= a.kl_history[101]);
  for (size_t k = 0; k < 2; ++k) {
    double m = 0.0;
    for (size_t i = 0; i < a.y.rows; ++i) m += a.y(i, k);
    CHECK(std::abs(m / a.y.rows) < 1e-6);
  }
}

TEST_CASE("tsne keeps separated clusters apart") {
  Rng rng(77);
  Matrix x(40, 10);
  std::vector<int> labels;
  for (size_t i = 0; i < 40; ++i) {
    const double offset = i < 20 ? 0.0 : 10.0;
    for (size_t k = 0; k < 10; ++k) x(i, k) = rng.normal() + (k == 0 ? offset : 0.0);
    labels.push_back(i < 20 ? 0 : 1);
  }
  TsneConfig cfg;
  cfg.perplexity = 10.0;
  const auto r = tsne(x, cfg);
  const double s = silhouette_score(r.y, labels);
  MESSAGE("silhouette: " << s);
  CHECK(s > 0.0);
}

TEST_CASE("silhouette_score: hand values") {
  Matrix pts(4, 1);
  pts(0, 0) = 0.0;
  pts(1, 0) = 1.0;
  pts(2, 0) = 10.0;
  pts(3, 0) = 11.0;
  const std::vector<int> labels = {0, 0, 1, 1};
  // Point 0: a = 1, b = 10.5 -> 9.5/10.5; point 1: a = 1, b = 9.5 -> 8.5/9.5.
  const double expected = (9.5 / 10.5 + 8.5 / 9.5) / 2.0;
  CHECK(silhouette_score(pts, labels) == doctest::Approx(expected).epsilon(1e-12));
  CHECK_THROWS_AS(silhouette_score(pts, std::vector<int>{0, 0, 0, 0}), ConfigError);
}

TEST_CASE("tsne_map_figure: four maps with CSVs and images") {
  const auto real = phantoms(70, 4, 41);  // ~80 fracture, ~200 non-fracture
  const auto gan = phantoms(90, 4, 42);
  const auto e = build_extractor(quick(6));
  testing::TempDir tmp("tsne");
  TsneConfig cfg;
  cfg.iterations = 300;
  const auto maps = tsne_map_figure({{"real", &real}, {"gan", &gan}}, e, tmp.path(), cfg);
  REQUIRE(maps.size() == 4);
  for (const auto& m : maps) {
    CHECK(m.image_ids.size() == std::min(m.available, kMapPoints));
    CHECK(m.coords.rows == m.image_ids.size());
    CHECK(std::filesystem::exists(m.png_path));
    const auto rows = read_coords_csv(m.csv_path);
    REQUIRE(rows.size() == m.image_ids.size());
    for (size_t i = 0; i < rows.size(); ++i) {
      CHECK(rows[i].image_id == m.image_ids[i]);
      CHECK(rows[i].x == m.coords(i, 0));
      CHECK(rows[i].y == m.coords(i, 1));
    }
  }
  CHECK(maps[0].csv_path.filename() == "tsne_real_fracture.csv");
  CHECK(maps[3].csv_path.filename() == "tsne_gan_nonfracture.csv");
  CHECK(std::filesystem::exists(tmp.path() / "tsne_grid.png"));

  dataset::LabeledDataset no_fracture(32);
  for (const auto& r : real.records()) {
    if (r.label == dataset::ConditionLabel::kNonFracture) no_fracture.add(r);
  }
  CHECK_THROWS_AS(tsne_map_figure({{"real", &no_fracture}}, e, tmp.path(), cfg), ConfigError);
}
