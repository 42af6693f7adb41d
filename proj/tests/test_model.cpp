#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "flowscope/error.hpp"
#include "flowscope/model.hpp"
#include "flowscope/train.hpp"
#include "support.hpp"

using namespace flowscope;
using namespace flowscope::diff;

namespace {

Matrix identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

BoundMlp identity_mlp(Tape& t, std::size_t n) {
  BoundMlp m;
  m.layers.emplace_back(t.constant(identity(n)), t.constant(Matrix(1, n)));
  return m;
}

BoundParams one_gin_layer(Tape& t, std::size_t n, double eps) {
  BoundParams p;
  p.gin.push_back(identity_mlp(t, n));
  p.gin_eps.push_back(t.constant(Matrix::scalar(eps)));
  return p;
}

double scalar(Var v) { return v.value()[0]; }

ModelConfig classifier(std::vector<std::string> classes = {"benign", "dos"}) {
  ModelConfig c;
  c.classes = std::move(classes);
  return c;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("GIN layer by hand") {
  Tape t;
  SUBCASE("isolated node keeps its features") {
    Var x = t.constant(Matrix::from_rows({{1.5, -2.0}}));
    const Encoded e = encode_nodes(one_gin_layer(t, 2, 0.0), x, {}, {}, 1);
    CHECK(e.h.value() == x.value());
  }
  SUBCASE("one edge, eps 0 and eps 1") {
    Var x = t.constant(Matrix::from_rows({{1.0, 2.0}, {10.0, 20.0}}));
    const std::size_t src[] = {0}, dst[] = {1};
    const Encoded e0 = encode_nodes(one_gin_layer(t, 2, 0.0), x, src, dst, 2);
    CHECK(e0.h.value() == Matrix::from_rows({{11, 22}, {11, 22}}));
    const Encoded e1 = encode_nodes(one_gin_layer(t, 2, 1.0), x, src, dst, 2);
    CHECK(e1.h.value() == Matrix::from_rows({{12, 24}, {21, 42}}));
  }
  SUBCASE("parallel edges count with multiplicity, self-loops once") {
    Var x = t.constant(Matrix::from_rows({{1.0}, {10.0}}));
    const std::size_t src[] = {0, 0, 1}, dst[] = {1, 1, 1};
    const Encoded e = encode_nodes(one_gin_layer(t, 1, 0.0), x, src, dst, 2);
    CHECK(e.h.value() == Matrix::from_rows({{21}, {22}}));
  }
}

TEST_CASE("edge fusion") {
  Tape t;
  BoundParams p;
  p.edge = identity_mlp(t, 4);
  Var h = t.constant(Matrix::from_rows({{1, 2}, {10, 20}, {100, 200}}));
  Var e = t.constant(Matrix::from_rows({{7, 8}, {7, 8}, {5, 6}}));
  const ModelConfig cfg = classifier();
  const std::size_t src[] = {0, 1, 1}, dst[] = {1, 0, 0};
  const Matrix z = fuse_edges(p, cfg, h, e, src, dst).value();
  CHECK(z == Matrix::from_rows({{11, 22, 7, 8}, {11, 22, 7, 8}, {11, 22, 5, 6}}));
}

TEST_CASE("projection") {
  Tape t;
  BoundMlp zero;
  zero.layers.emplace_back(t.constant(Matrix(3, 2)), t.constant(Matrix(1, 2)));
  Var latent = t.constant(Matrix::from_rows({{1, 2, 3}, {4, 5, 6}, {7, 8, 9}, {1, 1, 1}}));
  const Matrix u = project(zero, latent).value();
  CHECK(u.rows() == 4);
  CHECK(u.cols() == 2);
  for (double v : u.values()) CHECK(v == 0.0);
}

TEST_CASE("kernel") {
  CHECK(kernel_p(0.0, 1.577, 0.895) == 1.0);
  CHECK(kernel_p(1.0, 1.0, 1.0) == 0.5);
  double prev = 1.0;
  for (int i = 1; i <= 100; ++i) {
    const double p = kernel_p(i * 0.05, 1.577, 0.895);
    CHECK(p < prev);
    prev = p;
  }
}

TEST_CASE("topology loss") {
  const double ln2 = std::numbers::ln2;
  Tape t;
  // (0,0) and (1,0): distance 1 -> p = 0.5 with a = b = 1
  Var c = t.constant(Matrix::from_rows({{0, 0}, {1, 0}, {0, 0}}));
  const TopoPair pos{PairDomain::Node, 0, 1, 1.0};
  const TopoPair neg{PairDomain::Node, 0, 1, 0.0};
  const TopoPair same{PairDomain::Node, 0, 2, 1.0};
  CHECK(scalar(loss_topo(c, std::vector{pos}, 1, 1)) == doctest::Approx(ln2));
  CHECK(scalar(loss_topo(c, std::vector{neg}, 1, 1)) == doctest::Approx(ln2));
  CHECK(scalar(loss_topo(c, std::vector{same}, 1, 1)) < 1e-6);
  CHECK(scalar(loss_topo(c, std::vector{pos, neg}, 1, 1, Reduction::Mean)) == doctest::Approx(ln2));
  CHECK(scalar(loss_topo(c, std::vector{pos, neg}, 1, 1, Reduction::Sum)) == doctest::Approx(2 * ln2));
  try {
    loss_topo(c, {}, 1, 1);
    FAIL("expected EmptyPairSet");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::EmptyPairSet);
  }
  CHECK_THROWS_AS(loss_topo(c, std::vector{TopoPair{PairDomain::Node, 1, 1, 1.0}}, 1, 1), Error);
  CHECK_THROWS_AS(loss_topo(c, std::vector{TopoPair{PairDomain::Node, 0, 1, 1.5}}, 1, 1), Error);
}

TEST_CASE("reconstruction loss") {
  Tape t;
  Var x = t.constant(Matrix(1, 17, 0.0));
  Var off = t.constant(Matrix(1, 17, 1.0));
  Var e = t.constant(Matrix(0, 98));
  CHECK(scalar(loss_mse(x, x, e, e)) == 0.0);
  CHECK(scalar(loss_mse(x, off, e, e)) == 17.0);
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    Matrix a(3, 4), b(3, 4);
    for (double& v : a.values()) v = rng.normal();
    for (double& v : b.values()) v = rng.normal();
    Var va = t.constant(a), vb = t.constant(b);
    CHECK(scalar(loss_mse(va, vb, va, vb)) >= 0.0);
  }
}

TEST_CASE("asymmetric loss") {
  const double ln2 = std::numbers::ln2;
  Tape t;
  Var half = t.constant(Matrix::scalar(0.5));
  CHECK(scalar(loss_asym(half, Matrix::scalar(1.0), 0.0, 4.0)) == doctest::Approx(ln2));
  CHECK(scalar(loss_asym(half, Matrix::scalar(0.0), 0.0, 1.0)) == doctest::Approx(0.5 * ln2));
  // gamma = 0 is mean binary cross-entropy
  const Matrix p = Matrix::from_rows({{0.9, 0.2}, {0.3, 0.6}});
  const Matrix y = Matrix::from_rows({{1, 0}, {0, 1}});
  const double bce = -(std::log(0.9) + std::log(0.8) + std::log(0.7) + std::log(0.6)) / 2.0;
  CHECK(scalar(loss_asym(t.constant(p), y, 0.0, 0.0)) == doctest::Approx(bce));
  CHECK_THROWS_AS(loss_asym(t.constant(p), Matrix(2, 3), 0, 4), Error);
}

TEST_CASE("total loss is linear in its weights") {
  Tape t;
  Var task = t.constant(Matrix::scalar(3.0));
  Var un = t.constant(Matrix::scalar(5.0)), ue = t.constant(Matrix::scalar(7.0));
  CHECK(scalar(total_loss(task, un, ue, 1.0, 0.0)) == 3.0);
  CHECK(scalar(total_loss(task, un, ue, 0.0, 1.0)) == 12.0);
  CHECK(scalar(total_loss(task, un, ue, 2.0, 1.0)) - scalar(total_loss(task, un, ue, 1.0, 1.0)) ==
        3.0);
}

TEST_CASE("config validation") {
  ModelConfig c = classifier();
  CHECK_NOTHROW(c.validate());
  c.gamma_neg = -1;
  CHECK_THROWS_AS(c.validate(), Error);
  c = classifier();
  c.low_dim = 3;
  CHECK_THROWS_AS(c.validate(), Error);
  c = classifier({});
  CHECK_THROWS_AS(c.validate(), Error);
  c.variant = Variant::Autoencoder;
  CHECK_NOTHROW(c.validate());
  CHECK(ModelConfig::from_json(classifier().to_json()) == classifier());
  CHECK_THROWS_AS(ModelConfig::from_json({{"hiden", 3}}), Error);
}

TEST_CASE("permutation equivariance and endpoint-swap invariance") {
  const GraphSnapshot g = fst::random_snapshot(9, 30, 12);
  const Checkpoint ckpt = fst::fresh_model(g, classifier(), 5);
  const Embedding base = embed(g, ckpt);

  // node v of g becomes node perm[v] of p
  const std::vector<std::size_t> perm = {4, 0, 8, 2, 7, 1, 3, 6, 5};
  GraphSnapshot p = g;
  for (std::size_t v = 0; v < g.num_nodes(); ++v) {
    p.node_ids[perm[v]] = g.node_ids[v];
    for (std::size_t c = 0; c < 17; ++c) p.x(perm[v], c) = g.x(v, c);
  }
  for (std::size_t k = 0; k < g.num_edges(); ++k) {
    p.src[k] = perm[g.src[k]];
    p.dst[k] = perm[g.dst[k]];
  }
  const Embedding moved = embed(p, ckpt);
  for (std::size_t v = 0; v < g.num_nodes(); ++v)
    for (std::size_t c = 0; c < 2; ++c) CHECK(moved.u(perm[v], c) == doctest::Approx(base.u(v, c)));
  for (std::size_t i = 0; i < base.w.size(); ++i) CHECK(moved.w[i] == doctest::Approx(base.w[i]));

  GraphSnapshot swapped = g;
  std::swap(swapped.src, swapped.dst);
  const Embedding sw = embed(swapped, ckpt);
  for (std::size_t i = 0; i < base.z.size(); ++i) CHECK(sw.z[i] == doctest::Approx(base.z[i]));
}

TEST_CASE("full model gradient check on a small graph") {
  const GraphSnapshot g = fst::random_snapshot(6, 12, 8);
  for (Variant v : {Variant::Classifier, Variant::Autoencoder}) {
    ModelConfig cfg = classifier();
    cfg.variant = v;
    cfg.hidden = 6;
    cfg.edge_latent = 5;
    const auto loss = fst::model_loss(g, fst::fresh_model(g, cfg, 2), 3);
    const auto r = grad_check(loss.fn, loss.params, 1e-5, 300, 1);
    CHECK(r.checked > 250);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("class targets") {
  const GraphSnapshot g = fst::random_snapshot(4, 6, 1);
  const Matrix y = class_targets(g, classifier());
  for (std::size_t k = 0; k < g.num_edges(); ++k) CHECK(y(k, 0) + y(k, 1) == 1.0);
  try {
    class_targets(g, classifier({"benign"}));
    FAIL("expected ConfigMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::ConfigMismatch);
  }
}

TEST_CASE("checkpoint round trip and validation") {
  const GraphSnapshot g = fst::random_snapshot(5, 10, 2);
  const Checkpoint c = fst::fresh_model(g, classifier(), 9);
  const auto path = std::filesystem::temp_directory_path() / "flowscope_test_ckpt.json";
  save_checkpoint(c, path);
  const Checkpoint back = load_checkpoint(path);
  CHECK(back.config == c.config);
  const auto a = c.params.named();
  const auto b = back.params.named();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(*a[i].second == *b[i].second);
  }
  CHECK(back.params.edge_scaler == c.params.edge_scaler);
  std::filesystem::remove(path);

  auto doc = checkpoint_to_json(c);
  doc["config"]["hidden"] = 7;
  CHECK_THROWS_AS(checkpoint_from_json(doc), Error);
  auto version = checkpoint_to_json(c);
  version["format_version"] = 99;
  CHECK_THROWS_AS(checkpoint_from_json(version), Error);
}

}  // TEST_SUITE
