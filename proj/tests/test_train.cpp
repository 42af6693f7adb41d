#include <doctest.h>

#include <cmath>
#include <set>

#include "flowscope/error.hpp"
#include "flowscope/train.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace flowscope;
using fst::packet;

namespace {

GraphSnapshot snapshot_of(const std::vector<PacketEvent>& pkts) {
  return build_snapshot(segment_flows(pkts), PortVocabulary::defaults());
}

// Devices 1-2-3 fully connected.
GraphSnapshot triangle() {
  return snapshot_of({packet(0, "10.0.0.1", 1001, "10.0.0.2", 80),
                      packet(1, "10.0.0.2", 1002, "10.0.0.3", 80),
                      packet(2, "10.0.0.3", 1003, "10.0.0.1", 80)});
}

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::Io;
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("kernel fit agrees with the Nelder-Mead oracle") {
  const auto fit = fit_kernel_ab(0.1, 1.0);
  const auto ref = oracle::kernel_fit(0.1, 1.0);
  CHECK(std::abs(ref.a - 1.5769436) < 1e-3);
  CHECK(std::abs(ref.b - 0.8950607) < 1e-3);
  CHECK(std::abs(fit.a - ref.a) < 0.05);
  CHECK(std::abs(fit.b - ref.b) < 0.05);
  CHECK(fit.sse <= ref.sse * (1.0 + 1e-6));
}

TEST_CASE("exact kernel family is recovered") {
  std::vector<double> d, y;
  for (int k = 0; k < 300; ++k) {
    d.push_back(3.0 * k / 299.0);
    y.push_back(1.0 / (1.0 + 2.0 * std::pow(d.back(), 2.0)));
  }
  const auto fit = fit_kernel_curve(d, y);
  CHECK(std::abs(fit.a - 2.0) < 1e-3);
  CHECK(std::abs(fit.b - 1.0) < 1e-3);
}

TEST_CASE("kernel fit arguments") {
  CHECK(code_of([] { fit_kernel_ab(1.0, 1.0); }) == Errc::InvalidConfig);
  CHECK(code_of([] { fit_kernel_ab(0.0, 1.0); }) == Errc::InvalidConfig);
  const double one[] = {1.0};
  CHECK(code_of([&] { fit_kernel_curve(one, one); }) == Errc::InvalidArgument);
}

TEST_CASE("kernel probability is 1 at zero and decreasing") {
  const auto fit = fit_kernel_ab(0.1, 1.0);
  CHECK(kernel_p(0.0, fit.a, fit.b) == 1.0);
  double prev = 1.0;
  for (int k = 1; k <= 100; ++k) {
    const double p = kernel_p(0.05 * k, fit.a, fit.b);
    CHECK(p < prev);
    CHECK(p > 0.0);
    prev = p;
  }
}

TEST_CASE("pairs on a triangle") {
  const auto g = triangle();
  Rng rng(1);
  const auto nodes = sample_pairs(g, PairDomain::Node, 5, rng);
  CHECK(nodes.size() == 3);
  for (const auto& p : nodes) CHECK(p.weight == 1.0);
  const auto edges = sample_pairs(g, PairDomain::Edge, 5, rng);
  CHECK(edges.size() == 3);  // every two of the three edges share a device
}

TEST_CASE("edge pairs on a path share the middle device") {
  const auto g = snapshot_of({packet(0, "10.0.0.1", 1001, "10.0.0.2", 80),
                              packet(1, "10.0.0.2", 1002, "10.0.0.3", 80)});
  const auto pos = positive_pairs(g, PairDomain::Edge);
  REQUIRE(pos.size() == 1);
  CHECK(pos[0].i == 0);
  CHECK(pos[0].j == 1);
  Rng rng(0);
  const auto nodes = sample_pairs(g, PairDomain::Node, 5, rng);
  CHECK(nodes.size() == 3);  // two positives, the only non-adjacent pair (1, 3)
  CHECK(nodes.back().weight == 0.0);
  CHECK(code_of([&] { sample_pairs(snapshot_of({packet(0, "10.0.0.1", 1, "10.0.0.1", 2)}),
                                   PairDomain::Node, 5, rng); }) == Errc::DegenerateGraph);
}

TEST_CASE("negatives are distinct, non-adjacent and never (i, i)") {
  const auto g = fst::random_snapshot(30, 45, 17);
  for (const auto domain : {PairDomain::Node, PairDomain::Edge}) {
    const PairSampler sampler(g, domain, 3);
    const auto pos = sampler.positives();
    std::set<std::pair<std::size_t, std::size_t>> positive;
    for (const auto& p : pos) positive.insert({p.i, p.j});
    Rng rng(5);
    for (int round = 0; round < 3; ++round) {
      const auto pairs = sampler.sample(rng);
      const std::size_t want = std::min(3 * pos.size(), sampler.available_negatives());
      CHECK(pairs.size() == pos.size() + want);
      std::set<std::pair<std::size_t, std::size_t>> seen;
      for (std::size_t k = pos.size(); k < pairs.size(); ++k) {
        const auto& p = pairs[k];
        CHECK(p.weight == 0.0);
        CHECK(p.i < p.j);
        CHECK(positive.count({p.i, p.j}) == 0);
        CHECK(seen.insert({p.i, p.j}).second);
      }
    }
  }
}

TEST_CASE("adam leaves parameters alone under a zero gradient") {
  diff::Matrix p = diff::Matrix::from_rows({{1.0, -2.0}, {0.5, 3.0}});
  const diff::Matrix before = p;
  const diff::Matrix g(2, 2);
  Adam adam(0.1, 0.9, 0.999, 1e-8);
  diff::Matrix* ps[] = {&p};
  const diff::Matrix* gs[] = {&g};
  for (int i = 0; i < 5; ++i) adam.step(ps, gs);
  CHECK(p == before);
  CHECK(adam.steps() == 5);
}

TEST_CASE("adam first step moves each coordinate by about lr") {
  diff::Matrix p = diff::Matrix::from_rows({{1.0, 1.0}});
  const diff::Matrix g = diff::Matrix::from_rows({{0.3, -7.0}});
  Adam adam(0.01, 0.9, 0.999, 1e-8);
  diff::Matrix* ps[] = {&p};
  const diff::Matrix* gs[] = {&g};
  adam.step(ps, gs);
  CHECK(p[0] == doctest::Approx(0.99).epsilon(1e-6));
  CHECK(p[1] == doctest::Approx(1.01).epsilon(1e-6));
}

TEST_CASE("training is deterministic and lowers the loss") {
  const auto g = fst::random_snapshot(10, 60, 8);
  ModelConfig model;
  model.hidden = 8;
  model.edge_latent = 8;
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.learning_rate = 0.01;
  cfg.seed = 42;
  const auto a = train(g, model, cfg);
  const auto b = train(g, model, cfg);
  CHECK(checkpoint_to_json(a.checkpoint).dump() == checkpoint_to_json(b.checkpoint).dump());
  REQUIRE(a.history.size() == 31);
  for (const auto& r : a.history) CHECK(std::isfinite(r.total));
  CHECK(a.history.back().total < a.history.front().total);
  CHECK(a.checkpoint.config.classes == std::vector<std::string>{"benign", "dos"});
  CHECK(std::abs(a.checkpoint.config.kernel_a - 1.577) < 0.05);

  cfg.seed = 43;
  const auto c = train(g, model, cfg);
  CHECK(checkpoint_to_json(a.checkpoint).dump() != checkpoint_to_json(c.checkpoint).dump());
}

TEST_CASE("embedding shapes") {
  const auto g = fst::random_snapshot(6, 20, 3);
  TrainConfig cfg;
  cfg.epochs = 2;
  for (const auto variant : {Variant::Classifier, Variant::Autoencoder}) {
    ModelConfig model;
    model.variant = variant;
    const auto r = train(g, model, cfg);
    const auto emb = embed(g, r.checkpoint);
    CHECK(emb.u.rows() == g.num_nodes());
    CHECK(emb.u.cols() == 2);
    CHECK(emb.w.rows() == g.num_edges());
    CHECK(emb.w.cols() == 2);
    if (variant == Variant::Classifier) {
      CHECK(emb.edge_pred.size() == g.num_edges());
      CHECK(emb.node_pred.size() == g.num_nodes());
    } else {
      CHECK(emb.x_hat.rows() == g.num_nodes());
      CHECK(emb.e_hat.cols() == g.e.cols());
    }
  }
}

TEST_CASE("train config validation and json") {
  TrainConfig c;
  c.seed = 9;
  c.epochs = 3;
  CHECK(TrainConfig::from_json(c.to_json()) == c);
  auto rejects = [](auto mutate) {
    TrainConfig t;
    mutate(t);
    return code_of([&] { t.validate(); }) == Errc::InvalidConfig;
  };
  CHECK(rejects([](TrainConfig& t) { t.epochs = -1; }));
  CHECK(rejects([](TrainConfig& t) { t.learning_rate = 0; }));
  CHECK(rejects([](TrainConfig& t) { t.beta1 = 1.0; }));
  CHECK(rejects([](TrainConfig& t) { t.negative_ratio = 0; }));
  CHECK(rejects([](TrainConfig& t) { t.min_dist = 2.0; }));
  CHECK(code_of([] { TrainConfig::from_json({{"epoch", 3}}); }) == Errc::InvalidConfig);
}

}  // TEST_SUITE
