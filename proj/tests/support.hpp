#pragma once

// Small builders shared by the unit tests and the acceptance runner.

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "flowscope/graphbuild.hpp"
#include "flowscope/ingest.hpp"
#include "flowscope/model.hpp"
#include "flowscope/rng.hpp"
#include "flowscope/train.hpp"

namespace fst {

using namespace flowscope;

inline PacketEvent packet(double ts, std::string_view src, std::uint16_t sport,
                          std::string_view dst, std::uint16_t dport,
                          std::uint32_t length = 100, Protocol proto = Protocol::Tcp,
                          std::string label = "") {
  PacketEvent p;
  p.ts = ts;
  p.src = {IpAddress::parse(src), sport};
  p.dst = {IpAddress::parse(dst), dport};
  p.proto = proto;
  p.length = length;
  if (proto == Protocol::Tcp) p.tcp_flags = 0x18;
  p.label = std::move(label);
  return p;
}

inline FlowRecord single_flow(const std::vector<PacketEvent>& packets) {
  const auto flows = segment_flows(packets);
  if (flows.size() != 1) throw std::runtime_error("expected exactly one flow");
  return flows.front();
}

/// Random flows between `n` devices 10.0.0.1..n. The first n-1 flows chain the
/// devices so every node appears; labels cycle through `labels`.
inline std::vector<FlowRecord> random_flows(std::size_t n, std::size_t m, std::uint64_t seed,
                                            const std::vector<std::string>& labels = {
                                                "benign", "dos"}) {
  Rng rng(seed);
  std::vector<PacketEvent> packets;
  for (std::size_t k = 0; k < m; ++k) {
    std::size_t a, b;
    if (k + 1 < n) {
      a = k;
      b = k + 1;
    } else {
      a = rng.index(n);
      b = rng.index(n);
      if (b == a) b = (a + 1) % n;
    }
    const std::string ia = "10.0.0." + std::to_string(a + 1);
    const std::string ib = "10.0.0." + std::to_string(b + 1);
    const auto sport = static_cast<std::uint16_t>(40000 + k);
    const std::uint16_t dports[] = {80, 443, 53, 23, 1883, 8080};
    const std::uint16_t dport = dports[rng.index(6)];
    const Protocol proto = rng.uniform() < 0.7 ? Protocol::Tcp : Protocol::Udp;
    const std::string label = labels[k % labels.size()];
    double ts = static_cast<double>(k) * 2.0 + rng.uniform();
    const std::size_t count = 1 + rng.index(4);
    for (std::size_t i = 0; i < count; ++i) {
      const bool reply = i > 0 && rng.uniform() < 0.4;
      const auto len = static_cast<std::uint32_t>(40 + rng.index(1400));
      packets.push_back(reply ? packet(ts, ib, dport, ia, sport, len, proto, label)
                              : packet(ts, ia, sport, ib, dport, len, proto, label));
      ts += rng.uniform(0.01, 1.5);
    }
  }
  sort_packets(packets);
  return segment_flows(packets);
}

inline GraphSnapshot random_snapshot(std::size_t n, std::size_t m, std::uint64_t seed,
                                     const std::vector<std::string>& labels = {"benign",
                                                                               "dos"}) {
  const auto flows = random_flows(n, m, seed, labels);
  return build_snapshot(flows, PortVocabulary::defaults());
}

/// Freshly initialized model whose standardization is fitted on `g`.
inline Checkpoint fresh_model(const GraphSnapshot& g, ModelConfig config, std::uint64_t seed) {
  Rng rng(seed);
  Checkpoint c{config, ModelParams::init(config, rng)};
  c.params.node_scaler = Standardizer::fit(g.x);
  c.params.edge_scaler = Standardizer::fit(g.e);
  return c;
}

/// L_total on `g` as a function of every model parameter, in named() order,
/// for diff::grad_check. Pairs are sampled once so the function is fixed.
struct ModelLoss {
  diff::LossBuilder fn;
  std::vector<diff::Matrix> params;
};

inline ModelLoss model_loss(const GraphSnapshot& g, const Checkpoint& c, std::uint64_t seed) {
  Rng rng(seed);
  auto node_pairs = std::make_shared<std::vector<TopoPair>>(
      sample_pairs(g, PairDomain::Node, 2, rng));
  auto edge_pairs = std::make_shared<std::vector<TopoPair>>(
      sample_pairs(g, PairDomain::Edge, 2, rng));
  auto tensors = std::make_shared<GraphTensors>(prepare(g, c.params));
  auto targets = std::make_shared<diff::Matrix>(
      c.config.variant == Variant::Classifier ? class_targets(g, c.config) : diff::Matrix());
  auto ckpt = std::make_shared<Checkpoint>(c);
  ModelLoss out;
  for (const auto& [name, m] : ckpt->params.named()) out.params.push_back(*m);
  out.fn = [=](diff::Tape& tape, std::span<const diff::Var> vars) {
    const BoundParams p = flowscope::bind(ckpt->params, vars);
    const Forward f = forward(tape, p, ckpt->config, *tensors);
    return compute_losses(tape, f, ckpt->config, *tensors, *targets, *node_pairs, *edge_pairs)
        .total;
  };
  return out;
}

}  // namespace fst
