#include <doctest.h>

#include <algorithm>

#include "subquant/error.hpp"
#include "subquant/reorder.hpp"
#include "support.hpp"

using namespace subquant;
using namespace subquant::test;

namespace {

Permutation random_perm(Rng& rng, std::size_t n) {
  std::vector<std::size_t> m(n);
  for (std::size_t i = 0; i < n; ++i) m[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(m[i - 1], m[uniform_index(rng, i)]);
  return Permutation(m);
}

bool same_weights(const Layer& a, const Layer& b) {
  return std::equal(a.weight->data().begin(), a.weight->data().end(), b.weight->data().begin()) && a.bias == b.bias;
}

CalibConfig quick_calib() {
  CalibConfig c;
  c.grid_size = 9;
  c.iterations = 1;
  return c;
}

}  // namespace

TEST_CASE("permutation algebra") {
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + uniform_index(rng, 20);
    const Permutation a = random_perm(rng, n), b = random_perm(rng, n), c = random_perm(rng, n);
    REQUIRE(a.then(a.inverse()).is_identity());
    REQUIRE(a.inverse().then(a).is_identity());
    REQUIRE(a.inverse().inverse() == a);
    REQUIRE(a.then(b).then(c) == a.then(b.then(c)));
    REQUIRE(is_bijection(a.then(b).mapping()));
  }
  CHECK(Permutation::identity(5).is_identity());
  CHECK_THROWS_AS(Permutation({0, 0, 1}), ShapeError);
  CHECK_THROWS_AS(Permutation({0, 3}), ShapeError);
  Permutation p = Permutation::identity(3);
  p.swap_positions(0, 2);
  CHECK(p.mapping() == std::vector<std::size_t>{2, 1, 0});
}

TEST_CASE("output permutation moves weight rows and bias") {
  Rng rng(2);
  const Layer l = make_conv("c", "x", 3, 4, 3, 1, &rng);
  CHECK(same_weights(apply_output_permutation(l, Permutation::identity(4)), l));
  const Layer s = apply_output_permutation(l, Permutation({1, 0, 2, 3}));
  const WeightMatrix a = l.weight_matrix(), b = s.weight_matrix();
  for (std::size_t j = 0; j < a.cols(); ++j) {
    CHECK(b(0, j) == a(1, j));
    CHECK(b(1, j) == a(0, j));
    CHECK(b(2, j) == a(2, j));
  }
  CHECK(s.bias[0] == l.bias[1]);
  const Permutation p = random_perm(rng, 4);
  CHECK(same_weights(apply_output_permutation(apply_output_permutation(l, p), p.inverse()), l));
  CHECK_THROWS_AS(apply_output_permutation(l, Permutation::identity(3)), ShapeError);
}

TEST_CASE("input permutation moves K*K column blocks") {
  Rng rng(3);
  const Layer l = make_conv("c", "x", 3, 2, 3, 1, &rng);
  CHECK(same_weights(apply_input_permutation(l, Permutation::identity(3)), l));
  const WeightMatrix a = l.weight_matrix();
  const WeightMatrix b = apply_input_permutation(l, Permutation({2, 1, 0})).weight_matrix();
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t t = 0; t < 9; ++t) {
      CHECK(b(r, t) == a(r, 18 + t));
      CHECK(b(r, 18 + t) == a(r, t));
      CHECK(b(r, 9 + t) == a(r, 9 + t));
    }
  // 1x1 kernels: a plain column reorder
  const Layer k1 = make_conv("k", "x", 4, 2, 1, 1, &rng);
  const Permutation p({3, 0, 2, 1});
  const WeightMatrix c = k1.weight_matrix(), d = apply_input_permutation(k1, p).weight_matrix();
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t j = 0; j < 4; ++j) CHECK(d(r, j) == c(r, p[j]));
  CHECK_THROWS_AS(apply_input_permutation(l, Permutation::identity(4)), ShapeError);
}

TEST_CASE("joint reordering preserves the float network") {
  Rng rng(4);
  const Tensor x = fixture_batch(4);
  for (const bool prepared : {true, false}) {
    const ModelGraph raw = load_bundle(fixture_dir() / "resnet20_tiny");
    const ModelGraph g = prepared ? prepare_for_quantization(raw) : raw;
    const Tensor ref = forward_float(g, x).at("fc");
    ModelGraph r = g;
    for (const auto& seg : g.segments) {
      std::vector<Permutation> perms;
      for (auto c : segment_slot_sizes(g, seg)) perms.push_back(random_perm(rng, c));
      r = joint_reorder(r, seg, perms);
    }
    CHECK(max_relative_change(forward_float(r, x).at("fc"), ref) <= 1e-5);
    // block outputs stay aligned with the shortcut
    for (const auto& seg : g.segments) {
      CHECK(max_relative_change(forward_float(r, x).at(seg.layers.back()), forward_float(g, x).at(seg.layers.back())) <=
            1e-5);
      CHECK(r.segments.front().permutations.size() == 1);
    }
  }
}

TEST_CASE("reordering composes and undoes") {
  Rng rng(5);
  const ModelGraph g = load_fixture_net();
  const Segment& seg = g.segments[3];
  const Permutation p = random_perm(rng, 16), q = random_perm(rng, 16);
  const ModelGraph once = joint_reorder(joint_reorder(g, seg, {p}), seg, {q});
  CHECK(once.segments[3].permutations.front() == p.then(q));
  const ModelGraph direct = joint_reorder(g, seg, {p.then(q)});
  for (const auto& id : seg.layers) CHECK(same_weights(once.layer(id), direct.layer(id)));
  const ModelGraph undone = joint_reorder(joint_reorder(g, seg, {p}), seg, {p.inverse()});
  for (const auto& id : seg.layers) CHECK(same_weights(undone.layer(id), g.layer(id)));
  CHECK(undone.segments[3].permutations.front().is_identity());
  CHECK_THROWS_AS(joint_reorder(g, seg, {}), ShapeError);
}

TEST_CASE("mutation") {
  Rng rng(6);
  CHECK(mutate(Permutation::identity(1), 30, rng).is_identity());
  for (int t = 0; t < 500; ++t) {
    const std::size_t n = 2 + uniform_index(rng, 30);
    const Permutation m = mutate(random_perm(rng, n), 1 + uniform_index(rng, 30), rng);
    REQUIRE(is_bijection(m.mapping()));
  }
  Rng a(99), b(99);
  const Permutation base = Permutation::identity(16);
  for (int t = 0; t < 10; ++t) CHECK(mutate(base, 30, a) == mutate(base, 30, b));
  // a single pair swaps exactly two positions
  Rng c(7);
  const Permutation one = mutate(base, 1, c);
  std::size_t moved = 0;
  for (std::size_t i = 0; i < 16; ++i) moved += one[i] != i;
  CHECK(moved == 2);
}

TEST_CASE("reorder configuration") {
  ReorderConfig c;
  CHECK(c.population == 40);
  CHECK(c.iterations == 5);
  CHECK(c.max_pairs == 30);
  CHECK(c.parent_count() == 20);
  c.population = 1;
  CHECK_THROWS_AS(c.validate(), InputError);
  c = ReorderConfig{};
  c.max_pairs = 0;
  CHECK_THROWS_AS(c.validate(), InputError);
  c = ReorderConfig{};
  c.iterations = 0;
  CHECK_THROWS_AS(c.validate(), InputError);
}

TEST_CASE("lossless block: identity wins with score zero") {
  // 1x1 convs with one weight of 6 codes per row at step 2^-4 and inputs on a
  // 2^-3 grid quantize exactly for a 7-point grid, under any reordering.
  BlockProblem block;
  for (const char* id : {"a", "b"}) {
    Layer l = make_conv(id, "x", 4, 4, 1, 1, nullptr);
    std::vector<float> w(16, 0.0f);
    for (std::size_t c = 0; c < 4; ++c) w[c * 4 + c] = 0.375f;
    l.weight = Tensor({4, 4, 1, 1}, w);
    block.chain.push_back(l);
  }
  block.chain[1].inputs = {"a"};
  block.segment_positions = {0, 1};
  Rng rng(8);
  block.input = Tensor({2, 4, 3, 3});
  for (std::size_t i = 0; i < block.input.size(); ++i) {
    block.input[i] = static_cast<float>(static_cast<int>(uniform_index(rng, 193)) - 96) * 0.125f;
  }
  block.input[0] = 12.0f;
  const Tensor mid = run_float_node(block.chain[0], {&block.input});
  block.reference = run_float_node(block.chain[1], {&mid});

  CalibConfig calib;
  calib.grid_size = 7;
  ReorderConfig cfg;
  cfg.population = 2;
  cfg.iterations = 1;
  cfg.seed = 3;
  const EaResult r = ea_search(block, GranularityConfig::channelwise(), cfg, calib);
  CHECK(r.identity_score == 0.0);
  CHECK(r.best_score == 0.0);
  CHECK(r.best.front().is_identity());
}

TEST_CASE("evolutionary search on a fixture block") {
  const ModelGraph g = load_fixture_net();
  const ActivationMap acts = forward_float(g, fixture_batch(8));
  const BlockProblem block = BlockProblem::from_graph(g, g.segments[0], acts);
  CHECK(block.chain.size() == 2);
  CHECK(block.slot_sizes() == std::vector<std::size_t>{8});
  const auto gran = GranularityConfig::method1(4, 36);
  ReorderConfig cfg;
  cfg.population = 8;
  cfg.iterations = 3;
  cfg.seed = 7;
  const EaResult r = ea_search(block, gran, cfg, quick_calib());
  CHECK(r.best_score >= r.identity_score);
  REQUIRE(r.best_history.size() == 4);
  for (std::size_t i = 1; i < r.best_history.size(); ++i) CHECK(r.best_history[i] >= r.best_history[i - 1]);
  CHECK(r.identity_score == block_score(block, {Permutation::identity(8)}, gran, quick_calib()));
  CHECK(r.best_score == block_score(block, r.best, gran, quick_calib()));
  CHECK(r.evaluations <= cfg.population + cfg.iterations * (cfg.population - cfg.parent_count()));

  const EaResult threaded = ea_search(block, gran, cfg, quick_calib(), 3);
  CHECK(threaded.best == r.best);
  CHECK(threaded.best_history == r.best_history);
  cfg.seed = 8;
  const EaResult other = ea_search(block, gran, cfg, quick_calib());
  CHECK(other.identity_score == r.identity_score);
  CHECK(other.best_score >= other.identity_score);
}
