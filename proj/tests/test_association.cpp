#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "crisp/association.hpp"
#include "crisp/rng.hpp"

using namespace crisp;

namespace {

FlowField uniform_flow(int W, int H, float du, float dv, bool covisible = true) {
  FlowField f;
  f.source = 0;
  f.target = 1;
  f.width = W;
  f.height = H;
  f.flow.assign(static_cast<std::size_t>(W * H), Eigen::Vector2f(du, dv));
  f.covisible.assign(static_cast<std::size_t>(W * H), covisible ? 1 : 0);
  return f;
}

Segment segment(int frame, std::vector<int> members, const Vec3& normal = Vec3::UnitZ(),
                const Vec3& centroid = Vec3::Zero()) {
  Segment s;
  s.frame = frame;
  std::sort(members.begin(), members.end());
  s.members = std::move(members);
  s.mean_normal = normal.normalized();
  s.centroid = centroid;
  return s;
}

std::vector<int> range(int begin, int end) {
  std::vector<int> v(static_cast<std::size_t>(end - begin));
  std::iota(v.begin(), v.end(), begin);
  return v;
}

SegmentGraph graph_of(std::size_t nodes, std::vector<SegmentEdge> edges) {
  SegmentGraph g;
  for (std::size_t i = 0; i < nodes; ++i) g.nodes.push_back(segment(static_cast<int>(i), {0}));
  g.edges = std::move(edges);
  return g;
}

SegmentEdge edge(std::size_t a, std::size_t b, double overlap, double cosine) {
  return {a, b, PairScore{overlap, cosine}};
}

}  // namespace

TEST_CASE("warp_segment with zero flow is the identity") {
  const Segment s = segment(0, {3, 7, 12, 40, 63});
  CHECK(warp_segment(s, uniform_flow(8, 8, 0, 0)) == s.members);
}

TEST_CASE("warp_segment shifts by a uniform flow and drops pixels leaving the image") {
  // columns 0..7 of row 2 in an 8-wide image
  const Segment s = segment(0, range(16, 24));
  const auto out = warp_segment(s, uniform_flow(8, 8, 5, 0));
  CHECK(out == std::vector<int>{21, 22, 23});
  // sub-pixel flow rounds to the nearest pixel
  CHECK(warp_segment(segment(0, {0}), uniform_flow(8, 8, 1.4f, 0.6f)) == std::vector<int>{9});
}

TEST_CASE("warp_segment keeps only covisible pixels") {
  const Segment s = segment(0, range(0, 64));
  CHECK(warp_segment(s, uniform_flow(8, 8, 0, 0, false)).empty());
  FlowField f = uniform_flow(8, 8, 0, 0);
  f.covisible[5] = 0;
  CHECK(warp_segment(s, f).size() == 63);
}

TEST_CASE("warp_segment requires the flow's source frame") {
  CHECK_THROWS_AS(warp_segment(segment(2, {0}), uniform_flow(4, 4, 0, 0)), Error);
}

TEST_CASE("score_pair overlap and cosine") {
  const Segment a = segment(0, range(0, 100));
  CHECK(score_pair(a.members, a, a).overlap == 1.0);
  CHECK(score_pair(a.members, a, segment(1, range(200, 300))).overlap == 0.0);

  // 100 warped pixels, half of them inside a 400-pixel target
  const Segment target = segment(1, range(50, 450));
  const std::vector<int> warped = range(0, 100);
  const PairScore s = score_pair(warped, a, target);
  const double expected = 50.0 / std::min(100.0, 400.0);
  CHECK(s.overlap == doctest::Approx(expected));
  CHECK(s.overlap == doctest::Approx(0.5));
  CHECK(score_pair(warped, a, target, OverlapMode::Iou).overlap == doctest::Approx(50.0 / 450.0));

  const Segment tilted = segment(1, range(0, 10), Vec3(1, 0, 1));
  CHECK(score_pair(warped, a, tilted).cosine == doctest::Approx(std::sqrt(0.5)));
}

TEST_CASE("merge_groups joins two views of one plane") {
  // a plane seen as two segments in each of two frames
  SegmentGraph g = graph_of(4, {edge(0, 2, 0.9, 0.99), edge(1, 3, 0.9, 0.99), edge(0, 3, 0.9, 0.99)});
  g = merge_groups(std::move(g), 0.5, std::cos(15.0 * std::numbers::pi / 180.0));
  CHECK(g.group_count == 1);
  CHECK(g.group == std::vector<int>{0, 0, 0, 0});
}

TEST_CASE("merge_groups leaves singletons when no edge passes") {
  SegmentGraph g = graph_of(3, {edge(0, 1, 0.4, 0.99), edge(1, 2, 0.9, 0.5)});
  g = merge_groups(std::move(g), 0.5, 0.96);
  CHECK(g.group_count == 3);
  CHECK(g.group == std::vector<int>{0, 1, 2});
}

TEST_CASE("merge_groups is transitive") {
  SegmentGraph g = graph_of(3, {edge(0, 1, 0.8, 1.0), edge(1, 2, 0.8, 1.0)});
  g = merge_groups(std::move(g), 0.5, 0.96);
  CHECK(g.group_count == 1);
  const auto members = g.group_members();
  CHECK(members[0] == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("merge_groups ignores edges between parallel but offset segments") {
  SegmentGraph g;
  g.nodes.push_back(segment(0, {0}, Vec3::UnitZ(), Vec3(0, 0, 0.0)));
  g.nodes.push_back(segment(1, {0}, Vec3::UnitZ(), Vec3(0.5, 0, 0.2)));
  g.nodes.push_back(segment(1, {1}, Vec3::UnitZ(), Vec3(3.0, 1, 0.01)));
  g.edges = {edge(0, 1, 0.9, 1.0), edge(0, 2, 0.9, 1.0)};
  const SegmentGraph gated = merge_groups(g, 0.5, 0.96, 0.1);
  CHECK(gated.group == std::vector<int>{0, 1, 0});
  const SegmentGraph open = merge_groups(g, 0.5, 0.96);
  CHECK(open.group_count == 1);
}

TEST_CASE("merge_groups does not depend on edge order") {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 30;
    std::vector<SegmentEdge> edges;
    for (int e = 0; e < 40; ++e) {
      edges.push_back(edge(rng.index(n), rng.index(n), rng.uniform(), rng.uniform(0.8, 1.0)));
    }
    const SegmentGraph base = merge_groups(graph_of(n, edges), 0.5, 0.9);
    std::vector<SegmentEdge> shuffled = edges;
    for (std::size_t i = shuffled.size(); i > 1; --i) std::swap(shuffled[i - 1], shuffled[rng.index(i)]);
    const SegmentGraph other = merge_groups(graph_of(n, shuffled), 0.5, 0.9);
    CHECK(base.group == other.group);
    CHECK(base.group_count == other.group_count);

    // lowering either threshold never adds groups
    CHECK(merge_groups(graph_of(n, edges), 0.3, 0.9).group_count <= base.group_count);
    CHECK(merge_groups(graph_of(n, edges), 0.5, 0.85).group_count <= base.group_count);
  }
}

TEST_CASE("build_segment_graph scores edges only across configured strides") {
  const int W = 8, H = 8;
  std::vector<std::vector<Segment>> frames(3);
  for (int t = 0; t < 3; ++t) {
    frames[static_cast<std::size_t>(t)].push_back(segment(t, range(0, 32)));
    frames[static_cast<std::size_t>(t)].push_back(segment(t, range(32, 64), Vec3::UnitX()));
  }
  std::vector<FlowField> flows;
  for (auto [i, j] : {std::pair(0, 1), std::pair(1, 2), std::pair(0, 2)}) {
    FlowField f = uniform_flow(W, H, 0, 0);
    f.source = i;
    f.target = j;
    flows.push_back(f);
  }
  AssociationOptions o;
  o.strides = {1};
  const SegmentGraph g = build_segment_graph(frames, flows, W, H, o);
  CHECK(g.nodes.size() == 6);
  CHECK(g.group_count == 6);
  CHECK(g.edges.size() == 4);
  for (const auto& e : g.edges) {
    CHECK(g.nodes[e.b].frame - g.nodes[e.a].frame == 1);
    CHECK(e.score.overlap == 1.0);
  }
  const SegmentGraph merged = merge_groups(g, o.min_overlap, o.min_cosine);
  CHECK(merged.group_count == 2);

  o.strides = {1, 2};
  CHECK(build_segment_graph(frames, flows, W, H, o, 2).edges.size() == 6);
}
