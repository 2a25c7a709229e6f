#include "crisp/association.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "crisp/parallel.hpp"

namespace crisp {

std::vector<int> warp_segment(const Segment& segment, const FlowField& flow) {
  if (segment.frame != flow.source) {
    throw Error(ErrorCode::InvalidArgument, "segment frame does not match flow source");
  }
  std::vector<int> out;
  out.reserve(segment.members.size());
  for (int p : segment.members) {
    const auto i = static_cast<std::size_t>(p);
    if (!flow.covisible[i]) continue;
    const int u = p % flow.width;
    const int v = p / flow.width;
    const long tu = std::lround(static_cast<double>(u) + flow.flow[i].x());
    const long tv = std::lround(static_cast<double>(v) + flow.flow[i].y());
    if (tu < 0 || tv < 0 || tu >= flow.width || tv >= flow.height) continue;
    out.push_back(static_cast<int>(tv * flow.width + tu));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

namespace {

double overlap_ratio(std::size_t inter, std::size_t a, std::size_t b, OverlapMode mode) {
  if (inter == 0) return 0.0;
  if (mode == OverlapMode::Iou) return static_cast<double>(inter) / static_cast<double>(a + b - inter);
  return static_cast<double>(inter) / static_cast<double>(std::min(a, b));
}

}  // namespace

PairScore score_pair(std::span<const int> warped, const Segment& source, const Segment& target,
                     OverlapMode mode) {
  std::size_t inter = 0;
  auto it = target.members.begin();
  for (int p : warped) {
    it = std::lower_bound(it, target.members.end(), p);
    if (it == target.members.end()) break;
    if (*it == p) ++inter;
  }
  PairScore s;
  s.overlap = overlap_ratio(inter, warped.size(), target.members.size(), mode);
  s.cosine = std::clamp(source.mean_normal.dot(target.mean_normal), -1.0, 1.0);
  return s;
}

std::vector<std::vector<std::size_t>> SegmentGraph::group_members() const {
  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(group_count));
  for (std::size_t i = 0; i < group.size(); ++i) out[static_cast<std::size_t>(group[i])].push_back(i);
  return out;
}

SegmentGraph build_segment_graph(std::vector<std::vector<Segment>> segments_by_frame,
                                 std::span<const FlowField> flows, int width, int height,
                                 const AssociationOptions& options, int workers) {
  SegmentGraph graph;
  const std::size_t T = segments_by_frame.size();
  std::vector<std::size_t> first(T + 1, 0);
  for (std::size_t t = 0; t < T; ++t) first[t + 1] = first[t] + segments_by_frame[t].size();
  for (auto& frame : segments_by_frame) {
    for (auto& s : frame) graph.nodes.push_back(std::move(s));
  }

  // Per-frame owner image: pixel -> local segment index.
  const std::size_t N = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  std::vector<std::vector<int>> owner(T, std::vector<int>(N, -1));
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t k = first[t]; k < first[t + 1]; ++k) {
      for (int p : graph.nodes[k].members) owner[t][static_cast<std::size_t>(p)] = static_cast<int>(k - first[t]);
    }
  }

  std::vector<const FlowField*> used;
  for (const auto& f : flows) {
    const int gap = std::abs(f.target - f.source);
    if (static_cast<std::size_t>(f.source) >= T || static_cast<std::size_t>(f.target) >= T) continue;
    if (std::find(options.strides.begin(), options.strides.end(), gap) != options.strides.end()) {
      used.push_back(&f);
    }
  }
  std::sort(used.begin(), used.end(), [](const FlowField* x, const FlowField* y) {
    return std::pair(x->source, x->target) < std::pair(y->source, y->target);
  });

  std::vector<std::vector<SegmentEdge>> per_flow(used.size());
  parallel_for(used.size(), workers, [&](std::size_t fi) {
    const FlowField& flow = *used[fi];
    const auto i = static_cast<std::size_t>(flow.source);
    const auto j = static_cast<std::size_t>(flow.target);
    for (std::size_t a = first[i]; a < first[i + 1]; ++a) {
      const std::vector<int> warped = warp_segment(graph.nodes[a], flow);
      std::map<int, std::size_t> hits;
      for (int p : warped) {
        const int b = owner[j][static_cast<std::size_t>(p)];
        if (b >= 0) ++hits[b];
      }
      for (const auto& [b, inter] : hits) {
        const std::size_t node_b = first[j] + static_cast<std::size_t>(b);
        const Segment& target = graph.nodes[node_b];
        PairScore s;
        s.overlap = overlap_ratio(inter, warped.size(), target.members.size(), options.mode);
        s.cosine = std::clamp(graph.nodes[a].mean_normal.dot(target.mean_normal), -1.0, 1.0);
        per_flow[fi].push_back({a, node_b, s});
      }
    }
  });
  for (auto& edges : per_flow) {
    graph.edges.insert(graph.edges.end(), edges.begin(), edges.end());
  }

  graph.group.resize(graph.nodes.size());
  std::iota(graph.group.begin(), graph.group.end(), 0);
  graph.group_count = static_cast<int>(graph.nodes.size());
  return graph;
}

SegmentGraph merge_groups(SegmentGraph graph, double min_overlap, double min_cosine, double max_offset) {
  const std::size_t n = graph.nodes.size();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&parent](std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  for (const auto& e : graph.edges) {
    if (e.score.overlap < min_overlap || e.score.cosine < min_cosine) continue;
    const Segment& sa = graph.nodes[e.a];
    const Segment& sb = graph.nodes[e.b];
    const Vec3 gap = sb.centroid - sa.centroid;
    if (std::abs(sa.mean_normal.dot(gap)) > max_offset || std::abs(sb.mean_normal.dot(gap)) > max_offset) continue;
    std::size_t ra = find(e.a);
    std::size_t rb = find(e.b);
    if (ra == rb) continue;
    if (rb < ra) std::swap(ra, rb);
    parent[rb] = ra;
  }
  graph.group.assign(n, -1);
  std::vector<int> root_group(n, -1);
  graph.group_count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = find(i);
    if (root_group[r] < 0) root_group[r] = graph.group_count++;
    graph.group[i] = root_group[r];
  }
  return graph;
}

}  // namespace crisp
