#pragma once

// Cross-frame association of planar segments through optical flow.

#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "crisp/segmentation.hpp"

namespace crisp {

/// Member pixels moved by their flow vector and rounded to the nearest pixel;
/// kept when inside the image and covisible. Sorted and de-duplicated.
std::vector<int> warp_segment(const Segment& segment, const FlowField& flow);

enum class OverlapMode {
  MinSize,  ///< |A n B| / min(|A|, |B|)
  Iou,      ///< |A n B| / |A u B|
};

struct PairScore {
  double overlap = 0.0;  ///< rho in [0, 1]
  double cosine = 0.0;   ///< gamma in [-1, 1]
};

/// `warped` must be sorted. Cosine is between the two segments' mean normals.
PairScore score_pair(std::span<const int> warped, const Segment& source, const Segment& target,
                     OverlapMode mode = OverlapMode::MinSize);

struct SegmentEdge {
  std::size_t a = 0;  ///< node in the earlier-listed frame
  std::size_t b = 0;
  PairScore score;
};

struct SegmentGraph {
  std::vector<Segment> nodes;
  std::vector<SegmentEdge> edges;
  std::vector<int> group;  ///< node -> group id, dense in [0, group_count)
  int group_count = 0;

  std::vector<std::vector<std::size_t>> group_members() const;
};

struct AssociationOptions {
  std::vector<int> strides{1, 5};
  double min_overlap = 0.5;
  double min_cosine = std::cos(15.0 * std::numbers::pi / 180.0);
  OverlapMode mode = OverlapMode::MinSize;
};

/// Scores every segment pair across each flow whose frame gap is in
/// `strides`. Only pairs with non-zero overlap become edges. Groups are left
/// as singletons.
SegmentGraph build_segment_graph(std::vector<std::vector<Segment>> segments_by_frame,
                                 std::span<const FlowField> flows, int width, int height,
                                 const AssociationOptions& options, int workers = 1);

/// Union-find over edges with overlap >= min_overlap and cosine >=
/// min_cosine. Edges whose segments are parallel but offset (either centroid
/// farther than max_offset from the other's plane) are ignored. Group ids
/// follow the lowest node index in each group, so the result does not depend
/// on edge order.
SegmentGraph merge_groups(SegmentGraph graph, double min_overlap, double min_cosine,
                          double max_offset = std::numeric_limits<double>::infinity());

}  // namespace crisp
