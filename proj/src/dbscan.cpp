#include "crisp/dbscan.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <unordered_map>

namespace crisp {
namespace {

struct CellKey {
  std::int32_t x, y, z;
  bool operator==(const CellKey&) const = default;
};

struct CellKeyHash {
  std::size_t operator()(const CellKey& k) const noexcept {
    std::uint64_t h = static_cast<std::uint32_t>(k.x);
    h = h * 0x9E3779B97F4A7C15ull ^ static_cast<std::uint32_t>(k.y);
    h = h * 0x9E3779B97F4A7C15ull ^ static_cast<std::uint32_t>(k.z);
    return static_cast<std::size_t>(h ^ (h >> 29));
  }
};

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (b < a) std::swap(a, b);
    parent_[b] = a;
  }

 private:
  std::vector<std::size_t> parent_;
};

}  // namespace

DbscanResult dbscan(std::span<const Vec3> points, double eps, int min_points) {
  const std::size_t n = points.size();
  DbscanResult result;
  result.labels.assign(n, kNoise);
  if (n == 0) return result;
  if (!(eps > 0.0)) throw Error(ErrorCode::InvalidArgument, "dbscan eps must be positive");

  const double eps2 = eps * eps;
  // Strictly below eps/sqrt(3): same-cell pairs are guaranteed neighbors even
  // after rounding.
  const double side = eps / std::sqrt(3.0) * (1.0 - 1e-9);
  auto key_of = [side](const Vec3& p) {
    return CellKey{static_cast<std::int32_t>(std::floor(p.x() / side)),
                   static_cast<std::int32_t>(std::floor(p.y() / side)),
                   static_cast<std::int32_t>(std::floor(p.z() / side))};
  };

  // Cells as contiguous index ranges, points within a cell in index order.
  std::vector<CellKey> keys(n);
  for (std::size_t i = 0; i < n; ++i) keys[i] = key_of(points[i]);
  std::unordered_map<CellKey, std::uint32_t, CellKeyHash> cell_id;
  std::vector<std::uint32_t> point_cell(n);
  std::vector<CellKey> cell_keys;
  for (std::size_t i = 0; i < n; ++i) {
    auto [it, inserted] = cell_id.try_emplace(keys[i], static_cast<std::uint32_t>(cell_keys.size()));
    if (inserted) cell_keys.push_back(keys[i]);
    point_cell[i] = it->second;
  }
  const std::size_t cells = cell_keys.size();
  std::vector<std::uint32_t> cell_start(cells + 1, 0);
  for (std::size_t i = 0; i < n; ++i) ++cell_start[point_cell[i] + 1];
  std::partial_sum(cell_start.begin(), cell_start.end(), cell_start.begin());
  std::vector<std::uint32_t> members(n);
  {
    std::vector<std::uint32_t> fill(cell_start.begin(), cell_start.end() - 1);
    for (std::size_t i = 0; i < n; ++i) members[fill[point_cell[i]]++] = static_cast<std::uint32_t>(i);
  }

  // Neighbor cells within reach: offsets in [-2, 2]^3.
  std::vector<std::vector<std::uint32_t>> neighbor_cells(cells);
  for (std::size_t c = 0; c < cells; ++c) {
    const CellKey k = cell_keys[c];
    for (int dx = -2; dx <= 2; ++dx) {
      for (int dy = -2; dy <= 2; ++dy) {
        for (int dz = -2; dz <= 2; ++dz) {
          auto it = cell_id.find(CellKey{k.x + dx, k.y + dy, k.z + dz});
          if (it != cell_id.end()) neighbor_cells[c].push_back(it->second);
        }
      }
    }
  }

  auto is_neighbor = [&](std::size_t a, std::size_t b) {
    return (points[a] - points[b]).squaredNorm() <= eps2;
  };

  // Core points.
  std::vector<std::uint8_t> core(n, 0);
  const auto need = static_cast<std::size_t>(std::max(min_points, 0));
  for (std::size_t c = 0; c < cells; ++c) {
    const std::size_t size = cell_start[c + 1] - cell_start[c];
    if (size >= need) {
      for (std::size_t m = cell_start[c]; m < cell_start[c + 1]; ++m) core[members[m]] = 1;
      continue;
    }
    for (std::size_t m = cell_start[c]; m < cell_start[c + 1]; ++m) {
      const std::uint32_t p = members[m];
      std::size_t count = 0;
      for (std::uint32_t nc : neighbor_cells[c]) {
        for (std::size_t q = cell_start[nc]; q < cell_start[nc + 1] && count < need; ++q) {
          if (is_neighbor(p, members[q])) ++count;
        }
        if (count >= need) break;
      }
      core[p] = count >= need ? 1 : 0;
    }
  }

  // Connect cores: all cores of a cell are mutually adjacent, so link each
  // cell's cores to its first core, then test cell pairs not yet joined.
  UnionFind uf(n);
  std::vector<std::int64_t> first_core(cells, -1);
  for (std::size_t c = 0; c < cells; ++c) {
    for (std::size_t m = cell_start[c]; m < cell_start[c + 1]; ++m) {
      const std::uint32_t p = members[m];
      if (!core[p]) continue;
      if (first_core[c] < 0) {
        first_core[c] = p;
      } else {
        uf.unite(static_cast<std::size_t>(first_core[c]), p);
      }
    }
  }
  for (std::size_t c = 0; c < cells; ++c) {
    if (first_core[c] < 0) continue;
    for (std::uint32_t nc : neighbor_cells[c]) {
      if (nc <= c || first_core[nc] < 0) continue;
      if (uf.find(static_cast<std::size_t>(first_core[c])) ==
          uf.find(static_cast<std::size_t>(first_core[nc]))) {
        continue;
      }
      bool linked = false;
      for (std::size_t a = cell_start[c]; a < cell_start[c + 1] && !linked; ++a) {
        if (!core[members[a]]) continue;
        for (std::size_t b = cell_start[nc]; b < cell_start[nc + 1]; ++b) {
          if (core[members[b]] && is_neighbor(members[a], members[b])) {
            linked = true;
            break;
          }
        }
      }
      if (linked) uf.unite(static_cast<std::size_t>(first_core[c]), static_cast<std::size_t>(first_core[nc]));
    }
  }

  // Cluster ids by lowest core index: union-find roots are the minimum index
  // of their set, so scanning in index order visits roots in that order.
  std::vector<int> root_label(n, kNoise);
  for (std::size_t i = 0; i < n; ++i) {
    if (!core[i]) continue;
    const std::size_t r = uf.find(i);
    if (root_label[r] == kNoise) root_label[r] = result.cluster_count++;
    result.labels[i] = root_label[r];
  }

  // Border points: lowest-index core neighbor.
  for (std::size_t c = 0; c < cells; ++c) {
    for (std::size_t m = cell_start[c]; m < cell_start[c + 1]; ++m) {
      const std::uint32_t p = members[m];
      if (core[p]) continue;
      std::int64_t best = -1;
      for (std::uint32_t nc : neighbor_cells[c]) {
        for (std::size_t q = cell_start[nc]; q < cell_start[nc + 1]; ++q) {
          const std::uint32_t o = members[q];
          if (best >= 0 && o >= best) break;
          if (core[o] && is_neighbor(p, o)) {
            best = o;
            break;
          }
        }
      }
      if (best >= 0) result.labels[p] = result.labels[static_cast<std::size_t>(best)];
    }
  }
  return result;
}

}  // namespace crisp
