#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "crackseg/tensor.hpp"

namespace crackseg {

enum class ScanStrategy { Parallel, Diagonal, ParallelSnake, DiagonalSnake, Bidirectional, Sass };

inline const char* to_string(ScanStrategy s) {
  switch (s) {
    case ScanStrategy::Parallel: return "parallel";
    case ScanStrategy::Diagonal: return "diagonal";
    case ScanStrategy::ParallelSnake: return "parallel-snake";
    case ScanStrategy::DiagonalSnake: return "diagonal-snake";
    case ScanStrategy::Bidirectional: return "bidirectional";
    case ScanStrategy::Sass: return "sass";
  }
  return "?";
}

inline ScanStrategy scan_strategy_from_string(const std::string& name) {
  if (name == "parallel") return ScanStrategy::Parallel;
  if (name == "diagonal" || name == "diag") return ScanStrategy::Diagonal;
  if (name == "parallel-snake" || name == "parasna") return ScanStrategy::ParallelSnake;
  if (name == "diagonal-snake" || name == "diagsna") return ScanStrategy::DiagonalSnake;
  if (name == "bidirectional") return ScanStrategy::Bidirectional;
  if (name == "sass") return ScanStrategy::Sass;
  throw ConfigError("unknown scan strategy '" + name + "'");
}

enum class StepDir : uint8_t { Start, Up, Down, Left, Right, DiagStep };

inline const char* to_string(StepDir d) {
  switch (d) {
    case StepDir::Start: return "start";
    case StepDir::Up: return "up";
    case StepDir::Down: return "down";
    case StepDir::Left: return "left";
    case StepDir::Right: return "right";
    case StepDir::DiagStep: return "diag_step";
  }
  return "?";
}

/// One traversal of an HxW grid: the visit order, its inverse, and the
/// per-step movement code derived from consecutive cell displacements.
struct ScanPath {
  int height = 0;
  int width = 0;
  std::vector<int> order;        // order[t] = flat cell index visited at step t
  std::vector<int> inverse;      // inverse[order[t]] = t
  std::vector<StepDir> directions;
};

struct ScanPathSet {
  ScanStrategy strategy = ScanStrategy::Sass;
  int height = 0;
  int width = 0;
  std::vector<ScanPath> paths;
};

namespace detail {

using Cell = std::pair<int, int>;  // (row, col)

inline ScanPath path_from_cells(const std::vector<Cell>& cells, int h, int w) {
  ScanPath p;
  p.height = h;
  p.width = w;
  p.order.reserve(cells.size());
  p.directions.reserve(cells.size());
  p.inverse.assign(static_cast<size_t>(h) * w, -1);
  for (size_t t = 0; t < cells.size(); ++t) {
    auto [i, j] = cells[t];
    int idx = i * w + j;
    p.order.push_back(idx);
    p.inverse[idx] = static_cast<int>(t);
    if (t == 0) {
      p.directions.push_back(StepDir::Start);
    } else {
      int di = i - cells[t - 1].first;
      int dj = j - cells[t - 1].second;
      if (di != 0 && dj != 0)
        p.directions.push_back(StepDir::DiagStep);
      else if (di > 0)
        p.directions.push_back(StepDir::Down);
      else if (di < 0)
        p.directions.push_back(StepDir::Up);
      else if (dj > 0)
        p.directions.push_back(StepDir::Right);
      else
        p.directions.push_back(StepDir::Left);
    }
  }
  return p;
}

inline std::vector<Cell> reversed_cells(std::vector<Cell> cells) {
  std::reverse(cells.begin(), cells.end());
  return cells;
}

inline std::vector<Cell> mirrored_cells(std::vector<Cell> cells, int w) {
  for (auto& [i, j] : cells) j = w - 1 - j;
  return cells;
}

// Row-major raster, every row left-to-right.
inline std::vector<Cell> raster_cells(int h, int w) {
  std::vector<Cell> c;
  c.reserve(static_cast<size_t>(h) * w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) c.push_back({i, j});
  return c;
}

// Column-major raster, every column top-to-bottom.
inline std::vector<Cell> column_raster_cells(int h, int w) {
  std::vector<Cell> c;
  c.reserve(static_cast<size_t>(h) * w);
  for (int j = 0; j < w; ++j)
    for (int i = 0; i < h; ++i) c.push_back({i, j});
  return c;
}

// Vertical snake from (0,0): column 0 top->bottom, column 1 bottom->top, ...
inline std::vector<Cell> vertical_snake_cells(int h, int w) {
  std::vector<Cell> c;
  c.reserve(static_cast<size_t>(h) * w);
  for (int j = 0; j < w; ++j) {
    if (j % 2 == 0)
      for (int i = 0; i < h; ++i) c.push_back({i, j});
    else
      for (int i = h - 1; i >= 0; --i) c.push_back({i, j});
  }
  return c;
}

// Horizontal snake over rows bottom-to-top. Starts at (H-1, W-1) when H is
// odd, else (H-1, 0); either way it finishes at (0,0).
inline std::vector<Cell> horizontal_snake_cells(int h, int w) {
  std::vector<Cell> c;
  c.reserve(static_cast<size_t>(h) * w);
  bool right_to_left = (h % 2 == 1);
  for (int i = h - 1; i >= 0; --i) {
    if (right_to_left)
      for (int j = w - 1; j >= 0; --j) c.push_back({i, j});
    else
      for (int j = 0; j < w; ++j) c.push_back({i, j});
    right_to_left = !right_to_left;
  }
  return c;
}

// Anti-diagonal snake from (0,0): diagonal d = {(i,j): i+j=d}, direction
// alternating with the parity of d so consecutive cells stay adjacent.
inline std::vector<Cell> diagonal_snake_cells(int h, int w) {
  std::vector<Cell> c;
  c.reserve(static_cast<size_t>(h) * w);
  for (int d = 0; d <= h + w - 2; ++d) {
    if (d % 2 == 1) {
      // top-right towards bottom-left: i ascending
      for (int i = std::max(0, d - w + 1); i <= std::min(d, h - 1); ++i) c.push_back({i, d - i});
    } else {
      // bottom-left towards top-right: i descending
      for (int i = std::min(d, h - 1); i >= std::max(0, d - w + 1); --i) c.push_back({i, d - i});
    }
  }
  return c;
}

inline std::vector<std::vector<Cell>> strategy_cells(ScanStrategy s, int h, int w) {
  switch (s) {
    case ScanStrategy::Parallel: {
      auto r = raster_cells(h, w);
      auto cr = column_raster_cells(h, w);
      return {r, cr, reversed_cells(r), reversed_cells(cr)};
    }
    case ScanStrategy::Bidirectional: {
      auto r = raster_cells(h, w);
      auto cr = column_raster_cells(h, w);
      return {r, reversed_cells(r), cr, reversed_cells(cr)};
    }
    case ScanStrategy::Diagonal: {
      // unidirectional anti-diagonals: every diagonal top-right -> bottom-left
      std::vector<Cell> d1;
      d1.reserve(static_cast<size_t>(h) * w);
      for (int d = 0; d <= h + w - 2; ++d)
        for (int i = std::max(0, d - w + 1); i <= std::min(d, h - 1); ++i) d1.push_back({i, d - i});
      auto d2 = mirrored_cells(d1, w);
      return {d1, d2, reversed_cells(d1), reversed_cells(d2)};
    }
    case ScanStrategy::ParallelSnake: {
      auto v = vertical_snake_cells(h, w);
      auto hs = horizontal_snake_cells(h, w);
      return {v, hs, reversed_cells(v), reversed_cells(hs)};
    }
    case ScanStrategy::DiagonalSnake: {
      auto d = diagonal_snake_cells(h, w);
      auto m = mirrored_cells(d, w);
      return {d, m, reversed_cells(d), reversed_cells(m)};
    }
    case ScanStrategy::Sass: {
      // two parallel snakes + two diagonal snakes
      return {vertical_snake_cells(h, w), horizontal_snake_cells(h, w), diagonal_snake_cells(h, w),
              mirrored_cells(diagonal_snake_cells(h, w), w)};
    }
  }
  throw ConfigError("unhandled scan strategy");
}

}  // namespace detail

/// Builds the path set for a strategy. With num_paths=2, SASS keeps its first
/// parallel snake and first diagonal snake; other strategies keep the first
/// two paths.
inline ScanPathSet generate_scan_paths(ScanStrategy strategy, int h, int w, int num_paths = 4) {
  if (h < 1 || w < 1)
    throw ConfigError("generate_scan_paths: grid extent must be >= 1, got " + std::to_string(h) + "x" +
                      std::to_string(w));
  if (num_paths != 2 && num_paths != 4)
    throw ConfigError("generate_scan_paths: num_paths must be 2 or 4, got " + std::to_string(num_paths));
  auto cells = detail::strategy_cells(strategy, h, w);
  ScanPathSet set;
  set.strategy = strategy;
  set.height = h;
  set.width = w;
  std::vector<int> keep;
  if (num_paths == 4)
    keep = {0, 1, 2, 3};
  else if (strategy == ScanStrategy::Sass)
    keep = {0, 2};
  else
    keep = {0, 1};
  for (int i : keep) set.paths.push_back(detail::path_from_cells(cells[i], h, w));
  return set;
}

/// Process-wide cache: generation is pure, so (strategy, H, W, num) reuse is safe.
inline const ScanPathSet& cached_scan_paths(ScanStrategy strategy, int h, int w, int num_paths = 4) {
  static std::map<std::tuple<int, int, int, int>, ScanPathSet> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  auto key = std::make_tuple(static_cast<int>(strategy), h, w, num_paths);
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, generate_scan_paths(strategy, h, w, num_paths)).first;
  return it->second;
}

/// Reorders sequence rows into visit order: out[t] = seq[order[t]].
inline Tensor apply_path(const ScanPath& path, const Tensor& seq) {
  detail::require_defined("apply_path", seq);
  if (seq.ndim() < 1 || seq.dim(0) != static_cast<int>(path.order.size()))
    throw PathError("apply_path: sequence length " + std::to_string(seq.defined() ? seq.dim(0) : -1) +
                    " does not match path length " + std::to_string(path.order.size()));
  return permute_rows(seq, path.order);
}

/// Inverse reorder: unapply_path(path, apply_path(path, seq)) == seq.
inline Tensor unapply_path(const ScanPath& path, const Tensor& seq) {
  detail::require_defined("unapply_path", seq);
  if (seq.ndim() < 1 || seq.dim(0) != static_cast<int>(path.inverse.size()))
    throw PathError("unapply_path: sequence length " + std::to_string(seq.defined() ? seq.dim(0) : -1) +
                    " does not match path length " + std::to_string(path.inverse.size()));
  return permute_rows(seq, path.inverse);
}

}  // namespace crackseg
