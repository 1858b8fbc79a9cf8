#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>

#include "crackseg/scan.hpp"
#include "oracles.hpp"

using namespace crackseg;

namespace {

const std::vector<ScanStrategy> kAllStrategies = {
    ScanStrategy::Parallel,     ScanStrategy::Diagonal,      ScanStrategy::ParallelSnake,
    ScanStrategy::DiagonalSnake, ScanStrategy::Bidirectional, ScanStrategy::Sass};

bool is_permutation_of_range(const std::vector<int>& order, int n) {
  std::vector<int> sorted(order);
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < n; ++i)
    if (sorted[i] != i) return false;
  return static_cast<int>(order.size()) == n;
}

int chebyshev_step(const ScanPath& p, int t) {
  int w = p.width;
  int i0 = p.order[t - 1] / w, j0 = p.order[t - 1] % w;
  int i1 = p.order[t] / w, j1 = p.order[t] % w;
  return std::max(std::abs(i1 - i0), std::abs(j1 - j0));
}

bool has_diag_step(const ScanPath& p) {
  return std::any_of(p.directions.begin(), p.directions.end(),
                     [](StepDir d) { return d == StepDir::DiagStep; });
}

bool axis_aligned(const ScanPath& p) { return !has_diag_step(p); }

}  // namespace

TEST_CASE("singleton grid", "[scan]") {
  for (auto s : kAllStrategies) {
    auto set = generate_scan_paths(s, 1, 1, 4);
    for (const auto& p : set.paths) {
      CHECK(p.order == std::vector<int>{0});
      CHECK(p.inverse == std::vector<int>{0});
      REQUIRE(p.directions.size() == 1);
      CHECK(p.directions[0] == StepDir::Start);
    }
  }
}

TEST_CASE("canonical 2x2 traces", "[scan]") {
  auto set = generate_scan_paths(ScanStrategy::Sass, 2, 2, 4);
  REQUIRE(set.paths.size() == 4);
  // vertical snake from (0,0): col 0 down, col 1 up
  CHECK(set.paths[0].order == std::vector<int>{0, 2, 3, 1});
  // anti-diagonal snake from (0,0): d0={(0,0)}, d1=(0,1),(1,0), d2={(1,1)}
  CHECK(set.paths[2].order == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("raster path is row-major", "[scan]") {
  auto set = generate_scan_paths(ScanStrategy::Parallel, 2, 3, 4);
  CHECK(set.paths[0].order == std::vector<int>{0, 1, 2, 3, 4, 5});
}

TEST_CASE("horizontal snake start-corner rule", "[scan]") {
  // H odd: starts at (H-1, W-1); H even: starts at (H-1, 0); both end at (0,0)
  auto odd = generate_scan_paths(ScanStrategy::ParallelSnake, 3, 2, 4);
  CHECK(odd.paths[1].order.front() == 2 * 2 + 1);
  CHECK(odd.paths[1].order.back() == 0);
  auto even = generate_scan_paths(ScanStrategy::ParallelSnake, 2, 3, 4);
  CHECK(even.paths[1].order.front() == 1 * 3 + 0);
  CHECK(even.paths[1].order.back() == 0);
}

TEST_CASE("bijectivity and inverse correctness over all grids", "[scan]") {
  for (auto s : kAllStrategies)
    for (int h = 1; h <= 16; ++h)
      for (int w = 1; w <= 16; ++w) {
        auto set = generate_scan_paths(s, h, w, 4);
        REQUIRE(set.paths.size() == 4);
        for (const auto& p : set.paths) {
          REQUIRE(is_permutation_of_range(p.order, h * w));
          for (int t = 0; t < h * w; ++t) REQUIRE(p.inverse[p.order[t]] == t);
          REQUIRE(p.directions.size() == static_cast<size_t>(h * w));
          REQUIRE(p.directions[0] == StepDir::Start);
        }
      }
}

TEST_CASE("snake paths stay Chebyshev-adjacent", "[scan]") {
  for (auto s : {ScanStrategy::ParallelSnake, ScanStrategy::DiagonalSnake, ScanStrategy::Sass})
    for (int h = 1; h <= 16; ++h)
      for (int w = 1; w <= 16; ++w) {
        auto set = generate_scan_paths(s, h, w, 4);
        for (const auto& p : set.paths)
          for (int t = 1; t < h * w; ++t) REQUIRE(chebyshev_step(p, t) == 1);
      }
}

TEST_CASE("direction codes match geometric displacements", "[scan]") {
  for (auto s : kAllStrategies)
    for (int h : {1, 2, 3, 5, 8})
      for (int w : {1, 2, 3, 5, 8}) {
        auto set = generate_scan_paths(s, h, w, 4);
        for (const auto& p : set.paths)
          for (int t = 1; t < h * w; ++t) {
            int di = p.order[t] / w - p.order[t - 1] / w;
            int dj = p.order[t] % w - p.order[t - 1] % w;
            StepDir expect;
            if (di != 0 && dj != 0)
              expect = StepDir::DiagStep;
            else if (di > 0)
              expect = StepDir::Down;
            else if (di < 0)
              expect = StepDir::Up;
            else if (dj > 0)
              expect = StepDir::Right;
            else
              expect = StepDir::Left;
            REQUIRE(p.directions[t] == expect);
          }
      }
}

TEST_CASE("sass composition: two parallel snakes, two diagonal snakes", "[scan]") {
  for (int h = 2; h <= 10; ++h)
    for (int w = 2; w <= 10; ++w) {
      auto set = generate_scan_paths(ScanStrategy::Sass, h, w, 4);
      REQUIRE(set.paths.size() == 4);
      // parallel snakes move only along the axes; diagonal snakes take
      // diagonal steps (whenever the grid has both extents > 1)
      CHECK(axis_aligned(set.paths[0]));
      CHECK(axis_aligned(set.paths[1]));
      CHECK(has_diag_step(set.paths[2]));
      CHECK(has_diag_step(set.paths[3]));
    }
}

TEST_CASE("coverage symmetry of path pairs", "[scan]") {
  auto set = generate_scan_paths(ScanStrategy::Sass, 5, 7, 4);
  for (const auto& p : set.paths) {
    std::vector<int> cells(p.order);
    std::sort(cells.begin(), cells.end());
    std::vector<int> expect(35);
    std::iota(expect.begin(), expect.end(), 0);
    CHECK(cells == expect);
  }
  CHECK(set.paths[0].order != set.paths[1].order);
  CHECK(set.paths[2].order != set.paths[3].order);
}

TEST_CASE("two-path selection", "[scan]") {
  auto four = generate_scan_paths(ScanStrategy::Sass, 4, 4, 4);
  auto two = generate_scan_paths(ScanStrategy::Sass, 4, 4, 2);
  REQUIRE(two.paths.size() == 2);
  // first parallel snake and first diagonal snake
  CHECK(two.paths[0].order == four.paths[0].order);
  CHECK(two.paths[1].order == four.paths[2].order);

  auto para2 = generate_scan_paths(ScanStrategy::Parallel, 4, 4, 2);
  auto para4 = generate_scan_paths(ScanStrategy::Parallel, 4, 4, 4);
  CHECK(para2.paths[0].order == para4.paths[0].order);
  CHECK(para2.paths[1].order == para4.paths[1].order);

  CHECK_THROWS_AS(generate_scan_paths(ScanStrategy::Sass, 4, 4, 3), ConfigError);
}

TEST_CASE("apply and unapply", "[scan]") {
  Rng rng(31);
  auto set = generate_scan_paths(ScanStrategy::Sass, 2, 2, 4);
  const ScanPath& o1 = set.paths[0];

  SECTION("identity path leaves rows in place") {
    ScanPath ident;
    ident.height = 2;
    ident.width = 2;
    ident.order = {0, 1, 2, 3};
    ident.inverse = {0, 1, 2, 3};
    ident.directions.assign(4, StepDir::Start);
    Tensor seq = oracles::random_tensor(rng, {4, 3});
    CHECK(apply_path(ident, seq).data() == seq.data());
  }
  SECTION("o1 reorders (a,b,c,d) to (a,c,d,b)") {
    Tensor seq = Tensor::from_data({4, 1}, {1, 2, 3, 4});  // a,b,c,d
    CHECK(apply_path(o1, seq).data() == std::vector<double>{1, 3, 4, 2});
  }
  SECTION("unapply inverts apply") {
    for (const auto& p : set.paths) {
      Tensor seq = oracles::random_tensor(rng, {4, 5});
      Tensor round = unapply_path(p, apply_path(p, seq));
      CHECK(round.data() == seq.data());
    }
  }
  SECTION("length mismatch is a path error") {
    Tensor bad = Tensor::zeros({5, 2});
    CHECK_THROWS_AS(apply_path(o1, bad), PathError);
  }
}

TEST_CASE("path cache returns identical sets", "[scan]") {
  const auto& a = cached_scan_paths(ScanStrategy::Sass, 6, 6, 4);
  const auto& b = cached_scan_paths(ScanStrategy::Sass, 6, 6, 4);
  CHECK(&a == &b);
}

TEST_CASE("strategy names round-trip", "[scan]") {
  for (auto s : kAllStrategies) CHECK(scan_strategy_from_string(to_string(s)) == s);
  CHECK_THROWS_AS(scan_strategy_from_string("zigzag"), ConfigError);
}
