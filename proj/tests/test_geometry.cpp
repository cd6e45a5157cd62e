#include <doctest.h>

#include <algorithm>

#include "patchguard/geometry.hpp"

using namespace patchguard;

namespace {

// Cells whose receptive field meets the patch, by direct interval overlap.
std::vector<std::pair<std::size_t, std::size_t>> overlapping_cells(PixelAnchor a,
                                                                   const PatchSpec& p,
                                                                   const RFGeometry& g) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < g.feature_rows(); ++i)
    for (std::size_t j = 0; j < g.feature_cols(); ++j) {
      const std::size_t r0 = i * g.stride_rows, c0 = j * g.stride_cols;
      const bool rows = r0 < a.row + p.prows && a.row < r0 + g.rf_rows;
      const bool cols = c0 < a.col + p.pcols && a.col < c0 + g.rf_cols;
      if (rows && cols) out.emplace_back(i, j);
    }
  return out;
}

}  // namespace

TEST_SUITE("geometry") {
  TEST_CASE("window size examples") {
    CHECK(window_size(32, 17, 8) == 6);
    CHECK(window_size(1, 1, 1) == 1);
    CHECK(window_size(30, 25, 1) == 54);
    CHECK(window_size(6, 9, 4) == 4);
    CHECK_THROWS_AS(window_size(0, 9, 4), ContractViolation);
    CHECK_THROWS_AS(window_size(3, 9, 0), ContractViolation);
  }

  TEST_CASE("mask shape clamps to the feature grid") {
    const auto g = RFGeometry::make(224, 224, 3, 17, 8);
    CHECK(g.feature_rows() == 26);
    CHECK(mask_shape(PatchSpec{16, 144}, g) == Shape{4, 20});
    const auto desk = RFGeometry::make(32, 32, 1, 9, 4);
    CHECK(desk.feature_shape() == Shape{6, 6});
    CHECK(mask_shape(PatchSpec::square(6), desk) == Shape{4, 4});
    CHECK(mask_shape(PatchSpec::square(30), desk) == Shape{6, 6});
  }

  TEST_CASE("square patch for area fraction") {
    CHECK(PatchSpec::square_for_area(0.03, 32, 32).prows == 6);
    CHECK(PatchSpec::square_for_area(0.02, 224, 224).prows == 32);
    CHECK_THROWS_AS(PatchSpec::square_for_area(0.0, 32, 32), ContractViolation);
  }

  TEST_CASE("geometry validation") {
    CHECK_THROWS_AS(RFGeometry::make(8, 8, 1, 9, 1), ContractViolation);
    CHECK_THROWS_AS(RFGeometry::make(8, 8, 1, 3, 0), ContractViolation);
    CHECK_THROWS_AS(RFGeometry::make(8, 8, 0, 3, 1), ContractViolation);
    CHECK_NOTHROW(RFGeometry::make(8, 8, 1, 8, 1));
  }

  TEST_CASE("affected cells match the overlapping receptive fields") {
    for (const auto& g : {RFGeometry::make(48, 48, 1, 9, 4), RFGeometry::make(20, 20, 1, 3, 5),
                          RFGeometry::make(17, 23, 1, 5, 2)}) {
      for (std::size_t p : {1u, 3u, 6u, 11u}) {
        const PatchSpec patch = PatchSpec::square(p);
        const Shape mask = mask_shape(patch, g);
        for (std::size_t r = 0; r + p <= g.image_rows; ++r)
          for (std::size_t c = 0; c + p <= g.image_cols; ++c) {
            const auto cells = overlapping_cells({r, c}, patch, g);
            const auto w = affected_cells({r, c}, patch, g);
            if (cells.empty()) {
              CHECK_FALSE(w.has_value());
              continue;
            }
            REQUIRE(w.has_value());
            std::size_t i0 = cells.front().first, i1 = i0, j0 = cells.front().second, j1 = j0;
            for (const auto& [i, j] : cells) {
              i0 = std::min(i0, i), i1 = std::max(i1, i);
              j0 = std::min(j0, j), j1 = std::max(j1, j);
            }
            CHECK(*w == Window{i0, j0, i1 - i0 + 1, j1 - j0 + 1});
            CHECK(w->area() == cells.size());
            CHECK(w->rows <= mask.rows);
            CHECK(w->cols <= mask.cols);
          }
      }
    }
  }

  TEST_CASE("affected cells rejects patches leaving the image") {
    const auto g = RFGeometry::make(32, 32, 1, 9, 4);
    CHECK_THROWS_AS(affected_cells({30, 0}, PatchSpec::square(6), g), ContractViolation);
  }
}
