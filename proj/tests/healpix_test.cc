#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "doctest.h"
#include "oracles.h"
#include "oslo/error.h"
#include "oslo/healpix.h"

using namespace oslo;
using namespace oslo::healpix;

namespace {

std::set<int64_t> valid_set(const HealpixGrid& g, int64_t p) {
  std::set<int64_t> s;
  for (int64_t j : g.neighbors(p))
    if (j != kMissing) s.insert(j);
  return s;
}

}  // namespace

TEST_CASE("build_grid pixel counts") {
  CHECK(HealpixGrid(1).n_pix() == 12);
  CHECK(HealpixGrid(8).n_pix() == 768);
  for (int ns : {1, 2, 4, 8, 16}) CHECK(HealpixGrid(ns).n_pix() == 12 * ns * ns);
}

TEST_CASE("build_grid rejects bad resolutions") {
  for (int bad : {0, 3, 6, -4}) {
    try {
      HealpixGrid g(bad);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kInvalidResolution);
    }
  }
}

TEST_CASE("nested index to face coordinates") {
  CHECK(nest_to_face_xy(2, 0) == FaceCoord{0, 0, 0});
  CHECK(nest_to_face_xy(2, 5) == FaceCoord{1, 1, 0});
  CHECK(nest_to_face_xy(4, 12 * 16 - 1) == FaceCoord{11, 3, 3});
  CHECK(face_xy_to_nest(2, {0, 0, 0}) == 0);
  CHECK(face_xy_to_nest(2, {1, 1, 0}) == 5);
  CHECK_THROWS_AS(nest_to_face_xy(2, 48), Error);
  CHECK_THROWS_AS(nest_to_face_xy(2, -1), Error);
  CHECK_THROWS_AS(face_xy_to_nest(2, {12, 0, 0}), Error);
  CHECK_THROWS_AS(face_xy_to_nest(2, {0, 2, 0}), Error);
}

TEST_CASE("face coordinate roundtrip and bit interleave oracle") {
  for (int ns : {1, 2, 4, 8, 16, 64}) {
    for (int64_t p = 0; p < npix(ns); ++p) {
      const FaceCoord fc = nest_to_face_xy(ns, p);
      // Oracle: x from even bits, y from odd bits of the in-face offset.
      int64_t off = p % (int64_t(ns) * ns);
      int x = 0, y = 0;
      for (int b = 0; (int64_t(1) << (2 * b)) < int64_t(ns) * ns; ++b) {
        x |= int((off >> (2 * b)) & 1) << b;
        y |= int((off >> (2 * b + 1)) & 1) << b;
      }
      REQUIRE(fc == FaceCoord{int(p / (int64_t(ns) * ns)), x, y});
      REQUIRE(face_xy_to_nest(ns, fc) == p);
    }
  }
}

TEST_CASE("neighbor table invariants") {
  for (int ns : {1, 2, 4, 8, 16}) {
    const HealpixGrid g(ns);
    int seven = 0;
    for (int64_t p = 0; p < g.n_pix(); ++p) {
      const auto nb = g.neighbors(p);
      std::set<int64_t> seen;
      for (int64_t j : nb) {
        if (j == kMissing) continue;
        REQUIRE(j != p);
        REQUIRE(j >= 0);
        REQUIRE(j < g.n_pix());
        REQUIRE(seen.insert(j).second);
        const auto back = valid_set(g, j);
        REQUIRE(back.count(p) == 1);
      }
      if (g.valid_neighbor_count(p) == 7) ++seven;
      if (ns >= 2) REQUIRE(g.valid_neighbor_count(p) >= 7);
    }
    if (ns >= 2) CHECK(seven == 24);
  }
}

TEST_CASE("neighbors agree with the corner-sharing geometric oracle") {
  for (int ns : {1, 2, 4, 8, 16}) {
    const HealpixGrid g(ns);
    const auto expected = oracle::corner_sharing_neighbors(ns);
    for (int64_t p = 0; p < g.n_pix(); ++p) REQUIRE(valid_set(g, p) == expected[p]);
  }
}

TEST_CASE("missing slot count at n_side 4") {
  const HealpixGrid g(4);
  int missing = 0;
  for (int64_t v : g.neighbor_table()) missing += v == kMissing;
  CHECK(missing == 24);
}

TEST_CASE("neighbors of pixel 6 at n_side 2") {
  const HealpixGrid g(2);
  const auto s = valid_set(g, 6);
  for (int64_t j : {1, 3, 4, 5}) CHECK(s.count(j) == 1);
  std::set<int64_t> before;
  for (int64_t j : s)
    if (j < 6) before.insert(j);
  CHECK(before == std::set<int64_t>{1, 3, 4, 5});
}

TEST_CASE("slot orientation follows face coordinates") {
  // Interior pixel: every slot is the plain (dx, dy) step inside the face.
  const int ns = 8;
  const HealpixGrid g(ns);
  const int dx[8] = {-1, -1, 0, 1, 1, 1, 0, -1};
  const int dy[8] = {0, 1, 1, 1, 0, -1, -1, -1};
  for (int face = 0; face < 12; ++face) {
    const int64_t p = face_xy_to_nest(ns, {face, 3, 4});
    const auto nb = g.neighbors(p);
    for (int s = 0; s < 8; ++s) CHECK(nb[s] == face_xy_to_nest(ns, {face, 3 + dx[s], 4 + dy[s]}));
  }
}

TEST_CASE("hierarchy") {
  CHECK(children(0) == std::array<int64_t, 4>{0, 1, 2, 3});
  CHECK(parent(6) == 1);
  for (int64_t i = 0; i < 300; ++i)
    for (int64_t c : children(i)) CHECK(parent(c) == i);
}

TEST_CASE("hierarchy consistency of neighborhoods") {
  for (int ns : {2, 4, 8, 16}) {
    const HealpixGrid fine(ns), coarse(ns / 2);
    for (int64_t p = 0; p < coarse.n_pix(); ++p) {
      auto allowed = valid_set(coarse, p);
      allowed.insert(p);
      for (int64_t c : children(p))
        for (int64_t j : valid_set(fine, c)) REQUIRE(allowed.count(parent(j)) == 1);
    }
  }
}

TEST_CASE("pix2ang matches the continuous face mapping at pixel centers") {
  for (int ns : {1, 2, 4, 8, 16}) {
    for (int64_t p = 0; p < npix(ns); ++p) {
      const auto fc = nest_to_face_xy(ns, p);
      double z, phi;
      oracle::face_point_to_zphi((fc.x + 0.5) / ns, (fc.y + 0.5) / ns, fc.face, z, phi);
      const Angles a = pix2ang(ns, p);
      REQUIRE(std::cos(a.theta) == doctest::Approx(z).epsilon(1e-12));
      REQUIRE(a.phi == doctest::Approx(phi).epsilon(1e-12));
    }
  }
}

TEST_CASE("n_side 1 centers lie on three rings") {
  for (int64_t p = 0; p < 12; ++p) {
    const double z = std::cos(pix2ang(1, p).theta);
    const double want = p < 4 ? 2.0 / 3.0 : (p < 8 ? 0.0 : -2.0 / 3.0);
    CHECK(z == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("z values symmetric about the equator") {
  for (int ns : {1, 2, 4, 8, 16}) {
    std::multiset<long long> zs;
    for (int64_t p = 0; p < npix(ns); ++p) zs.insert(std::llround(std::cos(pix2ang(ns, p).theta) * 1e9));
    for (long long z : zs) REQUIRE(zs.count(z) == zs.count(-z));
  }
}

TEST_CASE("pix2ang / ang2pix roundtrip") {
  for (int ns : {1, 2, 4, 8, 16, 32}) {
    for (int64_t p = 0; p < npix(ns); ++p) {
      const Angles a = pix2ang(ns, p);
      REQUIRE(ang2pix(ns, a.theta, a.phi) == p);
      // Wrapped longitudes address the same pixel.
      REQUIRE(ang2pix(ns, a.theta, a.phi + 2 * std::numbers::pi) == p);
      REQUIRE(ang2pix(ns, a.theta, a.phi - 4 * std::numbers::pi) == p);
    }
  }
}

TEST_CASE("north pole lands in a polar pixel, matching nearest-center search") {
  for (int ns : {1, 2, 4, 8}) {
    const int64_t p = ang2pix(ns, 0.0, 0.3);
    CHECK(p / (int64_t(ns) * ns) < 4);
    double best = 1e9;
    for (int64_t q = 0; q < npix(ns); ++q) best = std::min(best, pix2ang(ns, q).theta);
    CHECK(pix2ang(ns, p).theta == doctest::Approx(best));
  }
}

TEST_CASE("ang2pix rejects non-finite input") {
  CHECK_THROWS_AS(ang2pix(4, std::nan(""), 0.0), Error);
  CHECK_THROWS_AS(ang2pix(4, 0.5, INFINITY), Error);
  CHECK_THROWS_AS(ang2pix(4, 4.0, 0.0), Error);
}

TEST_CASE("equal-area occupancy under uniform directions") {
  const int ns = 4;
  const int64_t n = npix(ns);
  const int samples = 100000;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<int> hits(n, 0);
  for (int s = 0; s < samples; ++s) {
    const double z = 2.0 * u(rng) - 1.0;
    const double phi = 2.0 * std::numbers::pi * u(rng);
    ++hits[ang2pix(ns, std::acos(z), phi)];
  }
  const double expect = double(samples) / n;
  double chi2 = 0;
  for (int h : hits) chi2 += (h - expect) * (h - expect) / expect;
  const double dof = n - 1;
  CHECK(std::abs(chi2 - dof) <= 3.0 * std::sqrt(2.0 * dof));
}

TEST_CASE("neighbor CSV dump") {
  std::ostringstream os;
  HealpixGrid(1).write_neighbor_csv(os);
  const std::string s = os.str();
  CHECK(s.rfind("ipix,sw,w,nw,n,ne,e,se,s\n0,", 0) == 0);
  CHECK(std::count(s.begin(), s.end(), '\n') == 13);
  CHECK(s.find("-1") != std::string::npos);
}
