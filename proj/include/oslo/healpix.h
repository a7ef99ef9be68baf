#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace oslo::healpix {

// Reserved neighbor value for the 24 pixels that only have seven neighbors.
// Never a valid pixel index.
inline constexpr int64_t kMissing = -1;

inline constexpr int kNeighborSlots = 8;

// Slot order of every neighbor list, in face-local coordinates.
enum Slot : int { kSW = 0, kW, kNW, kN, kNE, kE, kSE, kS };

struct FaceCoord {
  int face = 0;
  int x = 0;
  int y = 0;
  friend bool operator==(const FaceCoord&, const FaceCoord&) = default;
};

// Colatitude theta in [0, pi], longitude phi in [0, 2pi).
struct Angles {
  double theta = 0.0;
  double phi = 0.0;
};

bool is_valid_nside(int64_t n_side);
int64_t npix(int n_side);

FaceCoord nest_to_face_xy(int n_side, int64_t ipix);
int64_t face_xy_to_nest(int n_side, const FaceCoord& fc);

int64_t parent(int64_t ipix);
std::array<int64_t, 4> children(int64_t ipix);

Angles pix2ang(int n_side, int64_t ipix);
int64_t ang2pix(int n_side, double theta, double phi);

// Neighbors computed directly from face coordinates, without a table.
std::array<int64_t, kNeighborSlots> compute_neighbors(int n_side, int64_t ipix);

// Immutable grid with an eagerly built neighbor table.
class HealpixGrid {
 public:
  explicit HealpixGrid(int n_side);

  int n_side() const { return n_side_; }
  int64_t n_pix() const { return n_pix_; }

  std::span<const int64_t, kNeighborSlots> neighbors(int64_t ipix) const;
  int valid_neighbor_count(int64_t ipix) const;

  // n_pix rows of kNeighborSlots entries.
  std::span<const int64_t> neighbor_table() const { return table_; }

  Angles center(int64_t ipix) const;

  void write_neighbor_csv(std::ostream& os) const;

 private:
  void check(int64_t ipix) const;

  int n_side_;
  int64_t n_pix_;
  std::vector<int64_t> table_;
  std::vector<Angles> centers_;
};

// Process-wide cache of grids; the returned reference stays valid forever.
const HealpixGrid& grid_for(int n_side);

}  // namespace oslo::healpix
