#pragma once

// Marching-cubes surface extraction from binary masks and Wavefront OBJ I/O.

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "cardioseg/volume.hpp"

namespace cardioseg {

struct TriangleMesh {
  std::vector<std::array<double, 3>> vertices;  // mm
  std::vector<std::array<std::uint32_t, 3>> triangles;

  std::size_t vertex_count() const { return vertices.size(); }
  std::size_t triangle_count() const { return triangles.size(); }
  bool empty() const { return vertices.empty(); }
  friend bool operator==(const TriangleMesh&, const TriangleMesh&) = default;
};

struct MeshStats {
  std::size_t vertices = 0;
  std::size_t edges = 0;
  std::size_t triangles = 0;
  long euler_characteristic = 0;  // V - E + F
};

/// Iso-surface at 0.5 of the 0/1 field, with a one-voxel zero border so the
/// surface always closes. Vertex = (voxel index) * spacing; triangles wind
/// counter-clockwise seen from outside the foreground.
///
/// Faces with diagonally opposite foreground corners keep those corners apart,
/// so foreground connectivity is face (6-) connectivity.
TriangleMesh extract_surface(const BinaryMask3D& mask, const std::array<double, 3>& spacing_mm);
TriangleMesh extract_surface(const BinaryMask3D& mask, double spacing_mm);

MeshStats mesh_stats(const TriangleMesh& mesh);
long euler_characteristic(const TriangleMesh& mesh);

/// Every undirected edge is used by exactly two triangles.
bool is_watertight(const TriangleMesh& mesh);
/// Every directed edge appears once and its reverse appears once.
bool is_consistently_oriented(const TriangleMesh& mesh);
/// Divergence-theorem volume; positive for outward-facing closed meshes.
double signed_volume(const TriangleMesh& mesh);

/// Throws std::invalid_argument on out-of-range indices or triangles with
/// area below 1e-12 mm^2.
void validate_mesh(const TriangleMesh& mesh);

void write_obj(const TriangleMesh& mesh, const std::filesystem::path& path);
TriangleMesh read_obj(const std::filesystem::path& path);

}  // namespace cardioseg
