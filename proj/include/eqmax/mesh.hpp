#pragma once

#include "eqmax/common.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace eqmax {

struct BoundaryFace {
  std::array<int, 3> v;
  int tag = 0;
};

/// Conforming tetrahedral mesh. Tets are stored with positive orientation.
struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 4>> tets;
  std::vector<BoundaryFace> boundary_faces;
  std::vector<int> region_of_tet;
  /// Number of elements the loader skipped (unsupported Gmsh element types).
  int ignored_elements = 0;

  int num_vertices() const { return static_cast<int>(vertices.size()); }
  int num_tets() const { return static_cast<int>(tets.size()); }
};

/// Unit cube split into n^3 subcubes of 6 Kuhn tetrahedra each.
Mesh generate_structured_cube(int n);

/// Gmsh MSH 2.2 ASCII reader (element types 2 and 4; physical tag -> region).
Mesh load_gmsh(const std::filesystem::path &path);
Mesh load_gmsh(std::istream &in, const std::string &source_name = "<stream>");

/// Reorders every tet to positive volume and rejects degenerate ones.
void canonicalize(Mesh &mesh);

double tet_volume(const Mesh &mesh, int t);
double signed_tet_volume(const Vec3 &a, const Vec3 &b, const Vec3 &c, const Vec3 &d);

struct MeshStats {
  double h = 0.0;
  double kappa = 0.0;
  std::vector<double> h_K;
  std::vector<double> rho_K;
  std::vector<double> kappa_K;
};

/// h_K is the largest vertex distance, rho_K the inscribed ball diameter.
MeshStats mesh_stats(const Mesh &mesh);

/// Volume enclosed by the boundary faces via the divergence theorem on x/3.
double boundary_enclosed_volume(const Mesh &mesh);

// Local edge / face conventions on a tet whose vertices are listed in
// ascending global order. Face i is opposite local vertex i.
inline constexpr std::array<std::array<int, 2>, 6> kTetEdges{
    {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}}};
inline constexpr std::array<std::array<int, 3>, 4> kTetFaces{
    {{1, 2, 3}, {0, 2, 3}, {0, 1, 3}, {0, 1, 2}}};

/// Global connectivity with orientation fixed by ascending vertex index.
struct Topology {
  Mesh mesh;
  std::vector<std::array<int, 2>> edges;
  std::vector<std::array<int, 3>> faces;
  /// Tet vertices sorted ascending; every local entity inherits this order.
  std::vector<std::array<int, 4>> sorted_tets;
  /// Parity of the permutation taking the stored (positive) order to the
  /// sorted order; equals the sign of det B of the sorted affine map.
  std::vector<int> orientation;
  std::vector<std::array<int, 6>> tet_edges;
  std::vector<std::array<int, 4>> tet_faces;
  /// Incident tets per face, second entry -1 on the boundary.
  std::vector<std::array<int, 2>> face_tets;
  std::vector<char> face_on_boundary;
  std::vector<char> edge_on_boundary;
  std::vector<char> vertex_on_boundary;
  /// vertex -> incident tets (CSR).
  std::vector<int> vertex_tet_offsets;
  std::vector<int> vertex_tets;

  int num_edges() const { return static_cast<int>(edges.size()); }
  int num_faces() const { return static_cast<int>(faces.size()); }
  int num_tets() const { return mesh.num_tets(); }
  int num_vertices() const { return mesh.num_vertices(); }

  std::array<Vec3, 4> sorted_coords(int t) const;
  int find_edge(int a, int b) const;
  int find_face(int a, int b, int c) const;

private:
  friend Topology build_topology(Mesh mesh);
  std::unordered_map<std::uint64_t, int> edge_lookup_;
  std::unordered_map<std::uint64_t, int> face_lookup_;
};

Topology build_topology(Mesh mesh);

/// Vertex patch: all tets around a vertex, with its own local topology whose
/// vertex numbering preserves the global order (so orientations agree).
struct Patch {
  int center = -1;
  bool interior = false;
  double diameter = 0.0;
  std::vector<int> tets;
  std::vector<int> vertices;
  std::vector<int> edges;
  std::vector<int> faces;
  /// Local face ids on the patch boundary that contain / do not contain the center.
  std::vector<int> gamma_faces;
  std::vector<int> gamma_c_faces;
  int local_center = -1;
  std::shared_ptr<const Topology> local;
};

Patch build_vertex_patch(const Topology &topo, int a);

} // namespace eqmax
