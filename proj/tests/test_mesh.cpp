#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

using namespace eqmax;
using namespace eqmax::testing;

namespace {

const char *kOneTet = R"($MeshFormat
2.2 0 8
$EndMeshFormat
$Nodes
4
1 0 0 0
2 1 0 0
3 0 1 0
4 0 0 1
$EndNodes
$Elements
5
1 2 2 7 1 2 3 4
2 2 2 7 1 1 3 4
3 2 2 7 1 1 2 4
4 2 2 7 1 1 2 3
5 4 2 3 1 1 2 3 4
$EndElements
)";

std::string swap_tet_nodes(std::string s) {
  const std::string from = "5 4 2 3 1 1 2 3 4";
  s.replace(s.find(from), from.size(), "5 4 2 3 1 2 1 3 4");
  return s;
}

} // namespace

TEST_CASE("structured cube counts") {
  const Mesh m1 = generate_structured_cube(1);
  CHECK(m1.num_vertices() == 8);
  CHECK(m1.num_tets() == 6);
  CHECK(m1.boundary_faces.size() == 12);

  const Topology t2 = build_topology(generate_structured_cube(2));
  CHECK(t2.num_vertices() == 27);
  CHECK(t2.num_tets() == 48);
  CHECK(std::count(t2.vertex_on_boundary.begin(), t2.vertex_on_boundary.end(), 0) == 1);
  double vol = 0.0;
  for (int t = 0; t < t2.num_tets(); ++t) {
    CHECK(signed_tet_volume(t2.mesh.vertices[t2.mesh.tets[t][0]], t2.mesh.vertices[t2.mesh.tets[t][1]],
                            t2.mesh.vertices[t2.mesh.tets[t][2]], t2.mesh.vertices[t2.mesh.tets[t][3]]) > 0.0);
    vol += tet_volume(t2.mesh, t);
  }
  CHECK(std::abs(vol - 1.0) < 1e-14);
  CHECK(std::abs(boundary_enclosed_volume(t2.mesh) - vol) < 1e-12);
  CHECK(t2.num_vertices() - t2.num_edges() + t2.num_faces() - t2.num_tets() == 1);
}

TEST_CASE("single tet topology and Euler characteristic") {
  const Topology t = build_topology(single_tet_mesh());
  CHECK(t.num_edges() == 6);
  CHECK(t.num_faces() == 4);
  CHECK(std::all_of(t.face_on_boundary.begin(), t.face_on_boundary.end(), [](char c) { return c; }));
  CHECK(t.num_vertices() - t.num_edges() + t.num_faces() - t.num_tets() == 1);
}

TEST_CASE("face incidence and boundary coverage") {
  const Topology t = build_topology(jittered_cube(3, 0.2, 7));
  std::map<std::array<int, 3>, int> count;
  for (const auto &tet : t.mesh.tets)
    for (const auto &f : kTetFaces) {
      std::array<int, 3> key{tet[f[0]], tet[f[1]], tet[f[2]]};
      std::sort(key.begin(), key.end());
      ++count[key];
    }
  std::set<std::array<int, 3>> boundary;
  for (const auto &[key, c] : count) {
    CHECK((c == 1 || c == 2));
    if (c == 1)
      boundary.insert(key);
  }
  std::set<std::array<int, 3>> flagged;
  for (int f = 0; f < t.num_faces(); ++f) {
    const int inc = (t.face_tets[f][0] >= 0) + (t.face_tets[f][1] >= 0);
    CHECK(inc == (t.face_on_boundary[f] ? 1 : 2));
    if (t.face_on_boundary[f])
      flagged.insert(t.faces[f]);
  }
  CHECK(flagged == boundary);
  std::set<std::array<int, 3>> declared;
  for (const auto &bf : t.mesh.boundary_faces) {
    auto v = bf.v;
    std::sort(v.begin(), v.end());
    declared.insert(v);
  }
  CHECK(declared == boundary);
}

TEST_CASE("orientation does not depend on tet order") {
  Mesh a = jittered_cube(2, 0.15, 3);
  Mesh b = a;
  std::reverse(b.tets.begin(), b.tets.end());
  std::reverse(b.region_of_tet.begin(), b.region_of_tet.end());
  for (auto &tet : b.tets)
    std::swap(tet[0], tet[1]);
  canonicalize(b);
  const Topology ta = build_topology(a), tb = build_topology(b);
  std::set<std::array<int, 2>> ea(ta.edges.begin(), ta.edges.end()), eb(tb.edges.begin(), tb.edges.end());
  std::set<std::array<int, 3>> fa(ta.faces.begin(), ta.faces.end()), fb(tb.faces.begin(), tb.faces.end());
  CHECK(ea == eb);
  CHECK(fa == fb);
  for (const auto &e : ta.edges)
    CHECK(e[0] < e[1]);
  std::map<std::array<int, 4>, int> orient;
  for (int t = 0; t < ta.num_tets(); ++t)
    orient[ta.sorted_tets[t]] = ta.orientation[t];
  for (int t = 0; t < tb.num_tets(); ++t) {
    CHECK(orient.at(tb.sorted_tets[t]) == tb.orientation[t]);
    CHECK((tet_map(tb, t).det > 0) == (tb.orientation[t] > 0));
  }
}

TEST_CASE("gmsh reader") {
  std::istringstream in(kOneTet);
  const Mesh m = load_gmsh(in);
  REQUIRE(m.num_tets() == 1);
  CHECK(m.boundary_faces.size() == 4);
  CHECK(m.region_of_tet[0] == 3);
  CHECK(std::abs(tet_volume(m, 0) - 1.0 / 6.0) < 1e-15);

  std::istringstream flipped(swap_tet_nodes(kOneTet));
  const Mesh f = load_gmsh(flipped);
  CHECK(std::abs(tet_volume(f, 0) - 1.0 / 6.0) < 1e-15);
  const auto &v = f.vertices;
  const auto &t = f.tets[0];
  CHECK(signed_tet_volume(v[t[0]], v[t[1]], v[t[2]], v[t[3]]) > 0.0);

  std::string truncated(kOneTet);
  truncated = truncated.substr(0, truncated.find("4 2 2 7 1 1 2 3"));
  std::istringstream tin(truncated);
  try {
    load_gmsh(tin);
    FAIL("truncated file accepted");
  } catch (const Error &e) {
    CHECK(e.kind() == ErrorKind::Parse);
    CHECK(std::string(e.what()).find("$Elements") != std::string::npos);
  }
}

TEST_CASE("degenerate tets are rejected") {
  Mesh m = single_tet_mesh();
  m.vertices[3] = Vec3(0.3, 0.3, 0.0);
  CHECK_THROWS_AS(canonicalize(m), Error);
}

TEST_CASE("vertex patches") {
  const auto one = topology(single_tet_mesh());
  for (int a = 0; a < 4; ++a) {
    const Patch p = build_vertex_patch(*one, a);
    CHECK(p.tets.size() == 1);
    CHECK(p.gamma_faces.size() == 3);
    CHECK(p.gamma_c_faces.size() == 1);
    CHECK_FALSE(p.interior);
  }
  const auto t2 = topology(generate_structured_cube(2));
  std::vector<int> covered(t2->num_tets(), 0);
  for (int a = 0; a < t2->num_vertices(); ++a) {
    const Patch p = build_vertex_patch(*t2, a);
    CHECK(p.interior == !t2->vertex_on_boundary[a]);
    CHECK(p.gamma_faces.empty() == p.interior);
    const Topology &L = *p.local;
    int boundary = 0;
    for (int f = 0; f < L.num_faces(); ++f)
      boundary += L.face_on_boundary[f];
    CHECK(boundary == static_cast<int>(p.gamma_faces.size() + p.gamma_c_faces.size()));
    for (int f : p.gamma_faces) {
      const auto &fv = L.faces[f];
      CHECK(std::find(fv.begin(), fv.end(), p.local_center) != fv.end());
    }
    for (int f : p.gamma_c_faces) {
      const auto &fv = L.faces[f];
      CHECK(std::find(fv.begin(), fv.end(), p.local_center) == fv.end());
    }
    for (int t : p.tets) {
      const auto &tv = t2->mesh.tets[t];
      CHECK(std::find(tv.begin(), tv.end(), a) != tv.end());
      ++covered[t];
    }
    if (p.interior)
      CHECK(p.tets.size() == 24);
  }
  CHECK(std::all_of(covered.begin(), covered.end(), [](int c) { return c == 4; }));
  CHECK_FALSE(build_vertex_patch(*t2, 0).interior);
}

TEST_CASE("mesh statistics") {
  const MeshStats s = mesh_stats(single_tet_mesh());
  CHECK(std::abs(s.h_K[0] - std::sqrt(2.0)) < 1e-15);
  const double area = 1.5 + std::sqrt(3.0) / 2.0;
  CHECK(std::abs(s.rho_K[0] - 2.0 * 3.0 * (1.0 / 6.0) / area) < 1e-15);
  CHECK(std::abs(s.kappa_K[0] - s.h_K[0] / s.rho_K[0]) < 1e-14);
  for (int n : {1, 2, 4})
    CHECK(std::abs(mesh_stats(generate_structured_cube(n)).h -
                   2.0 * mesh_stats(generate_structured_cube(2 * n)).h) < 1e-14);
}
