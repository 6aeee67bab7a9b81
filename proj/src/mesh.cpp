#include "eqmax/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace eqmax {

const char *to_string(ErrorKind kind) {
  switch (kind) {
  case ErrorKind::InvalidArgument: return "invalid-argument";
  case ErrorKind::Parse: return "parse-error";
  case ErrorKind::InvalidMesh: return "invalid-mesh";
  case ErrorKind::NonconformingMesh: return "nonconforming-mesh";
  case ErrorKind::UnsupportedDegree: return "unsupported-degree";
  case ErrorKind::DegenerateElement: return "degenerate-element";
  case ErrorKind::SolverFailure: return "solver-failure";
  case ErrorKind::EquilibrationFailure: return "equilibration-failure";
  case ErrorKind::Infeasible: return "infeasible";
  case ErrorKind::NumericalFailure: return "numerical-failure";
  case ErrorKind::InsufficientData: return "insufficient-data";
  case ErrorKind::Resonance: return "resonance-rejected";
  case ErrorKind::Internal: return "internal-error";
  }
  return "unknown";
}

namespace {

std::uint64_t edge_key(int a, int b) {
  if (a > b)
    std::swap(a, b);
  return (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint32_t>(b);
}

std::uint64_t face_key(std::array<int, 3> v) {
  std::sort(v.begin(), v.end());
  return (static_cast<std::uint64_t>(v[0]) << 42) | (static_cast<std::uint64_t>(v[1]) << 21) |
         static_cast<std::uint64_t>(v[2]);
}

double max_vertex_distance(const std::array<Vec3, 4> &x) {
  double h = 0.0;
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j)
      h = std::max(h, (x[i] - x[j]).norm());
  return h;
}

std::array<Vec3, 4> coords(const Mesh &mesh, const std::array<int, 4> &t) {
  return {mesh.vertices[t[0]], mesh.vertices[t[1]], mesh.vertices[t[2]], mesh.vertices[t[3]]};
}

} // namespace

double signed_tet_volume(const Vec3 &a, const Vec3 &b, const Vec3 &c, const Vec3 &d) {
  return (b - a).dot((c - a).cross(d - a)) / 6.0;
}

double tet_volume(const Mesh &mesh, int t) {
  const auto x = coords(mesh, mesh.tets[t]);
  return std::abs(signed_tet_volume(x[0], x[1], x[2], x[3]));
}

void canonicalize(Mesh &mesh) {
  if (mesh.region_of_tet.size() != mesh.tets.size())
    mesh.region_of_tet.resize(mesh.tets.size(), 0);
  for (int t = 0; t < mesh.num_tets(); ++t) {
    auto &tet = mesh.tets[t];
    for (int v : tet)
      EQMAX_REQUIRE(v >= 0 && v < mesh.num_vertices(), ErrorKind::InvalidMesh,
                    "tet " + std::to_string(t) + " references a missing vertex");
    for (int i = 0; i < 4; ++i)
      for (int j = i + 1; j < 4; ++j)
        EQMAX_REQUIRE(tet[i] != tet[j], ErrorKind::InvalidMesh,
                      "tet " + std::to_string(t) + " has a repeated vertex");
    const auto x = coords(mesh, tet);
    const double vol = signed_tet_volume(x[0], x[1], x[2], x[3]);
    const double hK = max_vertex_distance(x);
    EQMAX_REQUIRE(std::abs(vol) >= 1e-12 * hK * hK * hK, ErrorKind::InvalidMesh,
                  "tet " + std::to_string(t) + " is degenerate");
    if (vol < 0.0)
      std::swap(tet[2], tet[3]);
  }
}

Mesh generate_structured_cube(int n) {
  EQMAX_REQUIRE(n >= 1, ErrorKind::InvalidArgument, "structured cube needs n >= 1");
  Mesh mesh;
  const int m = n + 1;
  auto vid = [m](int i, int j, int k) { return i + m * (j + m * k); };
  mesh.vertices.reserve(static_cast<std::size_t>(m) * m * m);
  for (int k = 0; k < m; ++k)
    for (int j = 0; j < m; ++j)
      for (int i = 0; i < m; ++i)
        mesh.vertices.emplace_back(double(i) / n, double(j) / n, double(k) / n);

  const std::array<std::array<int, 3>, 6> perms{
      {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
  mesh.tets.reserve(static_cast<std::size_t>(6) * n * n * n);
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i)
        for (const auto &perm : perms) {
          std::array<int, 3> c{i, j, k};
          std::array<int, 4> tet{};
          tet[0] = vid(c[0], c[1], c[2]);
          for (int s = 0; s < 3; ++s) {
            ++c[perm[s]];
            tet[s + 1] = vid(c[0], c[1], c[2]);
          }
          mesh.tets.push_back(tet);
        }
  mesh.region_of_tet.assign(mesh.tets.size(), 0);
  canonicalize(mesh);

  // Boundary faces from incidence counts; tag = cube side 1..6 (x0,x1,y0,y1,z0,z1).
  std::unordered_map<std::uint64_t, std::pair<int, std::array<int, 3>>> count;
  for (const auto &tet : mesh.tets)
    for (const auto &f : kTetFaces) {
      std::array<int, 3> v{tet[f[0]], tet[f[1]], tet[f[2]]};
      auto &entry = count[face_key(v)];
      entry.first++;
      entry.second = v;
    }
  std::vector<BoundaryFace> faces;
  for (const auto &[key, entry] : count) {
    if (entry.first != 1)
      continue;
    BoundaryFace bf{entry.second, 0};
    std::sort(bf.v.begin(), bf.v.end());
    const Vec3 c = (mesh.vertices[bf.v[0]] + mesh.vertices[bf.v[1]] + mesh.vertices[bf.v[2]]) / 3.0;
    for (int d = 0; d < 3; ++d) {
      if (std::abs(c[d]) < 1e-12)
        bf.tag = 2 * d + 1;
      else if (std::abs(c[d] - 1.0) < 1e-12)
        bf.tag = 2 * d + 2;
    }
    faces.push_back(bf);
  }
  std::sort(faces.begin(), faces.end(),
            [](const BoundaryFace &a, const BoundaryFace &b) { return a.v < b.v; });
  mesh.boundary_faces = std::move(faces);
  return mesh;
}

namespace {

class GmshReader {
public:
  GmshReader(std::istream &in, std::string name) : in_(in), name_(std::move(name)) {}

  Mesh read() {
    Mesh mesh;
    bool have_format = false, have_nodes = false, have_elements = false;
    std::unordered_map<long, int> node_index;
    std::string line;
    while (next(line)) {
      if (line.empty())
        continue;
      if (line == "$MeshFormat") {
        std::string body;
        expect(body, "$MeshFormat");
        std::istringstream ss(body);
        double version = 0;
        int file_type = -1;
        if (!(ss >> version >> file_type))
          fail("$MeshFormat", "malformed header");
        if (version < 2.0 || version >= 3.0)
          fail("$MeshFormat", "only MSH 2.x is supported");
        if (file_type != 0)
          fail("$MeshFormat", "binary files are not supported");
        expect_end("$EndMeshFormat");
        have_format = true;
      } else if (line == "$Nodes") {
        const long count = read_count("$Nodes");
        mesh.vertices.reserve(count);
        for (long i = 0; i < count; ++i) {
          std::string body;
          expect(body, "$Nodes");
          std::istringstream ss(body);
          long id;
          double x, y, z;
          if (!(ss >> id >> x >> y >> z))
            fail("$Nodes", "malformed node record");
          node_index[id] = static_cast<int>(mesh.vertices.size());
          mesh.vertices.emplace_back(x, y, z);
        }
        expect_end("$EndNodes");
        have_nodes = true;
      } else if (line == "$Elements") {
        if (!have_nodes)
          fail("$Elements", "$Elements before $Nodes");
        const long count = read_count("$Elements");
        for (long i = 0; i < count; ++i) {
          std::string body;
          expect(body, "$Elements");
          std::istringstream ss(body);
          long id;
          int type, ntags;
          if (!(ss >> id >> type >> ntags) || ntags < 0)
            fail("$Elements", "malformed element record");
          std::vector<long> tags(ntags);
          for (auto &t : tags)
            if (!(ss >> t))
              fail("$Elements", "missing element tags");
          const int region = ntags > 0 ? static_cast<int>(tags[0]) : 0;
          auto node = [&](const char *what) {
            long nid;
            if (!(ss >> nid))
              fail("$Elements", std::string("missing ") + what + " node");
            auto it = node_index.find(nid);
            if (it == node_index.end())
              fail("$Elements", "unknown node id " + std::to_string(nid));
            return it->second;
          };
          if (type == 4) {
            std::array<int, 4> tet{};
            for (auto &v : tet)
              v = node("tetrahedron");
            mesh.tets.push_back(tet);
            mesh.region_of_tet.push_back(region);
          } else if (type == 2) {
            BoundaryFace bf;
            for (auto &v : bf.v)
              v = node("triangle");
            bf.tag = region;
            mesh.boundary_faces.push_back(bf);
          } else {
            ++mesh.ignored_elements;
          }
        }
        expect_end("$EndElements");
        have_elements = true;
      } else if (line.front() == '$') {
        // Unknown section: skip to its end marker.
        const std::string end = "$End" + line.substr(1);
        std::string body;
        while (true) {
          if (!next(body))
            fail(line, "unterminated section");
          if (body == end)
            break;
        }
      } else {
        fail("<top level>", "unexpected content '" + line + "'");
      }
    }
    if (!have_format)
      fail("$MeshFormat", "missing section");
    if (!have_nodes)
      fail("$Nodes", "missing section");
    if (!have_elements)
      fail("$Elements", "missing section");
    for (auto &bf : mesh.boundary_faces)
      std::sort(bf.v.begin(), bf.v.end());
    canonicalize(mesh);
    return mesh;
  }

private:
  bool next(std::string &line) {
    if (!std::getline(in_, line))
      return false;
    ++line_no_;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t'))
      line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    line = first == std::string::npos ? std::string() : line.substr(first);
    return true;
  }

  void expect(std::string &line, const std::string &section) {
    if (!next(line))
      fail(section, "unexpected end of file (truncated section)");
  }

  long read_count(const std::string &section) {
    std::string line;
    expect(line, section);
    std::istringstream ss(line);
    long count = -1;
    if (!(ss >> count) || count < 0)
      fail(section, "malformed entity count");
    return count;
  }

  void expect_end(const std::string &marker) {
    std::string line;
    const std::string section = "$" + marker.substr(4);
    expect(line, section);
    if (line != marker)
      fail(section, "expected " + marker + ", found '" + line + "'");
  }

  [[noreturn]] void fail(const std::string &section, const std::string &msg) const {
    throw Error(ErrorKind::Parse,
                name_ + ":" + std::to_string(line_no_) + ": section " + section + ": " + msg);
  }

  std::istream &in_;
  std::string name_;
  long line_no_ = 0;
};

} // namespace

Mesh load_gmsh(std::istream &in, const std::string &source_name) {
  return GmshReader(in, source_name).read();
}

Mesh load_gmsh(const std::filesystem::path &path) {
  std::ifstream in(path);
  EQMAX_REQUIRE(in.good(), ErrorKind::InvalidArgument, "cannot open " + path.string());
  return load_gmsh(in, path.string());
}

MeshStats mesh_stats(const Mesh &mesh) {
  MeshStats s;
  const int nt = mesh.num_tets();
  s.h_K.resize(nt);
  s.rho_K.resize(nt);
  s.kappa_K.resize(nt);
  for (int t = 0; t < nt; ++t) {
    const auto x = coords(mesh, mesh.tets[t]);
    const double vol = std::abs(signed_tet_volume(x[0], x[1], x[2], x[3]));
    double area = 0.0;
    for (const auto &f : kTetFaces)
      area += 0.5 * (x[f[1]] - x[f[0]]).cross(x[f[2]] - x[f[0]]).norm();
    const double hK = max_vertex_distance(x);
    EQMAX_REQUIRE(vol >= 1e-12 * hK * hK * hK, ErrorKind::InvalidMesh,
                  "tet " + std::to_string(t) + " is degenerate");
    s.h_K[t] = hK;
    s.rho_K[t] = 2.0 * 3.0 * vol / area;
    s.kappa_K[t] = s.h_K[t] / s.rho_K[t];
    s.h = std::max(s.h, s.h_K[t]);
    s.kappa = std::max(s.kappa, s.kappa_K[t]);
  }
  return s;
}

double boundary_enclosed_volume(const Mesh &mesh) {
  // Orient each boundary face outward using its adjacent tet's opposite vertex.
  std::unordered_map<std::uint64_t, int> opposite;
  for (const auto &tet : mesh.tets)
    for (int i = 0; i < 4; ++i) {
      const auto &f = kTetFaces[i];
      opposite[face_key({tet[f[0]], tet[f[1]], tet[f[2]]})] = tet[i];
    }
  double vol = 0.0;
  for (const auto &bf : mesh.boundary_faces) {
    const Vec3 &a = mesh.vertices[bf.v[0]];
    const Vec3 &b = mesh.vertices[bf.v[1]];
    const Vec3 &c = mesh.vertices[bf.v[2]];
    Vec3 n = (b - a).cross(c - a); // twice the area
    const auto it = opposite.find(face_key(bf.v));
    EQMAX_REQUIRE(it != opposite.end(), ErrorKind::InvalidMesh, "boundary face not on any tet");
    if (n.dot(mesh.vertices[it->second] - a) > 0.0)
      n = -n;
    vol += ((a + b + c) / 3.0).dot(n) / 6.0;
  }
  return vol;
}

std::array<Vec3, 4> Topology::sorted_coords(int t) const {
  return coords(mesh, sorted_tets[t]);
}

int Topology::find_edge(int a, int b) const {
  const auto it = edge_lookup_.find(edge_key(a, b));
  return it == edge_lookup_.end() ? -1 : it->second;
}

int Topology::find_face(int a, int b, int c) const {
  const auto it = face_lookup_.find(face_key({a, b, c}));
  return it == face_lookup_.end() ? -1 : it->second;
}

Topology build_topology(Mesh mesh) {
  Topology topo;
  const int nt = mesh.num_tets();
  const int nv = mesh.num_vertices();
  topo.sorted_tets.resize(nt);
  topo.orientation.resize(nt);
  topo.tet_edges.resize(nt);
  topo.tet_faces.resize(nt);

  for (int t = 0; t < nt; ++t) {
    auto sorted = mesh.tets[t];
    // Parity via insertion-sort swap count.
    int swaps = 0;
    for (int i = 1; i < 4; ++i)
      for (int j = i; j > 0 && sorted[j - 1] > sorted[j]; --j) {
        std::swap(sorted[j - 1], sorted[j]);
        ++swaps;
      }
    topo.sorted_tets[t] = sorted;
    topo.orientation[t] = (swaps % 2 == 0) ? 1 : -1;
  }

  // Edges and faces in order of first appearance over ascending keys, so the
  // numbering depends only on the vertex sets and not on tet order.
  std::vector<std::uint64_t> ekeys, fkeys;
  ekeys.reserve(6 * nt);
  fkeys.reserve(4 * nt);
  for (const auto &s : topo.sorted_tets) {
    for (const auto &e : kTetEdges)
      ekeys.push_back(edge_key(s[e[0]], s[e[1]]));
    for (const auto &f : kTetFaces)
      fkeys.push_back(face_key({s[f[0]], s[f[1]], s[f[2]]}));
  }
  std::sort(ekeys.begin(), ekeys.end());
  ekeys.erase(std::unique(ekeys.begin(), ekeys.end()), ekeys.end());
  std::sort(fkeys.begin(), fkeys.end());
  fkeys.erase(std::unique(fkeys.begin(), fkeys.end()), fkeys.end());

  topo.edges.resize(ekeys.size());
  topo.edge_lookup_.reserve(ekeys.size());
  for (std::size_t i = 0; i < ekeys.size(); ++i) {
    topo.edges[i] = {static_cast<int>(ekeys[i] >> 32), static_cast<int>(ekeys[i] & 0xffffffffu)};
    topo.edge_lookup_.emplace(ekeys[i], static_cast<int>(i));
  }
  topo.faces.resize(fkeys.size());
  topo.face_lookup_.reserve(fkeys.size());
  const std::uint64_t mask = (std::uint64_t{1} << 21) - 1;
  for (std::size_t i = 0; i < fkeys.size(); ++i) {
    topo.faces[i] = {static_cast<int>(fkeys[i] >> 42), static_cast<int>((fkeys[i] >> 21) & mask),
                     static_cast<int>(fkeys[i] & mask)};
    topo.face_lookup_.emplace(fkeys[i], static_cast<int>(i));
  }

  topo.face_tets.assign(fkeys.size(), {-1, -1});
  for (int t = 0; t < nt; ++t) {
    const auto &s = topo.sorted_tets[t];
    for (int e = 0; e < 6; ++e)
      topo.tet_edges[t][e] = topo.edge_lookup_.at(edge_key(s[kTetEdges[e][0]], s[kTetEdges[e][1]]));
    for (int f = 0; f < 4; ++f) {
      const auto &lf = kTetFaces[f];
      const int id = topo.face_lookup_.at(face_key({s[lf[0]], s[lf[1]], s[lf[2]]}));
      topo.tet_faces[t][f] = id;
      auto &inc = topo.face_tets[id];
      if (inc[0] < 0)
        inc[0] = t;
      else if (inc[1] < 0)
        inc[1] = t;
      else
        throw Error(ErrorKind::NonconformingMesh,
                    "face " + std::to_string(id) + " is shared by more than two tets");
    }
  }

  topo.face_on_boundary.assign(topo.faces.size(), 0);
  topo.edge_on_boundary.assign(topo.edges.size(), 0);
  topo.vertex_on_boundary.assign(nv, 0);
  std::vector<std::uint64_t> boundary_keys;
  for (std::size_t f = 0; f < topo.faces.size(); ++f) {
    if (topo.face_tets[f][1] >= 0)
      continue;
    topo.face_on_boundary[f] = 1;
    const auto &v = topo.faces[f];
    boundary_keys.push_back(fkeys[f]);
    for (int i = 0; i < 3; ++i) {
      topo.vertex_on_boundary[v[i]] = 1;
      topo.edge_on_boundary[topo.edge_lookup_.at(edge_key(v[i], v[(i + 1) % 3]))] = 1;
    }
  }

  if (mesh.boundary_faces.empty()) {
    for (std::size_t f = 0; f < topo.faces.size(); ++f)
      if (topo.face_on_boundary[f])
        mesh.boundary_faces.push_back({topo.faces[f], 0});
  } else {
    std::vector<std::uint64_t> given;
    for (const auto &bf : mesh.boundary_faces)
      given.push_back(face_key(bf.v));
    std::sort(given.begin(), given.end());
    given.erase(std::unique(given.begin(), given.end()), given.end());
    EQMAX_REQUIRE(given == boundary_keys, ErrorKind::InvalidMesh,
                  "boundary faces do not match the topological boundary");
  }

  topo.vertex_tet_offsets.assign(nv + 1, 0);
  for (const auto &tet : mesh.tets)
    for (int v : tet)
      ++topo.vertex_tet_offsets[v + 1];
  std::partial_sum(topo.vertex_tet_offsets.begin(), topo.vertex_tet_offsets.end(),
                   topo.vertex_tet_offsets.begin());
  topo.vertex_tets.resize(topo.vertex_tet_offsets.back());
  std::vector<int> fill(topo.vertex_tet_offsets.begin(), topo.vertex_tet_offsets.end() - 1);
  for (int t = 0; t < nt; ++t)
    for (int v : mesh.tets[t])
      topo.vertex_tets[fill[v]++] = t;

  topo.mesh = std::move(mesh);
  return topo;
}

Patch build_vertex_patch(const Topology &topo, int a) {
  EQMAX_REQUIRE(a >= 0 && a < topo.num_vertices(), ErrorKind::InvalidArgument,
                "vertex index out of range");
  Patch patch;
  patch.center = a;
  patch.interior = !topo.vertex_on_boundary[a];
  patch.tets.assign(topo.vertex_tets.begin() + topo.vertex_tet_offsets[a],
                    topo.vertex_tets.begin() + topo.vertex_tet_offsets[a + 1]);
  std::sort(patch.tets.begin(), patch.tets.end());

  for (int t : patch.tets)
    for (int v : topo.mesh.tets[t])
      patch.vertices.push_back(v);
  std::sort(patch.vertices.begin(), patch.vertices.end());
  patch.vertices.erase(std::unique(patch.vertices.begin(), patch.vertices.end()),
                       patch.vertices.end());

  std::unordered_map<int, int> to_local;
  for (std::size_t i = 0; i < patch.vertices.size(); ++i)
    to_local[patch.vertices[i]] = static_cast<int>(i);
  patch.local_center = to_local.at(a);

  Mesh local;
  local.vertices.reserve(patch.vertices.size());
  for (int v : patch.vertices)
    local.vertices.push_back(topo.mesh.vertices[v]);
  for (int t : patch.tets) {
    std::array<int, 4> lt{};
    for (int i = 0; i < 4; ++i)
      lt[i] = to_local.at(topo.mesh.tets[t][i]);
    local.tets.push_back(lt);
    local.region_of_tet.push_back(topo.mesh.region_of_tet[t]);
  }
  auto ltopo = std::make_shared<Topology>(build_topology(std::move(local)));

  for (const auto &e : ltopo->edges)
    patch.edges.push_back(topo.find_edge(patch.vertices[e[0]], patch.vertices[e[1]]));
  for (const auto &f : ltopo->faces)
    patch.faces.push_back(
        topo.find_face(patch.vertices[f[0]], patch.vertices[f[1]], patch.vertices[f[2]]));

  for (int f = 0; f < ltopo->num_faces(); ++f) {
    if (!ltopo->face_on_boundary[f])
      continue;
    const auto &v = ltopo->faces[f];
    const bool has_center = v[0] == patch.local_center || v[1] == patch.local_center ||
                            v[2] == patch.local_center;
    (has_center ? patch.gamma_faces : patch.gamma_c_faces).push_back(f);
  }

  for (std::size_t i = 0; i < patch.vertices.size(); ++i)
    for (std::size_t j = i + 1; j < patch.vertices.size(); ++j)
      patch.diameter =
          std::max(patch.diameter, (topo.mesh.vertices[patch.vertices[i]] -
                                    topo.mesh.vertices[patch.vertices[j]]).norm());
  patch.local = std::move(ltopo);
  return patch;
}

} // namespace eqmax
