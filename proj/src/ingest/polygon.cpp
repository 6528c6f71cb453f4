#include "foldcity/ingest/polygon.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <list>
#include <numeric>
#include <optional>

namespace foldcity::ingest {
namespace {

double cross2(const Point2& o, const Point2& a, const Point2& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

Point3 newell_normal(const std::vector<Point3>& ring) {
  Point3 n = Point3::Zero();
  for (std::size_t i = 0; i < ring.size(); ++i) {
    const Point3& a = ring[i];
    const Point3& b = ring[(i + 1) % ring.size()];
    n.x() += (a.y() - b.y()) * (a.z() + b.z());
    n.y() += (a.z() - b.z()) * (a.x() + b.x());
    n.z() += (a.x() - b.x()) * (a.y() + b.y());
  }
  return n;
}

double signed_area2(const std::vector<Point2>& ring) {
  double s = 0;
  for (std::size_t i = 0; i < ring.size(); ++i) {
    const Point2& a = ring[i];
    const Point2& b = ring[(i + 1) % ring.size()];
    s += a.x() * b.y() - b.x() * a.y();
  }
  return 0.5 * s;
}

std::string ring_name(const PolygonSurface& s, int ring) {
  std::string who = s.id.empty() ? std::string("polygon") : "polygon " + s.id;
  return ring < 0 ? who + " exterior ring" : who + " interior ring " + std::to_string(ring);
}

// Proper or touching intersection of closed segments ab and cd.
bool segments_intersect(const Point2& a, const Point2& b, const Point2& c, const Point2& d, double eps) {
  auto on_segment = [eps](const Point2& p, const Point2& q, const Point2& r) {
    return std::min(p.x(), r.x()) - eps <= q.x() && q.x() <= std::max(p.x(), r.x()) + eps &&
           std::min(p.y(), r.y()) - eps <= q.y() && q.y() <= std::max(p.y(), r.y()) + eps;
  };
  auto sgn = [eps](double v) { return v > eps ? 1 : (v < -eps ? -1 : 0); };
  const int o1 = sgn(cross2(a, b, c));
  const int o2 = sgn(cross2(a, b, d));
  const int o3 = sgn(cross2(c, d, a));
  const int o4 = sgn(cross2(c, d, b));
  if (o1 != o2 && o3 != o4 && o1 != 0 && o2 != 0 && o3 != 0 && o4 != 0) return true;
  if (o1 == 0 && on_segment(a, c, b)) return true;
  if (o2 == 0 && on_segment(a, d, b)) return true;
  if (o3 == 0 && on_segment(c, a, d)) return true;
  if (o4 == 0 && on_segment(c, b, d)) return true;
  return false;
}

struct Ring2 {
  std::vector<Point2> pts;
  std::uint32_t base = 0;  // offset into the shared vertex table
};

void check_simple(const std::vector<Ring2>& rings, const PolygonSurface& s, double eps) {
  struct Edge {
    int ring;
    std::size_t i;
  };
  std::vector<Edge> edges;
  for (std::size_t r = 0; r < rings.size(); ++r) {
    for (std::size_t i = 0; i < rings[r].pts.size(); ++i) edges.push_back({static_cast<int>(r), i});
  }
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto& re = rings[edges[e].ring].pts;
    const Point2& a = re[edges[e].i];
    const Point2& b = re[(edges[e].i + 1) % re.size()];
    for (std::size_t f = e + 1; f < edges.size(); ++f) {
      const auto& rf = rings[edges[f].ring].pts;
      if (edges[e].ring == edges[f].ring) {
        const std::size_t n = rf.size();
        const std::size_t i = edges[e].i, j = edges[f].i;
        if ((i + 1) % n == j || (j + 1) % n == i) continue;  // adjacent edges share a vertex
      }
      const Point2& c = rf[edges[f].i];
      const Point2& d = rf[(edges[f].i + 1) % rf.size()];
      if (segments_intersect(a, b, c, d, eps)) {
        throw TriangulationError(ring_name(s, edges[e].ring - 1) + ": self-intersecting");
      }
    }
  }
}

bool point_in_triangle(const Point2& p, const Point2& a, const Point2& b, const Point2& c) {
  // Inclusive of the boundary; triangle is counter-clockwise.
  return cross2(a, b, p) >= 0 && cross2(b, c, p) >= 0 && cross2(c, a, p) >= 0;
}

// Splices hole into outer (both as index lists into `pts`) using a mutually
// visible bridge found by casting a ray from the hole's rightmost vertex.
void bridge_hole(std::vector<std::uint32_t>& outer, const std::vector<std::uint32_t>& hole,
                 const std::vector<Point2>& pts) {
  std::size_t hm = 0;
  for (std::size_t i = 1; i < hole.size(); ++i) {
    const Point2& p = pts[hole[i]];
    const Point2& q = pts[hole[hm]];
    if (p.x() > q.x() || (p.x() == q.x() && p.y() < q.y())) hm = i;
  }
  const Point2 m = pts[hole[hm]];

  double best_x = std::numeric_limits<double>::infinity();
  std::optional<std::size_t> best_edge;
  for (std::size_t i = 0; i < outer.size(); ++i) {
    const Point2& a = pts[outer[i]];
    const Point2& b = pts[outer[(i + 1) % outer.size()]];
    if ((a.y() > m.y()) == (b.y() > m.y()) && a.y() != m.y() && b.y() != m.y()) continue;
    if (a.y() == b.y()) {
      if (a.y() != m.y()) continue;
      const double x = std::min(a.x(), b.x());
      if (x >= m.x() && x < best_x) {
        best_x = x;
        best_edge = i;
      }
      continue;
    }
    if (std::min(a.y(), b.y()) > m.y() || std::max(a.y(), b.y()) < m.y()) continue;
    const double t = (m.y() - a.y()) / (b.y() - a.y());
    const double x = a.x() + t * (b.x() - a.x());
    if (x >= m.x() && x < best_x) {
      best_x = x;
      best_edge = i;
    }
  }
  if (!best_edge) throw TriangulationError("hole is not inside the exterior ring");

  const std::size_t ea = *best_edge;
  const std::size_t eb = (ea + 1) % outer.size();
  const Point2 hit(best_x, m.y());
  std::size_t p = pts[outer[ea]].x() >= pts[outer[eb]].x() ? ea : eb;
  if (pts[outer[ea]] == hit) p = ea;
  if (pts[outer[eb]] == hit) p = eb;

  if (pts[outer[p]] != hit) {
    // A reflex vertex inside triangle (m, hit, P) would block visibility; pick
    // the one with the smallest angle to the ray.
    const Point2 pp = pts[outer[p]];
    Point2 t0 = m, t1 = hit, t2 = pp;
    if (cross2(t0, t1, t2) < 0) std::swap(t1, t2);
    double best_angle = std::numeric_limits<double>::infinity();
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < outer.size(); ++i) {
      if (i == p) continue;
      const Point2& v = pts[outer[i]];
      const Point2& prev = pts[outer[(i + outer.size() - 1) % outer.size()]];
      const Point2& next = pts[outer[(i + 1) % outer.size()]];
      const bool reflex = cross2(prev, v, next) <= 0;
      if (!reflex || !point_in_triangle(v, t0, t1, t2) || v == m) continue;
      const Point2 d = v - m;
      const double angle = std::atan2(std::abs(d.y()), d.x());
      const double dist = d.squaredNorm();
      if (angle < best_angle || (angle == best_angle && dist < best_dist)) {
        best_angle = angle;
        best_dist = dist;
        p = i;
      }
    }
  }

  std::vector<std::uint32_t> merged;
  merged.reserve(outer.size() + hole.size() + 2);
  for (std::size_t i = 0; i <= p; ++i) merged.push_back(outer[i]);
  for (std::size_t k = 0; k <= hole.size(); ++k) merged.push_back(hole[(hm + k) % hole.size()]);
  merged.push_back(outer[p]);
  for (std::size_t i = p + 1; i < outer.size(); ++i) merged.push_back(outer[i]);
  outer = std::move(merged);
}

std::vector<Triangle> ear_clip(std::vector<std::uint32_t> poly, const std::vector<Point2>& pts) {
  std::vector<Triangle> out;
  if (poly.size() < 3) return out;
  out.reserve(poly.size() - 2);

  auto is_ear = [&](std::size_t i) {
    const std::size_t n = poly.size();
    const std::uint32_t ia = poly[(i + n - 1) % n], ib = poly[i], ic = poly[(i + 1) % n];
    const Point2& a = pts[ia];
    const Point2& b = pts[ib];
    const Point2& c = pts[ic];
    if (cross2(a, b, c) <= 0) return false;
    for (std::size_t j = 0; j < n; ++j) {
      const std::uint32_t iv = poly[j];
      if (iv == ia || iv == ib || iv == ic) continue;
      const Point2& v = pts[iv];
      if (v == a || v == b || v == c) continue;  // bridge duplicates
      if (point_in_triangle(v, a, b, c)) return false;
    }
    return true;
  };

  std::size_t i = 0;
  std::size_t stalled = 0;
  while (poly.size() > 3) {
    const std::size_t n = poly.size();
    if (is_ear(i % n)) {
      const std::size_t k = i % n;
      out.push_back({poly[(k + n - 1) % n], poly[k], poly[(k + 1) % n]});
      poly.erase(poly.begin() + static_cast<std::ptrdiff_t>(k));
      stalled = 0;
      if (k == 0) i = 0; else i = k - 1;
      continue;
    }
    ++i;
    if (++stalled > n) throw TriangulationError("no ear found (polygon is not simple)");
  }
  const Point2& a = pts[poly[0]];
  const Point2& b = pts[poly[1]];
  const Point2& c = pts[poly[2]];
  if (cross2(a, b, c) > 0) out.push_back({poly[0], poly[1], poly[2]});
  return out;
}

}  // namespace

std::vector<Point3> open_ring(std::vector<Point3> ring) {
  std::vector<Point3> out;
  out.reserve(ring.size());
  for (const Point3& p : ring) {
    if (out.empty() || out.back() != p) out.push_back(p);
  }
  while (out.size() > 1 && out.front() == out.back()) out.pop_back();
  return out;
}

double polygon_area(const PolygonSurface& surface) {
  const Point3 n = newell_normal(surface.exterior);
  const double len = n.norm();
  if (len == 0) return 0;
  const Point3 unit = n / len;
  double area = 0.5 * len;
  for (const auto& hole : surface.interiors) area -= 0.5 * std::abs(newell_normal(hole).dot(unit));
  return area;
}

Triangulation triangulate_polygon(const PolygonSurface& surface) {
  Triangulation result;
  std::vector<std::vector<Point3>> rings;
  rings.push_back(open_ring(surface.exterior));
  for (const auto& h : surface.interiors) rings.push_back(open_ring(h));

  for (std::size_t r = 0; r < rings.size(); ++r) {
    if (rings[r].size() < 3) {
      throw TriangulationError(ring_name(surface, static_cast<int>(r) - 1) + ": fewer than 3 distinct vertices");
    }
    for (const Point3& p : rings[r]) {
      if (!p.allFinite()) throw TriangulationError(ring_name(surface, static_cast<int>(r) - 1) + ": non-finite vertex");
    }
  }

  const Point3 nn = newell_normal(rings[0]);
  double extent = 0;
  for (const Point3& p : rings[0]) extent = std::max(extent, (p - rings[0][0]).norm());
  if (nn.norm() <= 1e-12 * std::max(1.0, extent * extent)) {
    throw TriangulationError(ring_name(surface, -1) + ": zero area");
  }

  // Least-squares plane through the centroid of all ring vertices.
  Point3 centroid = Point3::Zero();
  std::size_t count = 0;
  for (const auto& ring : rings) {
    for (const Point3& p : ring) centroid += p;
    count += ring.size();
  }
  centroid /= static_cast<double>(count);
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& ring : rings) {
    for (const Point3& p : ring) {
      const Point3 d = p - centroid;
      cov += d * d.transpose();
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
  Point3 normal = eig.eigenvectors().col(0);
  if (normal.dot(nn) < 0) normal = -normal;
  for (std::size_t r = 0; r < rings.size(); ++r) {
    for (const Point3& p : rings[r]) {
      if (std::abs((p - centroid).dot(normal)) > kPlaneTolerance) {
        throw TriangulationError(ring_name(surface, static_cast<int>(r) - 1) + ": vertices not coplanar");
      }
    }
  }

  // Right-handed in-plane basis so the exterior ring projects counter-clockwise.
  const Point3 helper = std::abs(normal.x()) < 0.9 ? Point3::UnitX() : Point3::UnitY();
  const Point3 u = normal.cross(helper).normalized();
  const Point3 v = normal.cross(u);

  std::vector<Point2> pts;
  std::vector<Ring2> rings2;
  for (const auto& ring : rings) {
    Ring2 r2;
    r2.base = static_cast<std::uint32_t>(pts.size());
    for (const Point3& p : ring) {
      const Point3 d = p - centroid;
      r2.pts.emplace_back(d.dot(u), d.dot(v));
      pts.push_back(r2.pts.back());
      result.vertices.push_back(p);
    }
    rings2.push_back(std::move(r2));
  }

  const double eps = 1e-12 * std::max(1.0, extent * extent);
  check_simple(rings2, surface, eps);

  if (signed_area2(rings2[0].pts) <= 0) {
    throw TriangulationError(ring_name(surface, -1) + ": orientation disagrees with plane normal");
  }

  std::vector<std::uint32_t> outer(rings2[0].pts.size());
  std::iota(outer.begin(), outer.end(), 0u);

  std::vector<std::vector<std::uint32_t>> holes;
  for (std::size_t r = 1; r < rings2.size(); ++r) {
    if (std::abs(signed_area2(rings2[r].pts)) <= eps) {
      throw TriangulationError(ring_name(surface, static_cast<int>(r) - 1) + ": zero area");
    }
    std::vector<std::uint32_t> idx(rings2[r].pts.size());
    std::iota(idx.begin(), idx.end(), rings2[r].base);
    if (signed_area2(rings2[r].pts) > 0) std::reverse(idx.begin(), idx.end());
    holes.push_back(std::move(idx));
  }
  std::sort(holes.begin(), holes.end(), [&](const auto& a, const auto& b) {
    auto maxx = [&](const auto& h) {
      double m = -std::numeric_limits<double>::infinity();
      for (auto i : h) m = std::max(m, pts[i].x());
      return m;
    };
    return maxx(a) > maxx(b);
  });
  for (const auto& hole : holes) {
    try {
      bridge_hole(outer, hole, pts);
    } catch (const TriangulationError& e) {
      throw TriangulationError(ring_name(surface, 0) + ": " + e.what());
    }
  }

  try {
    result.triangles = ear_clip(std::move(outer), pts);
  } catch (const TriangulationError& e) {
    throw TriangulationError(ring_name(surface, -1) + ": " + e.what());
  }
  return result;
}

std::size_t MeshAssembler::KeyHash::operator()(const std::array<double, 3>& k) const noexcept {
  std::size_t h = 0xcbf29ce484222325ULL;
  for (double d : k) {
    h ^= std::bit_cast<std::uint64_t>(d == 0.0 ? 0.0 : d);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint32_t MeshAssembler::vertex_index(const Point3& p) {
  const std::array<double, 3> key{p.x(), p.y(), p.z()};
  auto [it, inserted] = lookup_.try_emplace(key, static_cast<std::uint32_t>(mesh_.vertices.size()));
  if (inserted) mesh_.vertices.push_back(p);
  return it->second;
}

void MeshAssembler::add(const Triangulation& t) {
  std::vector<std::uint32_t> remap(t.vertices.size());
  for (std::size_t i = 0; i < t.vertices.size(); ++i) remap[i] = vertex_index(t.vertices[i]);
  for (const Triangle& tri : t.triangles) mesh_.triangles.push_back({remap[tri[0]], remap[tri[1]], remap[tri[2]]});
}

TriangleMesh MeshAssembler::take() {
  lookup_.clear();
  return std::exchange(mesh_, {});
}

}  // namespace foldcity::ingest
