#include "foldcity/ingest/obj.hpp"

#include <charconv>
#include <cstdlib>
#include <string>
#include <vector>

#include "foldcity/error.hpp"

namespace foldcity::ingest {
namespace {

void append_double(std::string& out, double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

std::string_view next_token(std::string_view& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) {
    s = {};
    return {};
  }
  std::size_t e = s.find_first_of(" \t\r", b);
  if (e == std::string_view::npos) e = s.size();
  std::string_view tok = s.substr(b, e - b);
  s.remove_prefix(e);
  return tok;
}

[[noreturn]] void fail(std::size_t line, const std::string& what) {
  throw DataError("OBJ line " + std::to_string(line) + ": " + what);
}

double parse_double(std::string_view tok, std::size_t line) {
  double v = 0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) fail(line, "bad number '" + std::string(tok) + "'");
  return v;
}

}  // namespace

std::string export_obj(const TriangleMesh& mesh) {
  std::string out;
  out.reserve(mesh.vertices.size() * 60 + mesh.triangles.size() * 24);
  for (const Point3& p : mesh.vertices) {
    out += "v ";
    append_double(out, p.x());
    out += ' ';
    append_double(out, p.y());
    out += ' ';
    append_double(out, p.z());
    out += '\n';
  }
  for (const Triangle& t : mesh.triangles) {
    out += "f " + std::to_string(t[0] + 1) + ' ' + std::to_string(t[1] + 1) + ' ' + std::to_string(t[2] + 1) + '\n';
  }
  return out;
}

TriangleMesh import_obj(std::string_view text) {
  TriangleMesh mesh;
  struct PendingFace {
    std::size_t line;
    std::vector<long long> refs;
  };
  std::vector<PendingFace> faces;
  std::size_t line_no = 0;
  while (!text.empty()) {
    std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    std::string_view kw = next_token(line);
    if (kw == "v") {
      Point3 p;
      for (int i = 0; i < 3; ++i) {
        std::string_view tok = next_token(line);
        if (tok.empty()) fail(line_no, "vertex needs 3 coordinates");
        p[i] = parse_double(tok, line_no);
      }
      if (!p.allFinite()) fail(line_no, "non-finite vertex");
      mesh.vertices.push_back(p);
    } else if (kw == "f") {
      PendingFace face{line_no, {}};
      for (std::string_view tok = next_token(line); !tok.empty(); tok = next_token(line)) {
        tok = tok.substr(0, tok.find('/'));
        long long idx = 0;
        auto res = std::from_chars(tok.data(), tok.data() + tok.size(), idx);
        if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) fail(line_no, "bad face index");
        if (idx == 0) fail(line_no, "face index 0 (indices are 1-based)");
        if (idx < 0) idx = static_cast<long long>(mesh.vertices.size()) + idx + 1;
        face.refs.push_back(idx);
      }
      if (face.refs.size() < 3) fail(line_no, "face needs at least 3 vertices");
      faces.push_back(std::move(face));
    }
  }
  const auto nv = static_cast<long long>(mesh.vertices.size());
  for (const auto& face : faces) {
    for (long long r : face.refs) {
      if (r < 1 || r > nv) fail(face.line, "face index " + std::to_string(r) + " out of range");
    }
    for (std::size_t k = 1; k + 1 < face.refs.size(); ++k) {
      mesh.triangles.push_back({static_cast<std::uint32_t>(face.refs[0] - 1), static_cast<std::uint32_t>(face.refs[k] - 1),
                                static_cast<std::uint32_t>(face.refs[k + 1] - 1)});
    }
  }
  return mesh;
}

}  // namespace foldcity::ingest
