#ifndef M3DVG_RENDER_HPP_
#define M3DVG_RENDER_HPP_

// Wireframe overlay export: projects 3D boxes through the camera and writes
// the twelve edges of each as SVG line elements. No rasterization.

#include <array>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "m3dvg/geometry.hpp"

namespace m3dvg {

struct WireframeBox {
  Box3D box;
  std::string label;
  std::string color = "#00c000";
};

// Corner index pairs: bottom face, top face, then the four verticals.
inline constexpr std::array<std::pair<int, int>, 12> kBoxEdges = {{{0, 1},
                                                                   {1, 2},
                                                                   {2, 3},
                                                                   {3, 0},
                                                                   {4, 5},
                                                                   {5, 6},
                                                                   {6, 7},
                                                                   {7, 4},
                                                                   {0, 4},
                                                                   {1, 5},
                                                                   {2, 6},
                                                                   {3, 7}}};

inline std::array<Vec2, 8> project_corners(const Box3D& b, const CameraCalib& c) {
  b.validate();
  c.validate();
  std::array<Vec2, 8> out;
  auto corners = corners_3d(b);
  for (int i = 0; i < 8; ++i) {
    if (!(corners[i].z > 0 && corners[i].z + c.tz > 0))
      throw ValidationError("render: box corner " + std::to_string(i) +
                            " is behind the camera (z = " + std::to_string(corners[i].z) + ")");
    out[i] = project_center(corners[i], c);
  }
  return out;
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

inline std::string render_svg(const std::vector<WireframeBox>& boxes, const CameraCalib& calib,
                              double width, double height) {
  if (!(width > 0 && height > 0)) throw ContractError("render: canvas size must be positive");
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" "
                "viewBox=\"0 0 %.0f %.0f\">\n",
                width, height, width, height);
  std::string out = buf;
  for (const WireframeBox& w : boxes) {
    auto p = project_corners(w.box, calib);
    out += "  <g stroke=\"" + xml_escape(w.color) + "\" fill=\"none\" stroke-width=\"2\">\n";
    if (!w.label.empty()) {
      std::snprintf(buf, sizeof buf, "    <text x=\"%.3f\" y=\"%.3f\" fill=\"%s\">", p[4].x,
                    p[4].y - 4, xml_escape(w.color).c_str());
      out += buf + xml_escape(w.label) + "</text>\n";
    }
    for (auto [i, j] : kBoxEdges) {
      std::snprintf(buf, sizeof buf,
                    "    <line x1=\"%.3f\" y1=\"%.3f\" x2=\"%.3f\" y2=\"%.3f\"/>\n", p[i].x,
                    p[i].y, p[j].x, p[j].y);
      out += buf;
    }
    out += "  </g>\n";
  }
  return out + "</svg>\n";
}

}  // namespace m3dvg

#endif  // M3DVG_RENDER_HPP_
