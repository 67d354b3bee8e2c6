#include "ecoprod/plot.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace ecoprod::plot {

namespace {

constexpr std::array<const char*, 10> kPalette = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                                  "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
                                                  "#bcbd22", "#17becf"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Range {
  double lo;
  double hi;
  double map(double v, double a, double b) const {
    return hi > lo ? a + (v - lo) / (hi - lo) * (b - a) : 0.5 * (a + b);
  }
};

Range range_of(const Eigen::Ref<const Vector>& v) {
  if (v.size() == 0) {
    return {0.0, 1.0};
  }
  return {v.minCoeff(), v.maxCoeff()};
}

std::string header(int width, int height, const std::string& title) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" "
     << "font-size=\"14\">" << escape(title) << "</text>\n";
  return os.str();
}

}  // namespace

std::string scatter_svg(const Matrix& points, const std::vector<int>& labels, const std::string& title) {
  if (points.cols() != 2 || static_cast<std::size_t>(points.rows()) != labels.size()) {
    throw Error("scatter plot needs an n x 2 matrix and one label per point");
  }
  constexpr int w = 640;
  constexpr int h = 480;
  constexpr int margin = 40;
  const Range rx = range_of(points.col(0));
  const Range ry = range_of(points.col(1));
  std::ostringstream os;
  os << header(w, h, title);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const int label = labels[static_cast<std::size_t>(i)];
    const char* colour = kPalette[static_cast<std::size_t>(std::max(label, 0)) % kPalette.size()];
    os << "<circle cx=\"" << fmt(rx.map(points(i, 0), margin, w - margin)) << "\" cy=\""
       << fmt(ry.map(points(i, 1), h - margin, margin)) << "\" r=\"2.5\" fill=\"" << colour
       << "\" fill-opacity=\"0.7\"/>\n";
  }
  const int k = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  for (int c = 0; c < k; ++c) {
    os << "<text x=\"" << w - margin + 4 << "\" y=\"" << margin + 14 * c
       << "\" font-family=\"sans-serif\" font-size=\"10\" fill=\""
       << kPalette[static_cast<std::size_t>(c) % kPalette.size()] << "\">" << c << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string beeswarm_svg(const Matrix& phi, const Matrix& feature_values,
                         const std::vector<std::string>& names, const std::vector<int>& order,
                         const std::string& title) {
  if (phi.rows() != feature_values.rows() || phi.cols() != feature_values.cols() ||
      static_cast<std::size_t>(phi.cols()) != names.size()) {
    throw Error("beeswarm plot: attribution, value and name shapes disagree");
  }
  constexpr int w = 720;
  constexpr int row_height = 22;
  constexpr int left = 180;
  constexpr int right = 30;
  const int h = 60 + row_height * static_cast<int>(order.size());
  const double extent = phi.size() > 0 ? std::max(phi.cwiseAbs().maxCoeff(), 1e-12) : 1.0;
  const Range rx{-extent, extent};
  std::ostringstream os;
  os << header(w, h, title);
  const double zero_x = rx.map(0.0, left, w - right);
  os << "<line x1=\"" << fmt(zero_x) << "\" y1=\"30\" x2=\"" << fmt(zero_x) << "\" y2=\"" << h - 20
     << "\" stroke=\"#999\"/>\n";
  for (std::size_t r = 0; r < order.size(); ++r) {
    const int f = order[r];
    const double y = 45.0 + row_height * static_cast<double>(r);
    os << "<text x=\"" << left - 8 << "\" y=\"" << fmt(y + 4) << "\" text-anchor=\"end\" "
       << "font-family=\"sans-serif\" font-size=\"11\">" << escape(names[static_cast<std::size_t>(f)])
       << "</text>\n";
    const Range rv = range_of(feature_values.col(f));
    for (Eigen::Index i = 0; i < phi.rows(); ++i) {
      const double share = rv.map(feature_values(i, f), 0.0, 1.0);
      const int red = static_cast<int>(255 * share);
      const int blue = 255 - red;
      // Deterministic vertical jitter spreads overlapping points.
      const double jitter = (static_cast<double>((i * 7919) % 13) - 6.0) * 0.9;
      os << "<circle cx=\"" << fmt(rx.map(phi(i, f), left, w - right)) << "\" cy=\"" << fmt(y + jitter)
         << "\" r=\"2\" fill=\"rgb(" << red << ",40," << blue << ")\" fill-opacity=\"0.6\"/>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

std::string bar_svg(const std::vector<std::string>& labels, const std::vector<double>& values,
                    const std::string& title) {
  if (labels.size() != values.size()) {
    throw Error("bar plot needs one label per value");
  }
  constexpr int w = 640;
  constexpr int row_height = 22;
  constexpr int left = 180;
  const int h = 50 + row_height * static_cast<int>(values.size());
  double extent = 1e-12;
  for (double v : values) {
    extent = std::max(extent, std::abs(v));
  }
  std::ostringstream os;
  os << header(w, h, title);
  const double scale = (w - left - 30) / extent;
  for (std::size_t r = 0; r < values.size(); ++r) {
    const double y = 35.0 + row_height * static_cast<double>(r);
    os << "<text x=\"" << left - 8 << "\" y=\"" << fmt(y + 12) << "\" text-anchor=\"end\" "
       << "font-family=\"sans-serif\" font-size=\"11\">" << escape(labels[r]) << "</text>\n"
       << "<rect x=\"" << left << "\" y=\"" << fmt(y) << "\" width=\""
       << fmt(std::abs(values[r]) * scale) << "\" height=\"" << row_height - 6 << "\" fill=\""
       << (values[r] >= 0.0 ? kPalette[0] : kPalette[3]) << "\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error("cannot write " + path.string());
  }
  out << text;
  if (!out) {
    throw Error("write failed for " + path.string());
  }
}

}  // namespace ecoprod::plot
