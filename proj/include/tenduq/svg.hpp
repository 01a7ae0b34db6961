#ifndef TENDUQ_SVG_HPP
#define TENDUQ_SVG_HPP

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace tenduq::svg {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

inline std::string label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

inline std::string escape(const std::string& s) {
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

/// Blue-to-red ramp for t in [0, 1].
inline std::string ramp(double t) {
  t = std::clamp(t, 0.0, 1.0);
  const int r = static_cast<int>(std::lround(40 + 200 * t));
  const int g = static_cast<int>(std::lround(80 + 80 * (1 - std::abs(2 * t - 1))));
  const int b = static_cast<int>(std::lround(220 - 190 * t));
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

/// One chart panel with linear axes.
class Plot {
 public:
  Plot(double width, double height, std::string title) : w_(width), h_(height), title_(std::move(title)) {}

  void set_range(double x0, double x1, double y0, double y1) {
    if (x1 <= x0) x1 = x0 + 1;
    if (y1 <= y0) y1 = y0 + 1;
    x0_ = x0, x1_ = x1, y0_ = y0, y1_ = y1;
  }
  void set_labels(std::string x, std::string y) {
    xlabel_ = std::move(x);
    ylabel_ = std::move(y);
  }

  double px(double x) const { return left_ + (x - x0_) / (x1_ - x0_) * (w_ - left_ - right_); }
  double py(double y) const { return h_ - bottom_ - (y - y0_) / (y1_ - y0_) * (h_ - top_ - bottom_); }

  void line(double xa, double ya, double xb, double yb, const std::string& stroke, double width = 1.0) {
    body_ << "<line x1=\"" << num(px(xa)) << "\" y1=\"" << num(py(ya)) << "\" x2=\"" << num(px(xb)) << "\" y2=\""
          << num(py(yb)) << "\" stroke=\"" << stroke << "\" stroke-width=\"" << num(width) << "\"/>\n";
  }
  void circle(double x, double y, double r, const std::string& fill, const std::string& stroke = "none") {
    body_ << "<circle cx=\"" << num(px(x)) << "\" cy=\"" << num(py(y)) << "\" r=\"" << num(r) << "\" fill=\"" << fill
          << "\" stroke=\"" << stroke << "\"/>\n";
  }
  void rect(double xa, double ya, double xb, double yb, const std::string& fill) {
    const double x = std::min(px(xa), px(xb)), y = std::min(py(ya), py(yb));
    body_ << "<rect x=\"" << num(x) << "\" y=\"" << num(y) << "\" width=\"" << num(std::abs(px(xb) - px(xa)))
          << "\" height=\"" << num(std::abs(py(yb) - py(ya))) << "\" fill=\"" << fill << "\"/>\n";
  }
  void text(double x, double y, const std::string& s, int size = 11, const std::string& anchor = "middle") {
    body_ << "<text x=\"" << num(px(x)) << "\" y=\"" << num(py(y)) << "\" font-size=\"" << size
          << "\" text-anchor=\"" << anchor << "\">" << escape(s) << "</text>\n";
  }

  std::string render(double offset_y = 0.0) const {
    std::ostringstream s;
    s << "<g transform=\"translate(0," << num(offset_y) << ")\">\n";
    s << "<text x=\"" << num(w_ / 2) << "\" y=\"18\" font-size=\"14\" text-anchor=\"middle\">" << escape(title_)
      << "</text>\n";
    const double xa = left_, xb = w_ - right_, ya = h_ - bottom_, yb = top_;
    s << "<rect x=\"" << num(xa) << "\" y=\"" << num(yb) << "\" width=\"" << num(xb - xa) << "\" height=\""
      << num(ya - yb) << "\" fill=\"none\" stroke=\"#333\"/>\n";
    for (int i = 0; i <= 4; ++i) {
      const double xv = x0_ + (x1_ - x0_) * i / 4.0, yv = y0_ + (y1_ - y0_) * i / 4.0;
      s << "<text x=\"" << num(px(xv)) << "\" y=\"" << num(ya + 14) << "\" font-size=\"10\" text-anchor=\"middle\">"
        << label(xv) << "</text>\n";
      s << "<text x=\"" << num(xa - 4) << "\" y=\"" << num(py(yv) + 3) << "\" font-size=\"10\" text-anchor=\"end\">"
        << label(yv) << "</text>\n";
    }
    s << "<text x=\"" << num((xa + xb) / 2) << "\" y=\"" << num(h_ - 6) << "\" font-size=\"11\" text-anchor=\"middle\">"
      << escape(xlabel_) << "</text>\n";
    s << "<text x=\"14\" y=\"" << num((ya + yb) / 2) << "\" font-size=\"11\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
      << num((ya + yb) / 2) << ")\">" << escape(ylabel_) << "</text>\n";
    s << body_.str() << "</g>\n";
    return s.str();
  }

  double height() const { return h_; }
  double width() const { return w_; }

 private:
  double w_, h_;
  std::string title_, xlabel_, ylabel_;
  double left_ = 60, right_ = 20, top_ = 30, bottom_ = 40;
  double x0_ = 0, x1_ = 1, y0_ = 0, y1_ = 1;
  std::ostringstream body_;
};

/// Stacks panels vertically into one document.
inline std::string document(const std::vector<const Plot*>& panels) {
  double w = 0, h = 0;
  for (auto* p : panels) {
    w = std::max(w, p->width());
    h += p->height();
  }
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(w) << "\" height=\"" << num(h) << "\" viewBox=\"0 0 "
    << num(w) << ' ' << num(h) << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  double y = 0;
  for (auto* p : panels) {
    s << p->render(y);
    y += p->height();
  }
  s << "</svg>\n";
  return s.str();
}

inline void write(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
}

}  // namespace tenduq::svg

#endif  // TENDUQ_SVG_HPP
