/* Copyright 2026 The annodet Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>

#include "annodet/core/container.hpp"
#include "annodet/core/error.hpp"
#include "annodet/core/image_io.hpp"
#include "annodet/core/resample.hpp"
#include "annodet/harness/harness.hpp"

namespace annodet::harness {
namespace {

struct Rgb {
  std::uint8_t r, g, b;
};

Rgb class_color(int c) {
  static const Rgb kPalette[] = {{150, 150, 150}, {214, 39, 40}, {44, 160, 44}, {31, 119, 180},
                                 {255, 127, 14},  {148, 103, 189}, {140, 86, 75}};
  return kPalette[std::size_t(c) % (sizeof kPalette / sizeof kPalette[0])];
}

std::string hex(Rgb c) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", c.r, c.g, c.b);
  return buf;
}

std::string fmt(double v, int digits = 2) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string slug(std::string s) {
  for (char& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
  return s;
}

// Minimal SVG chart: data coordinates are mapped into a fixed plot area.
class SvgChart {
 public:
  SvgChart(std::string title, std::string xlabel, std::string ylabel, double x0, double x1, double y0, double y1)
      : x0_(x0), x1_(x1), y0_(y0), y1_(y1) {
    body_ << "<text x=\"" << kW / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title << "</text>\n";
    body_ << "<text x=\"" << kL + kPw / 2 << "\" y=\"" << kH - 10 << "\" text-anchor=\"middle\" font-size=\"13\">"
          << xlabel << "</text>\n";
    body_ << "<text x=\"16\" y=\"" << kT + kPh / 2 << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 16 "
          << kT + kPh / 2 << ")\">" << ylabel << "</text>\n";
    body_ << "<rect x=\"" << kL << "\" y=\"" << kT << "\" width=\"" << kPw << "\" height=\"" << kPh
          << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
      const double fx = x0 + (x1 - x0) * i / 4, fy = y0 + (y1 - y0) * i / 4;
      body_ << "<text x=\"" << px(fx) << "\" y=\"" << kT + kPh + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
            << fmt(fx) << "</text>\n";
      body_ << "<text x=\"" << kL - 6 << "\" y=\"" << py(fy) + 4 << "\" text-anchor=\"end\" font-size=\"11\">" << fmt(fy)
            << "</text>\n";
    }
  }

  void point(double x, double y, Rgb c) {
    body_ << "<circle cx=\"" << fmt(px(x)) << "\" cy=\"" << fmt(py(y)) << "\" r=\"2.5\" fill=\"" << hex(c)
          << "\" fill-opacity=\"0.7\"/>\n";
  }

  void polyline(const std::vector<std::pair<double, double>>& pts, Rgb c, bool dashed = false) {
    body_ << "<polyline fill=\"none\" stroke=\"" << hex(c) << "\" stroke-width=\"2\""
          << (dashed ? " stroke-dasharray=\"6,4\"" : "") << " points=\"";
    for (const auto& [x, y] : pts) body_ << fmt(px(x)) << ',' << fmt(py(y)) << ' ';
    body_ << "\"/>\n";
  }

  void legend(const std::string& text, Rgb c) {
    const int y = kT + 14 + 18 * legend_rows_++;
    body_ << "<rect x=\"" << kL + kPw + 12 << "\" y=\"" << y - 9 << "\" width=\"10\" height=\"10\" fill=\"" << hex(c)
          << "\"/>\n";
    body_ << "<text x=\"" << kL + kPw + 28 << "\" y=\"" << y << "\" font-size=\"12\">" << text << "</text>\n";
  }

  std::string str() const {
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
       << body_.str() << "</svg>\n";
    return os.str();
  }

 private:
  static constexpr int kW = 760, kH = 440, kL = 60, kT = 40, kPw = 440, kPh = 340;
  double px(double x) const { return kL + (x - x0_) / (x1_ - x0_) * kPw; }
  double py(double y) const { return kT + kPh - (y - y0_) / (y1_ - y0_) * kPh; }

  double x0_, x1_, y0_, y1_;
  int legend_rows_ = 0;
  std::ostringstream body_;
};

Raster upscale(const Tensor<float>& image, int k) {
  const Raster src = to_raster(image);
  Raster out(src.width * k, src.height * k);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) {
      const auto* p = &src.rgb[(std::size_t(y / k) * src.width + x / k) * 3];
      out.set(x, y, p[0], p[1], p[2]);
    }
  return out;
}

void draw_box(Raster& r, const dataset::Box& b, int k, Rgb c, int thickness = 2) {
  const int x0 = static_cast<int>(b.x_min * k), x1 = static_cast<int>(b.x_max * k) - 1;
  const int y0 = static_cast<int>(b.y_min * k), y1 = static_cast<int>(b.y_max * k) - 1;
  for (int t = 0; t < thickness; ++t) {
    for (int x = x0; x <= x1; ++x) {
      r.set(x, y0 + t, c.r, c.g, c.b);
      r.set(x, y1 - t, c.r, c.g, c.b);
    }
    for (int y = y0; y <= y1; ++y) {
      r.set(x0 + t, y, c.r, c.g, c.b);
      r.set(x1 - t, y, c.r, c.g, c.b);
    }
  }
}

// Blue to yellow through green.
Rgb heat(double v) {
  v = std::clamp(v, 0.0, 1.0);
  const double r = std::clamp(2.0 * v - 1.0, 0.0, 1.0), g = std::clamp(1.6 * v, 0.0, 1.0), b = 1.0 - v;
  return {static_cast<std::uint8_t>(255 * r), static_cast<std::uint8_t>(255 * g), static_cast<std::uint8_t>(255 * b)};
}

std::vector<std::string> read_string_list(const fs::path& p) {
  return nlohmann::json::parse(read_file(p)).get<std::vector<std::string>>();
}

std::vector<std::pair<double, bool>> read_roc_examples(const fs::path& p) {
  std::istringstream is(read_file(p));
  std::string line;
  std::getline(is, line);
  std::vector<std::pair<double, bool>> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    require(c1 != std::string::npos && c2 != std::string::npos, Errc::kParse, "bad ROC row in " + p.string());
    out.emplace_back(std::stod(line.substr(0, c1)), line.substr(c1 + 1, c2 - c1 - 1) == "1");
  }
  return out;
}

std::string record_name(const RunRecord& r) { return r.variant + " r" + std::to_string(r.repeat); }

std::string record_slug(const RunRecord& r) { return slug(r.variant) + "_r" + std::to_string(r.repeat); }

bool has(const RunRecord& r, const std::string& artifact) {
  const fs::path p = r.artifact(artifact);
  return !p.empty() && fs::exists(p);
}

}  // namespace

std::string roc_legend(const std::string& name, double auc) { return name + " (AUC = " + fmt(auc, 3) + ")"; }

PlotReport emit_plots(const std::vector<RunRecord>& records, const fs::path& out_dir,
                      const std::map<std::string, const dataset::Scene*>& scenes, double score_threshold) {
  PlotReport rep;
  if (records.empty()) {
    rep.notices.push_back("no records; nothing to plot");
    return rep;
  }
  fs::create_directories(out_dir);
  constexpr int kZoom = 3;
  auto scene_or_null = [&](const std::string& id) -> const dataset::Scene* {
    auto it = scenes.find(id);
    return it == scenes.end() ? nullptr : it->second;
  };

  // ROC curves share one chart.
  SvgChart roc("ROC (window level)", "false positive rate", "true positive rate", 0, 1, 0, 1);
  roc.polyline({{0, 0}, {1, 1}}, {180, 180, 180}, true);
  int curves = 0;
  for (const auto& r : records) {
    if (!has(r, "roc_examples")) {
      rep.notices.push_back(record_name(r) + ": no ROC examples, curve skipped");
      continue;
    }
    try {
      const auto curve = evaluation::roc_auc(read_roc_examples(r.artifact("roc_examples")));
      std::vector<std::pair<double, double>> pts;
      for (const auto& p : curve.points) pts.emplace_back(p.fpr, p.tpr);
      const Rgb c = class_color(1 + curves);
      roc.polyline(pts, c);
      roc.legend(roc_legend(record_name(r), curve.auc), c);
      ++curves;
    } catch (const Error& e) {
      rep.notices.push_back(record_name(r) + ": " + e.what());
    }
  }
  if (curves > 0) {
    write_file_atomic(out_dir / "roc.svg", roc.str());
    rep.files.push_back(out_dir / "roc.svg");
  }

  for (const auto& r : records) {
    const std::string tag = record_slug(r);
    std::vector<std::string> plot_ids;
    if (has(r, "plot_scenes")) plot_ids = read_string_list(r.artifact("plot_scenes"));

    // PCA scatter and PC1 heatmaps need the held-out embeddings.
    if (has(r, "embeddings")) {
      const Container c = read_container(r.artifact("embeddings"));
      const auto labels = c.meta.at("labels").get<std::vector<int>>();
      const Eigen::MatrixXd x = evaluation::to_matrix(c.tensor("embeddings"));
      const auto model = evaluation::fit_pca(x);
      const Eigen::MatrixXd xy = evaluation::project(model, x, 2);
      SvgChart chart("PCA of held-out patch embeddings (" + record_name(r) + ")",
                     "PC1 (" + fmt(100 * model.explained(0), 1) + "%)", "PC2 (" + fmt(100 * model.explained(1), 1) + "%)",
                     xy.col(0).minCoeff(), xy.col(0).maxCoeff() + 1e-9, xy.col(1).minCoeff(), xy.col(1).maxCoeff() + 1e-9);
      std::set<int> seen;
      for (Eigen::Index i = 0; i < xy.rows(); ++i) {
        chart.point(xy(i, 0), xy(i, 1), class_color(labels[i]));
        seen.insert(labels[i]);
      }
      for (int l : seen) chart.legend(l == 0 ? "background" : "class " + std::to_string(l), class_color(l));
      const fs::path f = out_dir / ("pca_" + tag + ".svg");
      write_file_atomic(f, chart.str());
      rep.files.push_back(f);

      std::vector<std::string> grid_files;
      if (has(r, "plot_grids")) grid_files = read_string_list(r.artifact("plot_grids"));
      for (const auto& gf : grid_files) {
        const fs::path gp = r.dir / gf;
        if (!fs::exists(gp)) {
          rep.notices.push_back(record_name(r) + ": missing grid " + gf);
          continue;
        }
        const auto grid = latentgrid::read_grid(gp);
        const auto* scene = scene_or_null(grid.scene_id);
        if (!scene) {
          rep.notices.push_back(record_name(r) + ": scene " + grid.scene_id + " not in dataset, heatmap skipped");
          continue;
        }
        const Tensor<double> h = evaluation::pc1_heatmap(model, grid);
        // cell centres span [window/2, extent - window/2]; resample onto that span
        const int H = scene->height(), W = scene->width(), half = grid.window / 2;
        const int span_h = std::max(1, H - 2 * half + 1), span_w = std::max(1, W - 2 * half + 1);
        const Tensor<double> up = resize_bilinear(h.reshaped({1, h.dim(0), h.dim(1)}), span_h, span_w, true);
        Raster img = upscale(scene->image, kZoom);
        for (int y = 0; y < img.height; ++y)
          for (int x = 0; x < img.width; ++x) {
            const int sy = std::clamp(y / kZoom - half, 0, span_h - 1), sx = std::clamp(x / kZoom - half, 0, span_w - 1);
            const Rgb c = heat(up[std::size_t(sy) * span_w + sx]);
            auto* p = &img.rgb[(std::size_t(y) * img.width + x) * 3];
            p[0] = static_cast<std::uint8_t>((p[0] + c.r) / 2);
            p[1] = static_cast<std::uint8_t>((p[1] + c.g) / 2);
            p[2] = static_cast<std::uint8_t>((p[2] + c.b) / 2);
          }
        for (const auto& b : scene->boxes) draw_box(img, b, kZoom, {255, 255, 255}, 1);
        const fs::path f2 = out_dir / ("pc1_" + tag + "_" + slug(scene->id) + ".png");
        write_png(f2, img);
        rep.files.push_back(f2);
      }
    } else {
      rep.notices.push_back(record_name(r) + ": no embeddings, PCA and PC1 plots skipped");
    }

    if (!has(r, "detections")) {
      rep.notices.push_back(record_name(r) + ": no detections, overlays skipped");
      continue;
    }
    const auto dets = nlohmann::json::parse(read_file(r.artifact("detections")));
    for (const auto& id : plot_ids) {
      const auto* scene = scene_or_null(id);
      if (!scene) {
        rep.notices.push_back(record_name(r) + ": scene " + id + " not in dataset, overlay skipped");
        continue;
      }
      Raster img = upscale(scene->image, kZoom);
      for (const auto& b : scene->boxes) draw_box(img, b, kZoom, {255, 255, 255}, 1);
      for (const auto& d : dets) {
        if (d.at("scene_id").get<std::string>() != id || d.at("score").get<double>() < score_threshold) continue;
        const auto& bx = d.at("box");
        draw_box(img, {bx[0].get<double>(), bx[1].get<double>(), bx[2].get<double>(), bx[3].get<double>()}, kZoom,
                 class_color(d.at("class").get<int>()));
      }
      const fs::path f = out_dir / ("detections_" + tag + "_" + slug(id) + ".png");
      write_png(f, img);
      rep.files.push_back(f);
    }
  }
  return rep;
}

}  // namespace annodet::harness
