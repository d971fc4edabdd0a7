#include "tfgu/image_ops.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgcodecs.hpp>

namespace tfgu {

namespace {

double sample_bilinear(const Grid& g, double y, double x) {
  const double yc = std::clamp(y, 0.0, static_cast<double>(g.rows() - 1));
  const double xc = std::clamp(x, 0.0, static_cast<double>(g.cols() - 1));
  const int y0 = static_cast<int>(std::floor(yc));
  const int x0 = static_cast<int>(std::floor(xc));
  const int y1 = std::min<int>(y0 + 1, static_cast<int>(g.rows()) - 1);
  const int x1 = std::min<int>(x0 + 1, static_cast<int>(g.cols()) - 1);
  const double fy = yc - y0, fx = xc - x0;
  const double top = g(y0, x0) * (1.0 - fx) + g(y0, x1) * fx;
  const double bottom = g(y1, x0) * (1.0 - fx) + g(y1, x1) * fx;
  return top * (1.0 - fy) + bottom * fy;
}

int nearest_index(int i, int in, int out) {
  const int s = static_cast<int>(std::floor((i + 0.5) * in / static_cast<double>(out)));
  return std::clamp(s, 0, in - 1);
}

}  // namespace

Grid resize_bilinear(const Grid& src, int rows, int cols) {
  if (src.rows() == rows && src.cols() == cols) return src;
  Grid out(rows, cols);
  const double sy = static_cast<double>(src.rows()) / rows;
  const double sx = static_cast<double>(src.cols()) / cols;
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) out(i, j) = sample_bilinear(src, (i + 0.5) * sy - 0.5, (j + 0.5) * sx - 0.5);
  return out;
}

Stack resize_bilinear(const Stack& src, int rows, int cols) {
  Stack out;
  out.reserve(src.size());
  for (const auto& g : src) out.push_back(resize_bilinear(g, rows, cols));
  return out;
}

Image resize_bilinear(const Image& src, int rows, int cols) {
  Image out;
  for (int c = 0; c < 3; ++c) out.channels[c] = resize_bilinear(src.channels[c], rows, cols);
  return out;
}

LabelGrid resize_nearest(const LabelGrid& src, int rows, int cols) {
  LabelGrid out(rows, cols);
  for (int i = 0; i < rows; ++i) {
    const int si = nearest_index(i, static_cast<int>(src.rows()), rows);
    for (int j = 0; j < cols; ++j) out(i, j) = src(si, nearest_index(j, static_cast<int>(src.cols()), cols));
  }
  return out;
}

Grid resize_nearest(const Grid& src, int rows, int cols) {
  Grid out(rows, cols);
  for (int i = 0; i < rows; ++i) {
    const int si = nearest_index(i, static_cast<int>(src.rows()), rows);
    for (int j = 0; j < cols; ++j) out(i, j) = src(si, nearest_index(j, static_cast<int>(src.cols()), cols));
  }
  return out;
}

Image crop_bilinear(const Image& src, const RectF& rect, int rows, int cols) {
  Image out(rows, cols);
  const double sy = rect.height / rows, sx = rect.width / cols;
  for (int c = 0; c < 3; ++c) {
    const Grid& g = src.channels[c];
    for (int i = 0; i < rows; ++i) {
      const double y = std::clamp(rect.y + (i + 0.5) * sy - 0.5, rect.y, rect.y + rect.height - 1.0);
      for (int j = 0; j < cols; ++j) {
        const double x = std::clamp(rect.x + (j + 0.5) * sx - 0.5, rect.x, rect.x + rect.width - 1.0);
        out.channels[c](i, j) = sample_bilinear(g, y, x);
      }
    }
  }
  return out;
}

Grid roi_align(const Grid& src, const RectF& rect, int rows, int cols) {
  if (!(rect.width > 0.0) || !(rect.height > 0.0) || rows <= 0 || cols <= 0) {
    throw ShapeError("roi_align: degenerate region");
  }
  Grid out(rows, cols);
  const double bh = rect.height / rows, bw = rect.width / cols;
  for (int i = 0; i < rows; ++i) {
    // continuous coordinate of the bin centre, shifted to cell-centre indices
    const double y = rect.y + (i + 0.5) * bh - 0.5;
    for (int j = 0; j < cols; ++j) {
      const double x = rect.x + (j + 0.5) * bw - 0.5;
      out(i, j) = sample_bilinear(src, y, x);
    }
  }
  return out;
}

Image flip_horizontal(const Image& src) {
  Image out;
  for (int c = 0; c < 3; ++c) out.channels[c] = src.channels[c].rowwise().reverse();
  return out;
}

Grid flip_horizontal(const Grid& src) { return src.rowwise().reverse(); }

Image gaussian_blur(const Image& src, double sigma) {
  if (sigma <= 0.0) return src;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    kernel[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
    total += kernel[k + radius];
  }
  for (double& k : kernel) k /= total;

  Image out;
  const int h = src.height(), w = src.width();
  for (int c = 0; c < 3; ++c) {
    Grid tmp(h, w), res(h, w);
    const Grid& g = src.channels[c];
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * g(i, std::clamp(j + k, 0, w - 1));
        tmp(i, j) = acc;
      }
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * tmp(std::clamp(i + k, 0, h - 1), j);
        res(i, j) = acc;
      }
    out.channels[c] = std::move(res);
  }
  return out;
}

Image read_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw NotFoundError("image not found: " + path.string());
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (m.empty()) throw FormatError("cannot decode image " + path.string());
  Image img(m.rows, m.cols);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) {
      const auto& px = m.at<cv::Vec3b>(i, j);
      // OpenCV stores BGR
      for (int c = 0; c < 3; ++c) img.channels[c](i, j) = px[2 - c] / 255.0;
    }
  return img;
}

void write_image(const Image& img, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  cv::Mat m(img.height(), img.width(), CV_8UC3);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) {
      auto& px = m.at<cv::Vec3b>(i, j);
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(img.channels[c](i, j), 0.0, 1.0);
        px[2 - c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  if (!cv::imwrite(path.string(), m)) throw Error("cannot write image " + path.string());
}

LabelGrid read_mask(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw NotFoundError("mask not found: " + path.string());
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw FormatError("corrupt mask raster " + path.string());
  if (m.type() != CV_8UC1) throw FormatError("mask is not single-channel 8-bit: " + path.string());
  LabelGrid g(m.rows, m.cols);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) g(i, j) = m.at<std::uint8_t>(i, j);
  return g;
}

void write_mask(const LabelGrid& grid, const std::filesystem::path& path) {
  if (grid.size() > 0 && (grid.minCoeff() < 0 || grid.maxCoeff() > 255)) {
    throw FormatError("mask value out of 8-bit range");
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  cv::Mat m(static_cast<int>(grid.rows()), static_cast<int>(grid.cols()), CV_8UC1);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) m.at<std::uint8_t>(i, j) = static_cast<std::uint8_t>(grid(i, j));
  if (!cv::imwrite(path.string(), m)) throw Error("cannot write mask " + path.string());
}

}  // namespace tfgu
