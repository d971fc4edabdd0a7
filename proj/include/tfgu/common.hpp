#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace tfgu {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// Spatial grid of scalars, rows = height.
using Grid = Eigen::MatrixXd;
/// Integer label raster; 255 marks ignored pixels.
using LabelGrid = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>;
/// Channel stack, one h×w grid per class (K×h×w).
using Stack = std::vector<Grid>;

inline constexpr int kIgnoreLabel = 255;

/// Planar RGB image with values in [0,1].
struct Image {
  std::array<Grid, 3> channels;

  Image() = default;
  Image(int height, int width, double fill = 0.0) {
    for (auto& c : channels) c = Grid::Constant(height, width, fill);
  }
  int height() const { return static_cast<int>(channels[0].rows()); }
  int width() const { return static_cast<int>(channels[0].cols()); }
};

// Error hierarchy. The CLI maps these onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class FormatError : public Error {
 public:
  using Error::Error;
};
class ShapeError : public Error {
 public:
  using Error::Error;
};
class NotFoundError : public Error {
 public:
  using Error::Error;
};
class ChecksumError : public Error {
 public:
  using Error::Error;
};
class ConfigError : public Error {
 public:
  using Error::Error;
};
class MissingArtifactError : public Error {
 public:
  using Error::Error;
};
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace tfgu
