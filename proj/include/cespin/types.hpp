#pragma once

#include <complex>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cespin {

template <typename Scalar>
using Vector3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Matrix3 = Eigen::Matrix<Scalar, 3, 3>;
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Vec3 = Vector3<double>;
using Mat3 = Matrix3<double>;
using Complex = std::complex<double>;
using CMatrix = Matrix<Complex>;
using CVector = Eigen::Matrix<Complex, Eigen::Dynamic, 1>;

/// Sorted bath-spin indices forming one cluster.
using Cluster = std::vector<std::size_t>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument or violated precondition of a numerical routine.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Malformed input document; carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

/// Invalid experiment configuration; the message names the offending field path.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace cespin
