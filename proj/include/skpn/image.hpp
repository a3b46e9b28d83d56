#pragma once

#include <Eigen/Core>

#include <algorithm>

namespace skpn {

// Row-major single-channel raster; element (m, n) is row m, column n.
template <typename Scalar>
using ImageT = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Image = ImageT<double>;

// Region labels double as the 8-bit grey levels written by the stats export.
enum class RegionLabel : unsigned char { kFlat = 0, kFine = 128, kEdge = 255 };

using LabelMap = Eigen::Array<RegionLabel, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Index clamp_index(Eigen::Index i, Eigen::Index size) {
  return std::clamp<Eigen::Index>(i, 0, size - 1);
}

// Edge-replicated read.
template <typename Derived>
typename Derived::Scalar replicated(const Eigen::DenseBase<Derived>& img, Eigen::Index m,
                                    Eigen::Index n) {
  return img(clamp_index(m, img.rows()), clamp_index(n, img.cols()));
}

// k x k neighbourhood centred on (m, n) with edge replication.
template <typename Derived>
ImageT<typename Derived::Scalar> replicated_patch(const Eigen::DenseBase<Derived>& img,
                                                  Eigen::Index m, Eigen::Index n, Eigen::Index k) {
  const Eigen::Index half = k / 2;
  ImageT<typename Derived::Scalar> patch(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) {
      patch(i, j) = replicated(img, m + i - half, n + j - half);
    }
  }
  return patch;
}

// Counter-clockwise quarter turn: out(W-1-n, m) = in(m, n).
template <typename Derived>
ImageT<typename Derived::Scalar> rot90(const Eigen::DenseBase<Derived>& img) {
  ImageT<typename Derived::Scalar> out(img.cols(), img.rows());
  for (Eigen::Index m = 0; m < img.rows(); ++m) {
    for (Eigen::Index n = 0; n < img.cols(); ++n) {
      out(img.cols() - 1 - n, m) = img(m, n);
    }
  }
  return out;
}

template <typename Derived>
ImageT<typename Derived::Scalar> flip_horizontal(const Eigen::DenseBase<Derived>& img) {
  return img.derived().rowwise().reverse();
}

}  // namespace skpn
