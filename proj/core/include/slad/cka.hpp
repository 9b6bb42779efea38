#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "slad/encoder.hpp"
#include "slad/mapping.hpp"

namespace slad {

/// One layer's representation on a probe batch: n samples by p features.
struct FeatureMatrix {
  std::size_t n = 0, p = 0;
  std::vector<double> values;  // row-major
  int layer = -1;
  std::string model_id;
  std::string probe_id;

  double& at(std::size_t i, std::size_t j) { return values[i * p + j]; }
  double at(std::size_t i, std::size_t j) const { return values[i * p + j]; }
};

/// Plain rows-by-cols matrix for CKA grids and their differences.
struct Grid {
  std::size_t rows = 0, cols = 0;
  std::vector<double> values;

  double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
  double& at(std::size_t i, std::size_t j) { return values[i * cols + j]; }
};

/// Teacher-layers by student-layers matrix of linear-CKA similarities.
struct CkaMatrix {
  Grid grid;
  std::string probe_id;

  std::size_t teacher_layers() const { return grid.rows; }
  std::size_t student_layers() const { return grid.cols; }
  double at(std::size_t i, std::size_t j) const { return grid.at(i, j); }
};

FeatureMatrix center_columns(const FeatureMatrix& x);

/// Linear CKA on column-centered matrices:
///   ||Y^T X||_F^2 / (||X^T X||_F * ||Y^T Y||_F).
/// Symmetric, invariant to orthogonal transforms and isotropic scaling of
/// either argument. Zero-variance inputs raise ValueError instead of
/// producing NaN.
double linear_cka(const FeatureMatrix& x, const FeatureMatrix& y);

CkaMatrix cka_matrix(std::span<const FeatureMatrix> teacher_features,
                     std::span<const FeatureMatrix> student_features);

/// Element-wise before - after; shapes and probe batches must match.
Grid delta_cka(const CkaMatrix& before, const CkaMatrix& after);

/// Mean of entries (g(j), j) over student layers; the diagonal mean when
/// depths are equal.
double mean_aligned_cka(const CkaMatrix& m, const BlockMapping& mapping);

enum class CkaFeature { ClsToken, MeanPatch };

/// Per-block features of `encoder` over a probe batch, forwarded without
/// grad in fixed sub-batches.
std::vector<FeatureMatrix> collect_block_features(
    const Encoder& encoder, const AdapterBindings* adapters,
    const Tensor& probe_images, CkaFeature kind, const std::string& model_id,
    const std::string& probe_id);

/// 6-decimal CSV, one row per teacher layer.
void write_grid_csv(const Grid& grid, const std::filesystem::path& path);

}  // namespace slad
