#include "slad/cka.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>

#include "slad/linalg.hpp"

namespace slad {

FeatureMatrix center_columns(const FeatureMatrix& x) {
  if (x.n < 2) {
    throw ValueError("center_columns: need at least 2 samples, got " +
                     std::to_string(x.n));
  }
  FeatureMatrix out = x;
  for (std::size_t j = 0; j < x.p; ++j) {
    double mu = 0.0;
    for (std::size_t i = 0; i < x.n; ++i) mu += x.at(i, j);
    mu /= static_cast<double>(x.n);
    for (std::size_t i = 0; i < x.n; ++i) out.at(i, j) = x.at(i, j) - mu;
  }
  return out;
}

namespace {

double frob_sq(const std::vector<double>& m) {
  double s = 0.0;
  for (double v : m) s += v * v;
  return s;
}

double sum_sq(const FeatureMatrix& m) { return frob_sq(m.values); }

}  // namespace

double linear_cka(const FeatureMatrix& x, const FeatureMatrix& y) {
  if (x.n != y.n) {
    throw ShapeError("linear_cka: sample counts disagree, " +
                     std::to_string(x.n) + " vs " + std::to_string(y.n));
  }
  FeatureMatrix xc = center_columns(x);
  FeatureMatrix yc = center_columns(y);
  // Degenerate when the centered matrix carries nothing but rounding residue
  // of constant columns.
  double xc_ss = sum_sq(xc), yc_ss = sum_sq(yc);
  if (xc_ss <= 1e-24 * sum_sq(x) || xc_ss == 0.0) {
    throw ValueError("linear_cka: zero-variance features (first argument)");
  }
  if (yc_ss <= 1e-24 * sum_sq(y) || yc_ss == 0.0) {
    throw ValueError("linear_cka: zero-variance features (second argument)");
  }

  std::vector<double> cross(xc.p * yc.p);
  gemm_tn(xc.n, xc.p, yc.p, xc.values.data(), yc.values.data(), cross.data(),
          false);
  std::vector<double> gx(xc.p * xc.p), gy(yc.p * yc.p);
  gemm_tn(xc.n, xc.p, xc.p, xc.values.data(), xc.values.data(), gx.data(),
          false);
  gemm_tn(yc.n, yc.p, yc.p, yc.values.data(), yc.values.data(), gy.data(),
          false);
  double denom = std::sqrt(frob_sq(gx)) * std::sqrt(frob_sq(gy));
  if (!(denom > 0.0)) {
    throw ValueError("linear_cka: undefined similarity (degenerate inputs)");
  }
  return frob_sq(cross) / denom;
}

CkaMatrix cka_matrix(std::span<const FeatureMatrix> teacher_features,
                     std::span<const FeatureMatrix> student_features) {
  if (teacher_features.empty() || student_features.empty()) {
    throw ValueError("cka_matrix: empty feature lists");
  }
  const std::string& probe = teacher_features[0].probe_id;
  for (const auto& f : teacher_features) {
    if (f.probe_id != probe || f.n != teacher_features[0].n) {
      throw ValueError("cka_matrix: teacher features from mixed probe batches");
    }
  }
  for (const auto& f : student_features) {
    if (f.probe_id != probe || f.n != teacher_features[0].n) {
      throw ValueError(
          "cka_matrix: student features use a different probe batch (" +
          f.probe_id + " vs " + probe + ")");
    }
  }
  CkaMatrix m;
  m.probe_id = probe;
  m.grid.rows = teacher_features.size();
  m.grid.cols = student_features.size();
  m.grid.values.resize(m.grid.rows * m.grid.cols);
  for (std::size_t i = 0; i < m.grid.rows; ++i) {
    for (std::size_t j = 0; j < m.grid.cols; ++j) {
      m.grid.at(i, j) = linear_cka(teacher_features[i], student_features[j]);
    }
  }
  return m;
}

Grid delta_cka(const CkaMatrix& before, const CkaMatrix& after) {
  if (before.grid.rows != after.grid.rows ||
      before.grid.cols != after.grid.cols) {
    throw ShapeError("delta_cka: shape mismatch, " +
                     std::to_string(before.grid.rows) + "x" +
                     std::to_string(before.grid.cols) + " vs " +
                     std::to_string(after.grid.rows) + "x" +
                     std::to_string(after.grid.cols));
  }
  if (before.probe_id != after.probe_id) {
    throw ValueError("delta_cka: probe batches differ (" + before.probe_id +
                     " vs " + after.probe_id + ")");
  }
  Grid d;
  d.rows = before.grid.rows;
  d.cols = before.grid.cols;
  d.values.resize(d.rows * d.cols);
  for (std::size_t i = 0; i < d.values.size(); ++i) {
    d.values[i] = before.grid.values[i] - after.grid.values[i];
  }
  return d;
}

double mean_aligned_cka(const CkaMatrix& m, const BlockMapping& mapping) {
  if (mapping.student_depth() != m.student_layers() ||
      mapping.teacher_depth != m.teacher_layers()) {
    throw ConfigError("mean_aligned_cka: mapping " +
                      std::to_string(mapping.student_depth()) + "->" +
                      std::to_string(mapping.teacher_depth) +
                      " inconsistent with matrix " +
                      std::to_string(m.teacher_layers()) + "x" +
                      std::to_string(m.student_layers()));
  }
  double s = 0.0;
  for (std::size_t j = 0; j < m.student_layers(); ++j) {
    s += m.at(mapping(j), j);
  }
  return s / static_cast<double>(m.student_layers());
}

std::vector<FeatureMatrix> collect_block_features(
    const Encoder& encoder, const AdapterBindings* adapters,
    const Tensor& probe_images, CkaFeature kind, const std::string& model_id,
    const std::string& probe_id) {
  NoGradGuard no_grad;
  std::size_t n = probe_images.dim(0);
  std::size_t d = encoder.config().dim;
  std::size_t tokens = encoder.config().tokens();
  std::vector<FeatureMatrix> features(encoder.config().depth);
  for (std::size_t b = 0; b < features.size(); ++b) {
    features[b].n = n;
    features[b].p = d;
    features[b].values.resize(n * d);
    features[b].layer = static_cast<int>(b);
    features[b].model_id = model_id;
    features[b].probe_id = probe_id;
  }
  constexpr std::size_t kChunk = 64;
  const Shape& is = probe_images.shape();
  std::size_t sample_sz = is[1] * is[2] * is[3];
  for (std::size_t start = 0; start < n; start += kChunk) {
    std::size_t count = std::min(kChunk, n - start);
    std::vector<double> chunk(
        probe_images.data().begin() + start * sample_sz,
        probe_images.data().begin() + (start + count) * sample_sz);
    Tensor batch = Tensor::from_data({count, is[1], is[2], is[3]},
                                     std::move(chunk));
    EncoderForward out = encoder.forward(batch, adapters);
    for (std::size_t b = 0; b < features.size(); ++b) {
      auto tok = out.block_tokens[b].data();
      for (std::size_t i = 0; i < count; ++i) {
        double* dst = features[b].values.data() + (start + i) * d;
        if (kind == CkaFeature::ClsToken) {
          const double* src = tok.data() + i * tokens * d;
          std::copy(src, src + d, dst);
        } else {
          // mean over patch tokens (CLS excluded)
          for (std::size_t j = 0; j < d; ++j) dst[j] = 0.0;
          for (std::size_t t = 1; t < tokens; ++t) {
            const double* src = tok.data() + (i * tokens + t) * d;
            for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
          }
          double inv = 1.0 / static_cast<double>(tokens - 1);
          for (std::size_t j = 0; j < d; ++j) dst[j] *= inv;
        }
      }
    }
  }
  return features;
}

void write_grid_csv(const Grid& grid, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << std::fixed << std::setprecision(6);
  for (std::size_t i = 0; i < grid.rows; ++i) {
    for (std::size_t j = 0; j < grid.cols; ++j) {
      if (j) os << ',';
      os << grid.at(i, j);
    }
    os << '\n';
  }
}

}  // namespace slad
