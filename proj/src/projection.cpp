// Copyright (c) 2026 GEA Contributors
// SPDX-License-Identifier: Apache-2.0
#include "gea/projection.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <iostream>

namespace gea {

Projection2D project_2d(const std::vector<LabeledVector>& features) {
  if (features.size() < 3)
    throw ValidationError("project_2d: need at least 3 points");
  const Eigen::Index dim = features[0].values.size();
  if (dim < 2)
    throw ValidationError("project_2d: need at least 2 input dimensions");
  for (const auto& f : features)
    if (f.values.size() != dim)
      throw ValidationError("project_2d: inconsistent dimensions");

  const Eigen::Index n = static_cast<Eigen::Index>(features.size());
  Eigen::MatrixXd x(n, dim);
  for (Eigen::Index i = 0; i < n; ++i)
    x.row(i) = features[static_cast<size_t>(i)].values.transpose();
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;

  const Eigen::MatrixXd cov =
      (x.transpose() * x) / static_cast<double>(n - 1);

  Projection2D out;
  Eigen::MatrixXd basis(dim, 2);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success || !cov.allFinite()) {
    std::cerr << "warning: degenerate covariance, projecting onto the first "
                 "two input axes\n";
    out.degenerate = true;
    basis.setZero();
    basis(0, 0) = 1.0;
    basis(1, 1) = 1.0;
  } else {
    // Eigenvalues come out ascending; take the top two.
    basis.col(0) = solver.eigenvectors().col(dim - 1);
    basis.col(1) = solver.eigenvectors().col(dim - 2);
    // Fixed sign convention: the largest-magnitude component is positive.
    for (int c = 0; c < 2; ++c) {
      Eigen::Index arg_max = 0;
      basis.col(c).cwiseAbs().maxCoeff(&arg_max);
      if (basis(arg_max, c) < 0.0) basis.col(c) = -basis.col(c);
    }
  }

  const Eigen::MatrixXd coords = x * basis;
  out.points.reserve(features.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& f = features[static_cast<size_t>(i)];
    out.points.push_back(
        {f.sample_id, f.modality, f.identity, coords(i, 0), coords(i, 1)});
  }
  return out;
}

void write_projection_csv(const Projection2D& projection,
                          const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "schema_version,sample_id,modality,identity,x,y\n";
  out.precision(17);
  for (const auto& p : projection.points)
    out << 1 << ',' << p.sample_id << ',' << p.modality << ',' << p.identity
        << ',' << p.x << ',' << p.y << "\n";
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace gea
