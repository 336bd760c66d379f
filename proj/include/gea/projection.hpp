// Copyright (c) 2026 GEA Contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <string>
#include <vector>

#include "gea/common.hpp"

namespace gea {

struct LabeledVector {
  std::string sample_id;
  std::string modality;
  int identity = 0;
  Eigen::VectorXd values;
};

struct ProjectedPoint {
  std::string sample_id;
  std::string modality;
  int identity = 0;
  double x = 0.0;
  double y = 0.0;
};

struct Projection2D {
  std::vector<ProjectedPoint> points;
  // Set when the covariance is degenerate and the projection fell back to
  // the first two input axes.
  bool degenerate = false;
};

// Deterministic PCA onto the two leading principal axes. Eigenvector signs
// follow a fixed convention (largest-magnitude component positive), so the
// output is reproducible. Requires >= 3 points.
Projection2D project_2d(const std::vector<LabeledVector>& features);

// CSV with columns schema_version,sample_id,modality,identity,x,y.
void write_projection_csv(const Projection2D& projection,
                          const std::filesystem::path& path);

}  // namespace gea
