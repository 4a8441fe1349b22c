/*
 * Copyright 2026 The PARL Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

// Closed-form ridge regression with an optional proximity prior.
//
// Minimizes, over w,
//   (1 - beta) * ( |X w - y|^2 / n + lambda * |P w|^2 ) + beta * |w - prior|^2
// where P zeroes the first (bias) coordinate. beta = 0 is plain ridge on the
// mean squared loss; beta = 1 returns the prior.

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/QR>

#include "parl/error.hpp"

namespace parl {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename DerivedX, typename DerivedY, typename DerivedP>
VectorX<typename DerivedX::Scalar> solve_proximal_ridge(const Eigen::MatrixBase<DerivedX>& X,
                                                        const Eigen::MatrixBase<DerivedY>& y,
                                                        typename DerivedX::Scalar lambda,
                                                        typename DerivedX::Scalar beta,
                                                        const Eigen::MatrixBase<DerivedP>& prior) {
  using Scalar = typename DerivedX::Scalar;
  const Eigen::Index n = X.rows(), d = X.cols();
  if (n == 0) throw TrainingError("ridge regression needs at least one sample");
  if (y.size() != n || prior.size() != d) throw TrainingError("ridge regression dimensions disagree");
  if (!(beta >= Scalar(0) && beta <= Scalar(1))) throw TrainingError("proximity weight must lie in [0,1]");
  if (!(lambda >= Scalar(0))) throw TrainingError("ridge penalty must be nonnegative");
  if (beta == Scalar(1)) return prior;

  MatrixX<Scalar> A = (X.transpose() * X) / Scalar(n);
  VectorX<Scalar> b = (X.transpose() * y) / Scalar(n);
  A.diagonal().tail(d - 1).array() += lambda;
  if (beta > Scalar(0)) {
    A *= (Scalar(1) - beta);
    A.diagonal().array() += beta;
    b = (Scalar(1) - beta) * b + beta * prior;
  }
  Eigen::LDLT<MatrixX<Scalar>> ldlt(A);
  if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
    VectorX<Scalar> w = ldlt.solve(b);
    if (w.allFinite() && (A * w - b).norm() <= Scalar(1e-8) * (Scalar(1) + b.norm())) return w;
  }
  // Rank-deficient systems fall back to the minimum-norm solution.
  return A.completeOrthogonalDecomposition().solve(b);
}

template <typename DerivedX, typename DerivedY>
VectorX<typename DerivedX::Scalar> solve_ridge(const Eigen::MatrixBase<DerivedX>& X,
                                               const Eigen::MatrixBase<DerivedY>& y,
                                               typename DerivedX::Scalar lambda) {
  using Scalar = typename DerivedX::Scalar;
  return solve_proximal_ridge(X, y, lambda, Scalar(0), VectorX<Scalar>::Zero(X.cols()));
}

}  // namespace parl
