#include "eegscribe/dsp/ica.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <Eigen/Dense>
#include <spdlog/spdlog.h>

#include "eegscribe/errors.hpp"

namespace eegscribe::dsp {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;

nx::Tensor to_tensor(const RowMat& m) {
  nx::Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  Eigen::Map<RowMat>(t.data().data(), m.rows(), m.cols()) = m;
  return t;
}

}  // namespace

bool IcaResult::all_converged() const {
  return std::all_of(converged.begin(), converged.end(), [](bool c) { return c; });
}

IcaResult fast_ica(const nx::Tensor& eeg, const IcaOptions& options) {
  if (eeg.rank() != 2) throw DimensionError("fast_ica: expected [channels × samples]");
  const auto c = static_cast<Eigen::Index>(eeg.dim(0));
  const auto s = static_cast<Eigen::Index>(eeg.dim(1));
  const auto n = static_cast<Eigen::Index>(options.n_components);
  if (n < 1 || n > c) throw ParameterError("fast_ica: n_components must lie in [1, channels]");
  if (options.fit_stride < 1) throw ParameterError("fast_ica: fit_stride must be positive");
  if (s <= c) throw ContractError("fast_ica: need more samples than channels");

  RowMat x = ConstMap(eeg.data().data(), c, s);
  IcaResult result;
  Eigen::VectorXd means = x.rowwise().mean();
  x.colwise() -= means;
  result.channel_means.assign(means.data(), means.data() + c);

  const Eigen::Index stride = static_cast<Eigen::Index>(options.fit_stride);
  const Eigen::Index s_fit = (s + stride - 1) / stride;
  RowMat x_fit(c, s_fit);
  for (Eigen::Index j = 0; j < s_fit; ++j) x_fit.col(j) = x.col(j * stride);

  const Eigen::MatrixXd cov = (x_fit * x_fit.transpose()) / static_cast<double>(s_fit);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw DecompositionError("fast_ica: covariance eigendecomposition failed");
  // Eigen sorts ascending; take the largest n.
  const Eigen::VectorXd lambda = eig.eigenvalues().reverse();
  const Eigen::MatrixXd vecs = eig.eigenvectors().rowwise().reverse();
  const double lmax = lambda(0);
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < c; ++i) {
    if (lambda(i) > lmax * 1e-10) ++rank;
  }
  if (lmax <= 0.0 || rank < n) {
    throw DecompositionError("fast_ica: covariance rank " + std::to_string(rank) + " is below the " +
                             std::to_string(n) + " requested components");
  }

  // whitening [n×C]
  RowMat whiten = (lambda.head(n).array().rsqrt().matrix().asDiagonal() * vecs.leftCols(n).transpose());
  const RowMat z = whiten * x_fit;

  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  RowMat w_all = RowMat::Zero(n, n);
  const double inv_s = 1.0 / static_cast<double>(s_fit);
  Eigen::VectorXd u(s_fit);
  Eigen::VectorXd g(s_fit);
  for (Eigen::Index p = 0; p < n; ++p) {
    Eigen::VectorXd w(n);
    for (Eigen::Index i = 0; i < n; ++i) w(i) = normal(rng);
    auto decorrelate = [&](Eigen::VectorXd& v) {
      for (Eigen::Index j = 0; j < p; ++j) v -= v.dot(w_all.row(j).transpose()) * w_all.row(j).transpose();
      v.normalize();
    };
    decorrelate(w);
    bool converged = false;
    std::size_t it = 0;
    while (it < options.max_iter) {
      ++it;
      u.noalias() = z.transpose() * w;
      g = u.array().tanh();
      const double mean_dg = (1.0 - g.array().square()).sum() * inv_s;
      Eigen::VectorXd w_new = (z * g) * inv_s - mean_dg * w;
      decorrelate(w_new);
      const double lim = std::abs(1.0 - std::abs(w_new.dot(w)));
      w = w_new;
      if (lim < options.tol) {
        converged = true;
        break;
      }
    }
    if (!converged) spdlog::warn("fast_ica: component {} did not converge in {} iterations", p, it);
    w_all.row(p) = w.transpose();
    result.converged.push_back(converged);
    result.iterations.push_back(it);
  }

  const RowMat unmixing = w_all * whiten;
  result.unmixing = to_tensor(unmixing);
  result.sources = to_tensor(unmixing * x);
  return result;
}

nx::Tensor pseudo_inverse(const nx::Tensor& m) {
  if (m.rank() != 2) throw DimensionError("pseudo_inverse: expected a matrix");
  const RowMat a = ConstMap(m.data().data(), static_cast<Eigen::Index>(m.dim(0)), static_cast<Eigen::Index>(m.dim(1)));
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(a);
  return to_tensor(cod.pseudoInverse());
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw DimensionError("pearson: series must have equal length >= 2");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

EogRejection reject_eog(const IcaResult& ica, std::span<const double> frontal_reference, double corr_threshold) {
  const std::size_t n = ica.sources.dim(0), s = ica.sources.dim(1);
  if (frontal_reference.size() != s) throw DimensionError("reject_eog: reference length differs from sources");
  EogRejection out;
  std::vector<std::size_t> kept;
  for (std::size_t k = 0; k < n; ++k) {
    const double r = pearson(ica.sources.data().subspan(k * s, s), frontal_reference);
    out.correlations.push_back(r);
    if (std::abs(r) >= corr_threshold) {
      out.rejected.push_back(k);
    } else {
      kept.push_back(k);
    }
  }
  if (kept.empty()) {
    throw ContractError("reject_eog: every component exceeds the correlation threshold; refusing to erase the recording");
  }
  const nx::Tensor mixing = pseudo_inverse(ica.unmixing);
  const auto c = static_cast<Eigen::Index>(mixing.dim(0));
  const ConstMap a(mixing.data().data(), c, static_cast<Eigen::Index>(n));
  const ConstMap src(ica.sources.data().data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(s));
  RowMat recon = RowMat::Zero(c, static_cast<Eigen::Index>(s));
  for (auto k : kept) {
    recon.noalias() += a.col(static_cast<Eigen::Index>(k)) * src.row(static_cast<Eigen::Index>(k));
  }
  for (Eigen::Index ch = 0; ch < c; ++ch) recon.row(ch).array() += ica.channel_means[static_cast<std::size_t>(ch)];
  out.cleaned = to_tensor(recon);
  return out;
}

}  // namespace eegscribe::dsp
