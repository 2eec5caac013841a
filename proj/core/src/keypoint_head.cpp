#include "objslam/keypoint_head.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>

#include <Eigen/Eigenvalues>

#include "objslam/error.hpp"

namespace objslam {

Tensor3::Tensor3(int n, int h, int w, double fill)
    : n_(n), h_(h), w_(w), data_(static_cast<std::size_t>(n) * h * w, fill) {
  if (n < 0 || h <= 0 || w <= 0) throw Error(ErrorCode::kInvalidArgument, "tensor dimensions");
}

HeadTarget HeadTarget::from_mask(std::vector<Eigen::Vector2d> coords, std::vector<int> mask) {
  HeadTarget t;
  t.gt_coords = std::move(coords);
  t.gt_mask = std::move(mask);
  for (std::size_t i = 0; i < t.gt_mask.size(); ++i) {
    if (t.gt_mask[i] != 0) t.valid_set.push_back(static_cast<int>(i));
  }
  return t;
}

bool HeadTarget::is_consistent() const {
  if (gt_mask.size() != gt_coords.size()) return false;
  std::vector<int> expected;
  for (std::size_t i = 0; i < gt_mask.size(); ++i) {
    if (gt_mask[i] != 0 && gt_mask[i] != 1) return false;
    if (gt_mask[i] == 1) expected.push_back(static_cast<int>(i));
  }
  std::vector<int> sorted = valid_set;
  std::sort(sorted.begin(), sorted.end());
  return sorted == expected;
}

ProbGrid spatial_softmax(const Tensor3& logits) {
  ProbGrid grid{Tensor3(logits.channels(), logits.height(), logits.width())};
  for (int i = 0; i < logits.channels(); ++i) {
    const auto in = logits.channel(i);
    auto out = grid.mass.channel(i);
    const double peak = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      out[c] = std::exp(in[c] - peak);
      total += out[c];
    }
    for (double& v : out) v /= total;
  }
  return grid;
}

Eigen::Vector2d expect_coords(std::span<const double> mass, int height, int width) {
  Eigen::Vector2d u = Eigen::Vector2d::Zero();
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const double p = mass[static_cast<std::size_t>(r) * width + c];
      u.x() += p * c;
      u.y() += p * r;
    }
  }
  return u;
}

Eigen::Matrix2d coord_covariance(std::span<const double> mass, int height, int width,
                                 const Eigen::Vector2d& mean, double eps) {
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const double p = mass[static_cast<std::size_t>(r) * width + c];
      const Eigen::Vector2d d(c - mean.x(), r - mean.y());
      cov.noalias() += p * d * d.transpose();
    }
  }
  cov(0, 1) = cov(1, 0) = 0.5 * (cov(0, 1) + cov(1, 0));
  cov += eps * Eigen::Matrix2d::Identity();
  return cov;
}

MleLoss mle_loss(const Eigen::Vector2d& u, const Eigen::Matrix2d& cov, const Eigen::Vector2d& u_star) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(cov, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues()(0);
  const double hi = eig.eigenvalues()(1);
  if (!(lo > 0.0) || hi / lo > kMaxCovCondition) {
    throw Error(ErrorCode::kSingularCovariance, "eigenvalues " + std::to_string(lo) + ", " + std::to_string(hi));
  }
  const Eigen::Matrix2d info = cov.inverse();
  const Eigen::Vector2d e = u_star - u;
  const Eigen::Vector2d info_e = info * e;

  MleLoss out;
  out.value = e.dot(info_e) + std::log(cov.determinant());
  out.grad_u = -2.0 * info_e;
  out.grad_cov = info - info_e * info_e.transpose();
  return out;
}

namespace {

double clamp_mask(double m) { return std::clamp(m, kMaskClamp, 1.0 - kMaskClamp); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double ex = std::exp(x);
  return ex / (1.0 + ex);
}

}  // namespace

double mask_bce(std::span<const double> mask, std::span<const int> gt_mask) {
  if (mask.size() != gt_mask.size()) throw Error(ErrorCode::kLengthMismatch, "mask sizes differ");
  if (mask.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const double m = clamp_mask(mask[i]);
    total -= gt_mask[i] != 0 ? std::log(m) : std::log(1.0 - m);
  }
  return total / static_cast<double>(mask.size());
}

HeadPrediction predict(const Tensor3& logits) {
  const ProbGrid grid = spatial_softmax(logits);
  HeadPrediction pred;
  const int n = logits.channels();
  pred.coords.reserve(n);
  pred.covs.reserve(n);
  pred.mask.reserve(n);
  for (int i = 0; i < n; ++i) {
    const auto mass = grid.channel(i);
    const Eigen::Vector2d u = expect_coords(mass, logits.height(), logits.width());
    pred.coords.push_back(u);
    pred.covs.push_back(coord_covariance(mass, logits.height(), logits.width(), u));
    const auto ch = logits.channel(i);
    double mean = 0.0;
    for (double v : ch) mean += v;
    pred.mask.push_back(sigmoid(mean / static_cast<double>(ch.size())));
  }
  return pred;
}

TotalLoss total_loss(const HeadPrediction& pred, const HeadTarget& tgt) {
  if (pred.coords.size() != tgt.gt_coords.size() || pred.mask.size() != tgt.gt_mask.size()) {
    throw Error(ErrorCode::kLengthMismatch, "prediction and target keypoint counts differ");
  }
  TotalLoss out;
  out.bce = mask_bce(pred.mask, tgt.gt_mask);
  if (tgt.valid_set.empty()) {
    out.empty_valid_set = true;
  } else {
    double sum = 0.0;
    for (int i : tgt.valid_set) sum += mle_loss(pred.coords[i], pred.covs[i], tgt.gt_coords[i]).value;
    out.mle = sum / static_cast<double>(tgt.valid_set.size());
  }
  out.value = out.bce + out.mle;
  return out;
}

Tensor3 head_backward(const Tensor3& logits, const HeadTarget& tgt) {
  const int n = logits.channels();
  const int h = logits.height();
  const int w = logits.width();
  if (static_cast<int>(tgt.gt_coords.size()) != n || static_cast<int>(tgt.gt_mask.size()) != n) {
    throw Error(ErrorCode::kLengthMismatch, "target keypoint count differs from channel count");
  }
  Tensor3 grad(n, h, w);
  const ProbGrid grid = spatial_softmax(logits);
  const double cells = static_cast<double>(logits.channel_size());

  // Mask head: sigmoid of the spatial mean; its gradient is constant per channel.
  for (int i = 0; i < n; ++i) {
    const auto ch = logits.channel(i);
    double mean = 0.0;
    for (double v : ch) mean += v;
    const double m = sigmoid(mean / cells);
    if (m <= kMaskClamp || m >= 1.0 - kMaskClamp) continue;
    const double g = (m - tgt.gt_mask[i]) / (static_cast<double>(n) * cells);
    for (double& v : grad.channel(i)) v += g;
  }

  if (tgt.valid_set.empty()) return grad;
  const double scale = 1.0 / static_cast<double>(tgt.valid_set.size());
  std::vector<double> a(logits.channel_size());
  for (int i : tgt.valid_set) {
    const auto p = grid.channel(i);
    const Eigen::Vector2d u = expect_coords(p, h, w);
    const Eigen::Matrix2d cov = coord_covariance(p, h, w, u);
    const MleLoss mle = mle_loss(u, cov, tgt.gt_coords[i]);

    // dL/dp_c, then through the softmax Jacobian.
    double mean_a = 0.0;
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        const std::size_t k = static_cast<std::size_t>(r) * w + c;
        const Eigen::Vector2d x(c, r);
        const Eigen::Vector2d d = x - u;
        a[k] = mle.grad_u.dot(x) + d.dot(mle.grad_cov * d);
        mean_a += p[k] * a[k];
      }
    }
    auto out = grad.channel(i);
    for (std::size_t k = 0; k < a.size(); ++k) out[k] += scale * p[k] * (a[k] - mean_a);
  }
  return grad;
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b.data(), b.size());
}

std::uint32_t get_u32(std::istream& is) {
  std::array<unsigned char, 4> b{};
  is.read(reinterpret_cast<char*>(b.data()), b.size());
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_tensor(const std::filesystem::path& path, const Tensor3& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  put_u32(os, static_cast<std::uint32_t>(t.channels()));
  put_u32(os, static_cast<std::uint32_t>(t.height()));
  put_u32(os, static_cast<std::uint32_t>(t.width()));
  for (double v : t.data()) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    std::array<char, 8> b{};
    for (int k = 0; k < 8; ++k) b[k] = static_cast<char>((bits >> (8 * k)) & 0xff);
    os.write(b.data(), b.size());
  }
  if (!os) throw Error(ErrorCode::kIoError, "write failed for " + path.string());
}

Tensor3 read_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  const auto n = get_u32(is);
  const auto h = get_u32(is);
  const auto w = get_u32(is);
  if (!is) throw Error(ErrorCode::kParseError, "truncated header in " + path.string());
  Tensor3 t(static_cast<int>(n), static_cast<int>(h), static_cast<int>(w));
  for (double& v : t.data()) {
    std::array<unsigned char, 8> b{};
    is.read(reinterpret_cast<char*>(b.data()), b.size());
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(b[k]) << (8 * k);
    v = std::bit_cast<double>(bits);
  }
  if (!is) throw Error(ErrorCode::kParseError, "truncated payload in " + path.string());
  return t;
}

}  // namespace objslam
