#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace objslam {

/// Dense N x h x w tensor of doubles, channel-major then row-major.
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(int n, int h, int w, double fill = 0.0);

  int channels() const { return n_; }
  int height() const { return h_; }
  int width() const { return w_; }
  std::size_t size() const { return data_.size(); }
  std::size_t channel_size() const { return static_cast<std::size_t>(h_) * w_; }

  double& at(int i, int row, int col) { return data_[index(i, row, col)]; }
  double at(int i, int row, int col) const { return data_[index(i, row, col)]; }

  std::span<double> channel(int i) { return {data_.data() + i * channel_size(), channel_size()}; }
  std::span<const double> channel(int i) const { return {data_.data() + i * channel_size(), channel_size()}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

 private:
  std::size_t index(int i, int row, int col) const {
    return (static_cast<std::size_t>(i) * h_ + row) * w_ + col;
  }

  int n_ = 0;
  int h_ = 0;
  int w_ = 0;
  std::vector<double> data_;
};

/// Per-channel 2D probability mass produced by a spatial softmax.
struct ProbGrid {
  Tensor3 mass;

  int channels() const { return mass.channels(); }
  int height() const { return mass.height(); }
  int width() const { return mass.width(); }
  std::span<const double> channel(int i) const { return mass.channel(i); }
};

/// Regularizer added to every predicted covariance (grid cells squared).
inline constexpr double kCovRegularizer = 1e-6;
/// Predicted mask scores are clamped to [kMaskClamp, 1 - kMaskClamp] in BCE.
inline constexpr double kMaskClamp = 1e-7;
/// Condition number above which a covariance is rejected by the MLE loss.
inline constexpr double kMaxCovCondition = 1e12;

struct HeadPrediction {
  std::vector<Eigen::Vector2d> coords;  // grid cells
  std::vector<Eigen::Matrix2d> covs;    // grid cells^2
  std::vector<double> mask;             // [0, 1]
};

struct HeadTarget {
  std::vector<Eigen::Vector2d> gt_coords;
  std::vector<int> gt_mask;    // 0/1 per keypoint
  std::vector<int> valid_set;  // indices i with gt_mask[i] == 1

  /// Builds the valid set from a 0/1 mask.
  static HeadTarget from_mask(std::vector<Eigen::Vector2d> coords, std::vector<int> mask);
  bool is_consistent() const;
};

struct MleLoss {
  double value = 0.0;
  Eigen::Vector2d grad_u = Eigen::Vector2d::Zero();
  Eigen::Matrix2d grad_cov = Eigen::Matrix2d::Zero();
};

struct TotalLoss {
  double value = 0.0;
  double bce = 0.0;
  double mle = 0.0;
  bool empty_valid_set = false;
};

/// Max-subtracted softmax over each channel's h*w cells.
ProbGrid spatial_softmax(const Tensor3& logits);

/// Expected [u v] over a normalized mass with cell centers at integer coords;
/// u indexes columns, v indexes rows.
Eigen::Vector2d expect_coords(std::span<const double> mass, int height, int width);

/// Second moment of the mass about `mean`, plus eps * I.
Eigen::Matrix2d coord_covariance(std::span<const double> mass, int height, int width,
                                 const Eigen::Vector2d& mean, double eps = kCovRegularizer);

/// Gaussian negative log likelihood (u*-u)^T cov^-1 (u*-u) + log|cov| with
/// gradients. Throws SingularCovariance when cov is ill conditioned.
MleLoss mle_loss(const Eigen::Vector2d& u, const Eigen::Matrix2d& cov, const Eigen::Vector2d& u_star);

/// Mean binary cross entropy over all entries, with clamped predictions.
double mask_bce(std::span<const double> mask, std::span<const int> gt_mask);

/// Full head forward pass. The mask head is a sigmoid of each channel's
/// spatial mean logit.
HeadPrediction predict(const Tensor3& logits);

TotalLoss total_loss(const HeadPrediction& pred, const HeadTarget& tgt);

/// Gradient of total_loss(predict(logits), tgt) with respect to the logits.
Tensor3 head_backward(const Tensor3& logits, const HeadTarget& tgt);

/// Binary snapshot: u32 little-endian N, h, w followed by row-major f64.
void write_tensor(const std::filesystem::path& path, const Tensor3& t);
Tensor3 read_tensor(const std::filesystem::path& path);

}  // namespace objslam
