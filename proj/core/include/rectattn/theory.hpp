#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "rectattn/random.hpp"
#include "rectattn/tensor.hpp"

namespace rectattn {

/// H x W grid of +1/-1 entries, row-major.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(std::size_t h, std::size_t w, std::vector<std::int8_t> values);

  static BinaryMask filled(std::size_t h, std::size_t w, int value);
  /// Bit k set means cell k is +1. Requires h*w <= 64.
  static BinaryMask from_bits(std::size_t h, std::size_t w, std::uint64_t bits);
  /// +1 on rows [r0, r1] x cols [c0, c1] (inclusive), -1 elsewhere.
  static BinaryMask rectangle(std::size_t h, std::size_t w, std::size_t r0, std::size_t r1, std::size_t c0,
                              std::size_t c1);
  /// Maps a 0/1 mask to -1/+1.
  static BinaryMask from_indicator(const Tensor& f);

  std::size_t h() const { return h_; }
  std::size_t w() const { return w_; }
  std::size_t size() const { return values_.size(); }
  int operator[](std::size_t k) const { return values_[k]; }
  int at(std::size_t i, std::size_t j) const { return values_[i * w_ + j]; }
  std::span<const std::int8_t> values() const { return values_; }
  std::size_t support_size() const;
  std::uint64_t to_bits() const;
  BinaryMask negated() const;

  bool operator==(const BinaryMask&) const = default;

 private:
  std::size_t h_ = 0;
  std::size_t w_ = 0;
  std::vector<std::int8_t> values_;
};

/// +1 where f >= threshold, -1 otherwise. f is [H,W].
BinaryMask binarize(const Tensor& f, double threshold = 0.5);

/// Psi(a, b) = mean of a_ij * b_ij.
double catching_rate(const BinaryMask& a, const BinaryMask& b);
/// Phi = (1 - Psi) / 2.
double missing_rate(const BinaryMask& a, const BinaryMask& b);
/// Psi((a+1)/2, (b+1)/2) / (2 Phi((1-a)/2, (1-b)/2)), with Psi and Phi taken
/// by their formulas on the 0/1 matrices. DomainError when both supports are empty.
double fitting_rate(const BinaryMask& a, const BinaryMask& b);
/// |S_a ∩ S_b| / |S_a ∪ S_b| by explicit set construction.
double iou_bruteforce(const BinaryMask& a, const BinaryMask& b);

inline constexpr std::size_t kMaxEnumerableCells = 16;

class MaskFamily {
 public:
  enum class Kind { explicit_list, all_masks, axis_rectangles, singleton };

  static MaskFamily explicit_list(std::vector<BinaryMask> masks);
  static MaskFamily all_masks(std::size_t h, std::size_t w);
  /// Every non-empty axis-aligned rectangle.
  static MaskFamily axis_rectangles(std::size_t h, std::size_t w);
  static MaskFamily singleton(BinaryMask mask);

  Kind kind() const { return kind_; }
  std::size_t h() const { return h_; }
  std::size_t w() const { return w_; }
  /// Enumerated members; DomainError for all_masks beyond 16 cells.
  std::vector<BinaryMask> members() const;
  bool contains(const BinaryMask& m) const;
  /// Membership test of every member of this family in `other`.
  bool subset_of(const MaskFamily& other) const;

 private:
  MaskFamily(Kind kind, std::size_t h, std::size_t w) : kind_(kind), h_(h), w_(w) {}

  Kind kind_;
  std::size_t h_;
  std::size_t w_;
  std::vector<BinaryMask> masks_;
};

/// inf of Psi(m_out, m_in) over member pairs. Exactly -1 whenever either
/// family contains all masks (the complement of any mask is available).
double relevance_level(const MaskFamily& family_out, const MaskFamily& family_in);

struct MonteCarloEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t draws = 0;
};

struct LabeledMask {
  std::size_t x_id;  // samples sharing an id share the function value f(x)
  BinaryMask gt;
};

/// Monte-Carlo average over Rademacher draws of
///   sup_{f: X -> family} (1/N) sum_i sigma_i Phi(f(x_i), gt_i).
/// The sup is exact: it decomposes over distinct inputs, and over pixels for all_masks.
MonteCarloEstimate empirical_rademacher(const MaskFamily& family, std::span<const LabeledMask> sample,
                                        std::size_t num_sigma_draws, Rng& rng);

struct BoundInputs {
  std::size_t n = 1;
  double delta = 0.05;
  double empirical_error = 0.0;
  double rho = 1.0;
};

/// 3 sqrt(ln(2/delta) / (2N)).
double bound_confidence_term(std::size_t n, double delta);
/// R_hat + (1 - rho)/2 + 3 sqrt(ln(2/delta) / (2N)); DomainError outside the valid ranges.
double bound_rhs(const BoundInputs& in);

/// One atom of a finite joint distribution over (input, ground-truth mask).
struct JointAtom {
  std::size_t x_id;
  BinaryMask gt;
  double prob;
};

struct BoundExperimentReport {
  std::size_t trials = 0;
  std::size_t violations = 0;
  double violation_fraction = 0.0;
  double rho = 0.0;
  double threshold = 0.0;  // (1 - rho)/2 + confidence term
  double max_gap = 0.0;    // largest sup_f (R(f) - R_hat(f)) seen
};

/// Draws `trials` training sets of size n from `dist`. A trial violates the
/// bound when some f: X -> family has true missing rate above bound_rhs.
/// True risks are exact expectations under `dist`; the sup over f is exact.
BoundExperimentReport bound_experiment(std::span<const JointAtom> dist, const MaskFamily& family,
                                       const MaskFamily& family_in, std::size_t trials, std::size_t n,
                                       double delta, Rng& rng);

/// Probabilities over the universe {0, ..., size-1} (counting reference measure).
struct DiscreteDist {
  std::vector<double> probs;

  std::size_t size() const { return probs.size(); }
  /// Throws DomainError unless non-negative and summing to 1 within `tol`.
  void validate(double tol = 1e-12) const;
};

/// (1/2) sum |p_i - q_i|. ShapeError on different universes.
double tv_distance(const DiscreteDist& p, const DiscreteDist& q);
bool supports_disjoint(const DiscreteDist& p, const DiscreteDist& q);

/// Mixture model of the attended outputs. lambda[x] is the fitting rate
/// between ground truth and predicted attention at point x.
struct MixtureSpec {
  std::vector<DiscreteDist> pure;  // one per class
  DiscreteDist background;
  std::vector<double> lambda;

  void validate() const;
};

/// eta_y = (1 - sum lambda p_y^pure) / (1 - sum lambda p_bg). DomainError when undefined.
double mixture_eta(const MixtureSpec& spec, std::size_t y);
/// p_y = lambda p_y^pure + eta_y (1 - lambda) p_bg. When the background term
/// vanishes identically eta_y is not needed and p_y = lambda p_y^pure.
DiscreteDist mixture_density(const MixtureSpec& spec, std::size_t y);

struct TvBoundReport {
  double lhs = 0.0;
  double bound1 = 0.0;
  std::optional<double> bound2;  // only when pure supports are disjoint
  bool holds = false;
};

TvBoundReport tv_lowerbound_check(const MixtureSpec& spec, std::size_t y, std::size_t y2);

/// Inputs x [C,H,W] with binary (0/1) attention maps f [H,W].
struct InjectivityPair {
  Tensor x, x2;
  Tensor f, f2;
};

struct InjectivityResult {
  bool applicable = false;      // x != x2
  bool condition = false;       // some differing entry has equal attention
  bool outputs_differ = false;  // x + f*x != x2 + f2*x2
};

std::vector<InjectivityResult> injectivity_binary_check(std::span<const InjectivityPair> pairs);

/// Attention function x [C,H,W] -> f(x) [H,W].
using AttentionFn = std::function<Tensor(const Tensor&)>;

struct ContractionReport {
  double max_ratio = 0.0;
  bool injective_on_sample = true;
  std::size_t pairs = 0;
};

/// Pairs of distinct points drawn uniformly from the ball of radius delta.
std::vector<std::pair<Tensor, Tensor>> sample_ball_pairs(const Shape& shape, double delta, std::size_t count,
                                                         Rng& rng);
/// max ||H(x)-H(x')||^2 / ||x-x'||^2 with H(x) = f(x)*x, and whether
/// x + H(x) != x' + H(x') held on every pair.
ContractionReport contraction_check(const AttentionFn& f, std::span<const std::pair<Tensor, Tensor>> pairs);
ContractionReport contraction_check(const AttentionFn& f, const Shape& shape, double delta,
                                    std::size_t num_pairs, Rng& rng);

}  // namespace rectattn
