#include "rectattn/theory.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "rectattn/errors.hpp"

namespace rectattn {

BinaryMask::BinaryMask(std::size_t h, std::size_t w, std::vector<std::int8_t> values)
    : h_(h), w_(w), values_(std::move(values)) {
  if (h == 0 || w == 0) throw ShapeError("mask extents must be positive");
  if (values_.size() != h * w) throw ShapeError("mask value count does not match extents");
  for (std::int8_t v : values_) {
    if (v != 1 && v != -1) throw DomainError("mask entries must be +1 or -1");
  }
}

BinaryMask BinaryMask::filled(std::size_t h, std::size_t w, int value) {
  return BinaryMask(h, w, std::vector<std::int8_t>(h * w, static_cast<std::int8_t>(value)));
}

BinaryMask BinaryMask::from_bits(std::size_t h, std::size_t w, std::uint64_t bits) {
  if (h * w > 64) throw ShapeError("bit masks hold at most 64 cells");
  std::vector<std::int8_t> v(h * w);
  for (std::size_t k = 0; k < v.size(); ++k) v[k] = (bits >> k) & 1U ? 1 : -1;
  return BinaryMask(h, w, std::move(v));
}

BinaryMask BinaryMask::rectangle(std::size_t h, std::size_t w, std::size_t r0, std::size_t r1, std::size_t c0,
                                 std::size_t c1) {
  if (r0 > r1 || c0 > c1 || r1 >= h || c1 >= w) throw ShapeError("rectangle outside the grid");
  std::vector<std::int8_t> v(h * w, -1);
  for (std::size_t i = r0; i <= r1; ++i)
    for (std::size_t j = c0; j <= c1; ++j) v[i * w + j] = 1;
  return BinaryMask(h, w, std::move(v));
}

BinaryMask BinaryMask::from_indicator(const Tensor& f) {
  if (f.rank() != 2) throw ShapeError("indicator mask must be [H,W]");
  std::vector<std::int8_t> v(f.numel());
  for (std::size_t k = 0; k < v.size(); ++k) {
    if (f[k] != 0.0 && f[k] != 1.0) throw DomainError("indicator entries must be 0 or 1");
    v[k] = f[k] == 1.0 ? 1 : -1;
  }
  return BinaryMask(f.dim(0), f.dim(1), std::move(v));
}

std::size_t BinaryMask::support_size() const {
  return static_cast<std::size_t>(std::count(values_.begin(), values_.end(), std::int8_t{1}));
}

std::uint64_t BinaryMask::to_bits() const {
  if (size() > 64) throw ShapeError("bit masks hold at most 64 cells");
  std::uint64_t bits = 0;
  for (std::size_t k = 0; k < size(); ++k)
    if (values_[k] == 1) bits |= std::uint64_t{1} << k;
  return bits;
}

BinaryMask BinaryMask::negated() const {
  std::vector<std::int8_t> v(values_);
  for (auto& x : v) x = static_cast<std::int8_t>(-x);
  return BinaryMask(h_, w_, std::move(v));
}

BinaryMask binarize(const Tensor& f, double threshold) {
  if (f.rank() != 2) throw ShapeError("binarize expects an [H,W] map");
  std::vector<std::int8_t> v(f.numel());
  for (std::size_t k = 0; k < v.size(); ++k) v[k] = f[k] >= threshold ? 1 : -1;
  return BinaryMask(f.dim(0), f.dim(1), std::move(v));
}

namespace {

void require_same_size(const BinaryMask& a, const BinaryMask& b) {
  if (a.h() != b.h() || a.w() != b.w() || a.size() == 0) {
    throw ShapeError("mask sizes differ: " + std::to_string(a.h()) + "x" + std::to_string(a.w()) + " vs " +
                     std::to_string(b.h()) + "x" + std::to_string(b.w()));
  }
}

// Psi on arbitrary real matrices of equal size.
double psi_real(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) acc += a[k] * b[k];
  return acc / static_cast<double>(a.size());
}

}  // namespace

double catching_rate(const BinaryMask& a, const BinaryMask& b) {
  require_same_size(a, b);
  long long acc = 0;
  for (std::size_t k = 0; k < a.size(); ++k) acc += a[k] * b[k];
  return static_cast<double>(acc) / static_cast<double>(a.size());
}

double missing_rate(const BinaryMask& a, const BinaryMask& b) { return (1.0 - catching_rate(a, b)) / 2.0; }

double fitting_rate(const BinaryMask& a, const BinaryMask& b) {
  require_same_size(a, b);
  const std::size_t n = a.size();
  std::vector<double> pa(n), pb(n), na(n), nb(n);
  for (std::size_t k = 0; k < n; ++k) {
    pa[k] = (a[k] + 1.0) / 2.0;
    pb[k] = (b[k] + 1.0) / 2.0;
    na[k] = (1.0 - a[k]) / 2.0;
    nb[k] = (1.0 - b[k]) / 2.0;
  }
  // Phi((1-a)/2, (1-b)/2) by its formula (1 - Psi)/2.
  const double denom = 2.0 * ((1.0 - psi_real(na, nb)) / 2.0);
  if (denom == 0.0) throw DomainError("fitting rate undefined: both supports are empty");
  return psi_real(pa, pb) / denom;
}

double iou_bruteforce(const BinaryMask& a, const BinaryMask& b) {
  require_same_size(a, b);
  std::set<std::pair<std::size_t, std::size_t>> sa, sb;
  for (std::size_t i = 0; i < a.h(); ++i)
    for (std::size_t j = 0; j < a.w(); ++j) {
      if (a.at(i, j) == 1) sa.emplace(i, j);
      if (b.at(i, j) == 1) sb.emplace(i, j);
    }
  std::vector<std::pair<std::size_t, std::size_t>> inter, uni;
  std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(inter));
  std::set_union(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(uni));
  if (uni.empty()) throw DomainError("IoU undefined: empty union");
  return static_cast<double>(inter.size()) / static_cast<double>(uni.size());
}

MaskFamily MaskFamily::explicit_list(std::vector<BinaryMask> masks) {
  if (masks.empty()) throw DomainError("mask family must be non-empty");
  MaskFamily f(Kind::explicit_list, masks[0].h(), masks[0].w());
  for (const auto& m : masks) {
    if (m.h() != f.h_ || m.w() != f.w_) throw ShapeError("family members must share extents");
  }
  f.masks_ = std::move(masks);
  return f;
}

MaskFamily MaskFamily::all_masks(std::size_t h, std::size_t w) {
  if (h == 0 || w == 0) throw ShapeError("mask extents must be positive");
  return MaskFamily(Kind::all_masks, h, w);
}

MaskFamily MaskFamily::axis_rectangles(std::size_t h, std::size_t w) {
  if (h == 0 || w == 0) throw ShapeError("mask extents must be positive");
  MaskFamily f(Kind::axis_rectangles, h, w);
  for (std::size_t r0 = 0; r0 < h; ++r0)
    for (std::size_t r1 = r0; r1 < h; ++r1)
      for (std::size_t c0 = 0; c0 < w; ++c0)
        for (std::size_t c1 = c0; c1 < w; ++c1) f.masks_.push_back(BinaryMask::rectangle(h, w, r0, r1, c0, c1));
  return f;
}

MaskFamily MaskFamily::singleton(BinaryMask mask) {
  MaskFamily f(Kind::singleton, mask.h(), mask.w());
  f.masks_.push_back(std::move(mask));
  return f;
}

std::vector<BinaryMask> MaskFamily::members() const {
  if (kind_ != Kind::all_masks) return masks_;
  const std::size_t cells = h_ * w_;
  if (cells > kMaxEnumerableCells) {
    throw DomainError("enumeration too large: all masks on " + std::to_string(cells) + " cells");
  }
  std::vector<BinaryMask> out;
  out.reserve(std::size_t{1} << cells);
  for (std::uint64_t bits = 0; bits < (std::uint64_t{1} << cells); ++bits) out.push_back(BinaryMask::from_bits(h_, w_, bits));
  return out;
}

bool MaskFamily::contains(const BinaryMask& m) const {
  if (m.h() != h_ || m.w() != w_) return false;
  if (kind_ == Kind::all_masks) return true;
  return std::find(masks_.begin(), masks_.end(), m) != masks_.end();
}

bool MaskFamily::subset_of(const MaskFamily& other) const {
  if (h_ != other.h_ || w_ != other.w_) return false;
  if (other.kind_ == Kind::all_masks) return true;
  if (kind_ == Kind::all_masks) {
    // all masks fit only in a family that enumerates them all
    return members().size() <= other.masks_.size() &&
           std::ranges::all_of(members(), [&](const BinaryMask& m) { return other.contains(m); });
  }
  return std::ranges::all_of(masks_, [&](const BinaryMask& m) { return other.contains(m); });
}

double relevance_level(const MaskFamily& family_out, const MaskFamily& family_in) {
  if (family_out.h() != family_in.h() || family_out.w() != family_in.w()) {
    throw ShapeError("families must share extents");
  }
  if (family_out.kind() == MaskFamily::Kind::all_masks || family_in.kind() == MaskFamily::Kind::all_masks) {
    return -1.0;
  }
  const auto out = family_out.members();
  const auto in = family_in.members();
  const std::size_t cells = family_out.h() * family_out.w();
  double best = 1.0;
  if (cells <= 64) {
    std::vector<std::uint64_t> bin;
    bin.reserve(in.size());
    for (const auto& m : in) bin.push_back(m.to_bits());
    int max_diff = 0;
    for (const auto& m : out) {
      const std::uint64_t b = m.to_bits();
      for (std::uint64_t c : bin) max_diff = std::max(max_diff, std::popcount(b ^ c));
    }
    return (static_cast<double>(cells) - 2.0 * max_diff) / static_cast<double>(cells);
  }
  for (const auto& a : out)
    for (const auto& b : in) best = std::min(best, catching_rate(a, b));
  return best;
}

namespace {

// Exact sup over f: X -> family of sum_i w_i Phi(f(x_i), gt_i) for one input x.
class GroupSup {
 public:
  GroupSup(const MaskFamily& family, std::vector<BinaryMask> gts) : gts_(std::move(gts)) {
    cells_ = family.h() * family.w();
    if (cells_ > 64) throw DomainError("theory enumeration supports at most 64 cells");
    all_ = family.kind() == MaskFamily::Kind::all_masks;
    for (const auto& g : gts_) {
      if (g.h() != family.h() || g.w() != family.w()) throw ShapeError("sample mask extents differ from family");
      gt_bits_.push_back(g.to_bits());
    }
    if (!all_) {
      for (const auto& m : family.members()) member_bits_.push_back(m.to_bits());
      phi_.resize(gts_.size() * member_bits_.size());
      for (std::size_t i = 0; i < gts_.size(); ++i)
        for (std::size_t m = 0; m < member_bits_.size(); ++m)
          phi_[i * member_bits_.size() + m] =
              static_cast<double>(std::popcount(member_bits_[m] ^ gt_bits_[i])) / static_cast<double>(cells_);
    }
  }

  // atoms: indices into gts; weights aligned with atoms.
  double sup(std::span<const std::size_t> atoms, std::span<const double> weights) const {
    if (all_) {
      double total = 0.0;
      for (std::size_t p = 0; p < cells_; ++p) {
        double on = 0.0, off = 0.0;  // mismatch weight when f_p = +1 / f_p = -1
        for (std::size_t k = 0; k < atoms.size(); ++k) {
          if ((gt_bits_[atoms[k]] >> p) & 1U) {
            off += weights[k];
          } else {
            on += weights[k];
          }
        }
        total += std::max(on, off);
      }
      return total / static_cast<double>(cells_);
    }
    const std::size_t nm = member_bits_.size();
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < nm; ++m) {
      double v = 0.0;
      for (std::size_t k = 0; k < atoms.size(); ++k) v += weights[k] * phi_[atoms[k] * nm + m];
      best = std::max(best, v);
    }
    return best;
  }

 private:
  std::vector<BinaryMask> gts_;
  std::vector<std::uint64_t> gt_bits_;
  std::vector<std::uint64_t> member_bits_;
  std::vector<double> phi_;
  std::size_t cells_ = 0;
  bool all_ = false;
};

}  // namespace

MonteCarloEstimate empirical_rademacher(const MaskFamily& family, std::span<const LabeledMask> sample,
                                        std::size_t num_sigma_draws, Rng& rng) {
  if (sample.empty()) throw DomainError("Rademacher estimate needs a non-empty sample");
  if (num_sigma_draws == 0) throw DomainError("need at least one sigma draw");
  std::vector<BinaryMask> gts;
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    gts.push_back(sample[i].gt);
    groups[sample[i].x_id].push_back(i);
  }
  const GroupSup solver(family, std::move(gts));
  const double n = static_cast<double>(sample.size());
  std::vector<double> sigma(sample.size());
  std::vector<double> weights;
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t d = 0; d < num_sigma_draws; ++d) {
    for (auto& s : sigma) s = rademacher(rng) / n;
    double value = 0.0;
    for (const auto& [x, members] : groups) {
      weights.clear();
      for (std::size_t i : members) weights.push_back(sigma[i]);
      value += solver.sup(members, weights);
    }
    sum += value;
    sum_sq += value * value;
  }
  MonteCarloEstimate est;
  est.draws = num_sigma_draws;
  est.mean = sum / static_cast<double>(num_sigma_draws);
  if (num_sigma_draws > 1) {
    const double var = std::max(0.0, (sum_sq - sum * est.mean) / static_cast<double>(num_sigma_draws - 1));
    est.std_error = std::sqrt(var / static_cast<double>(num_sigma_draws));
  }
  return est;
}

double bound_confidence_term(std::size_t n, double delta) {
  if (n == 0) throw DomainError("bound needs N >= 1");
  if (!(delta > 0.0 && delta < 1.0)) throw DomainError("delta must lie in (0,1)");
  return 3.0 * std::sqrt(std::log(2.0 / delta) / (2.0 * static_cast<double>(n)));
}

double bound_rhs(const BoundInputs& in) {
  if (!(in.rho >= -1.0 && in.rho <= 1.0)) throw DomainError("rho must lie in [-1,1]");
  if (!(in.empirical_error >= 0.0 && in.empirical_error <= 1.0)) {
    throw DomainError("empirical error must lie in [0,1]");
  }
  return in.empirical_error + (1.0 - in.rho) / 2.0 + bound_confidence_term(in.n, in.delta);
}

BoundExperimentReport bound_experiment(std::span<const JointAtom> dist, const MaskFamily& family,
                                       const MaskFamily& family_in, std::size_t trials, std::size_t n,
                                       double delta, Rng& rng) {
  if (dist.empty()) throw DomainError("empty distribution");
  std::vector<double> probs;
  std::vector<BinaryMask> gts;
  std::map<std::size_t, std::vector<std::size_t>> by_x;
  double total = 0.0;
  for (std::size_t j = 0; j < dist.size(); ++j) {
    if (!(dist[j].prob >= 0.0)) throw DomainError("negative atom probability");
    if (!family_in.contains(dist[j].gt)) throw DomainError("ground-truth mask outside the admissible family");
    probs.push_back(dist[j].prob);
    gts.push_back(dist[j].gt);
    by_x[dist[j].x_id].push_back(j);
    total += dist[j].prob;
  }
  if (std::abs(total - 1.0) > 1e-9) throw DomainError("atom probabilities must sum to 1");

  BoundExperimentReport report;
  report.trials = trials;
  report.rho = relevance_level(family, family_in);
  report.threshold = (1.0 - report.rho) / 2.0 + bound_confidence_term(n, delta);

  const GroupSup solver(family, std::move(gts));
  std::discrete_distribution<std::size_t> pick(probs.begin(), probs.end());
  std::vector<std::size_t> counts(dist.size());
  std::vector<double> weights;
  report.max_gap = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < trials; ++t) {
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) ++counts[pick(rng)];
    // sup_f R(f) - R_hat(f), decomposed over inputs
    double gap = 0.0;
    for (const auto& [x, atoms] : by_x) {
      weights.clear();
      for (std::size_t j : atoms) weights.push_back(probs[j] - static_cast<double>(counts[j]) / static_cast<double>(n));
      gap += solver.sup(atoms, weights);
    }
    report.max_gap = std::max(report.max_gap, gap);
    if (gap > report.threshold) ++report.violations;
  }
  report.violation_fraction = trials == 0 ? 0.0 : static_cast<double>(report.violations) / static_cast<double>(trials);
  return report;
}

void DiscreteDist::validate(double tol) const {
  if (probs.empty()) throw DomainError("distribution over an empty universe");
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw DomainError("negative probability");
    total += p;
  }
  if (std::abs(total - 1.0) > tol) throw DomainError("probabilities sum to " + std::to_string(total));
}

double tv_distance(const DiscreteDist& p, const DiscreteDist& q) {
  if (p.size() != q.size()) throw ShapeError("distributions live on different universes");
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p.probs[i] - q.probs[i]);
  return acc / 2.0;
}

bool supports_disjoint(const DiscreteDist& p, const DiscreteDist& q) {
  if (p.size() != q.size()) throw ShapeError("distributions live on different universes");
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p.probs[i] > 0.0 && q.probs[i] > 0.0) return false;
  return true;
}

void MixtureSpec::validate() const {
  if (pure.empty()) throw DomainError("mixture needs at least one class");
  background.validate(1e-9);
  if (lambda.size() != background.size()) throw ShapeError("lambda must cover the universe");
  for (const auto& p : pure) {
    if (p.size() != background.size()) throw ShapeError("pure distributions must share the universe");
    p.validate(1e-9);
  }
  for (double l : lambda) {
    if (!(l >= 0.0 && l <= 1.0)) throw DomainError("lambda must lie in [0,1]");
  }
}

namespace {

constexpr double kEtaTol = 1e-12;

std::pair<double, double> eta_terms(const MixtureSpec& spec, std::size_t y) {
  if (y >= spec.pure.size()) throw DomainError("class index out of range");
  double lp = 0.0, lb = 0.0;
  for (std::size_t x = 0; x < spec.lambda.size(); ++x) {
    lp += spec.lambda[x] * spec.pure[y].probs[x];
    lb += spec.lambda[x] * spec.background.probs[x];
  }
  return {1.0 - lp, 1.0 - lb};
}

}  // namespace

double mixture_eta(const MixtureSpec& spec, std::size_t y) {
  spec.validate();
  const auto [num, den] = eta_terms(spec, y);
  if (std::abs(den) <= kEtaTol) throw DomainError("eta undefined: background term vanishes");
  return num / den;
}

DiscreteDist mixture_density(const MixtureSpec& spec, std::size_t y) {
  spec.validate();
  const auto [num, den] = eta_terms(spec, y);
  DiscreteDist out;
  out.probs.resize(spec.lambda.size());
  if (std::abs(den) <= kEtaTol) {
    if (std::abs(num) > 1e-9) throw DomainError("eta undefined and pure mass not fully retained");
    for (std::size_t x = 0; x < out.size(); ++x) out.probs[x] = spec.lambda[x] * spec.pure[y].probs[x];
    return out;
  }
  const double eta = num / den;
  for (std::size_t x = 0; x < out.size(); ++x) {
    out.probs[x] = spec.lambda[x] * spec.pure[y].probs[x] +
                   eta * (1.0 - spec.lambda[x]) * spec.background.probs[x];
  }
  return out;
}

TvBoundReport tv_lowerbound_check(const MixtureSpec& spec, std::size_t y, std::size_t y2) {
  spec.validate();
  if (spec.lambda.size() > 64) throw DomainError("support too large for the enumeration check");
  TvBoundReport r;
  r.lhs = tv_distance(mixture_density(spec, y), mixture_density(spec, y2));
  const double inf_fit = *std::min_element(spec.lambda.begin(), spec.lambda.end());
  r.bound1 = inf_fit * tv_distance(spec.pure[y], spec.pure[y2]);
  if (supports_disjoint(spec.pure[y], spec.pure[y2])) {
    double e1 = 0.0, e2 = 0.0;
    for (std::size_t x = 0; x < spec.lambda.size(); ++x) {
      e1 += spec.pure[y].probs[x] * spec.lambda[x];
      e2 += spec.pure[y2].probs[x] * spec.lambda[x];
    }
    r.bound2 = std::min(e1, e2);
  }
  // bounds are compared with a rounding allowance on the summed probabilities
  constexpr double tol = 1e-12;
  r.holds = r.lhs + tol >= r.bound1 && (!r.bound2 || r.lhs + tol >= *r.bound2);
  return r;
}

std::vector<InjectivityResult> injectivity_binary_check(std::span<const InjectivityPair> pairs) {
  std::vector<InjectivityResult> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (p.x.shape() != p.x2.shape() || p.x.rank() != 3) throw ShapeError("injectivity inputs must be equal [C,H,W]");
    const std::size_t c = p.x.dim(0), h = p.x.dim(1), w = p.x.dim(2);
    if (p.f.shape() != Shape{h, w} || p.f2.shape() != Shape{h, w}) throw ShapeError("attention maps must be [H,W]");
    for (const Tensor* f : {&p.f, &p.f2})
      for (double v : f->data())
        if (v != 0.0 && v != 1.0) throw DomainError("binary attention entries must be 0 or 1");
    InjectivityResult r;
    for (std::size_t k = 0; k < c; ++k)
      for (std::size_t q = 0; q < h * w; ++q) {
        const std::size_t idx = k * h * w + q;
        if (p.x[idx] == p.x2[idx]) continue;
        r.applicable = true;
        if (p.f[q] == p.f2[q]) r.condition = true;
        if (p.x[idx] + p.f[q] * p.x[idx] != p.x2[idx] + p.f2[q] * p.x2[idx]) r.outputs_differ = true;
      }
    out.push_back(r);
  }
  return out;
}

std::vector<std::pair<Tensor, Tensor>> sample_ball_pairs(const Shape& shape, double delta, std::size_t count,
                                                         Rng& rng) {
  if (!(delta > 0.0)) throw DomainError("ball radius must be positive");
  const std::size_t n = shape_numel(shape);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&] {
    Tensor t(shape);
    double norm = 0.0;
    for (double& v : t.data()) {
      v = normal(rng);
      norm += v * v;
    }
    const double radius = delta * std::pow(uniform(rng, 0.0, 1.0), 1.0 / static_cast<double>(n));
    const double scale = radius / std::sqrt(norm);
    for (double& v : t.data()) v *= scale;
    return t;
  };
  std::vector<std::pair<Tensor, Tensor>> out;
  out.reserve(count);
  while (out.size() < count) {
    Tensor a = draw(), b = draw();
    if (a != b) out.emplace_back(std::move(a), std::move(b));
  }
  return out;
}

ContractionReport contraction_check(const AttentionFn& f, std::span<const std::pair<Tensor, Tensor>> pairs) {
  ContractionReport r;
  for (const auto& [x, x2] : pairs) {
    if (x.shape() != x2.shape() || x.rank() != 3) throw ShapeError("contraction inputs must be equal [C,H,W]");
    const Tensor fx = f(x), fx2 = f(x2);
    const std::size_t hw = x.dim(1) * x.dim(2);
    if (fx.numel() != hw || fx2.numel() != hw) throw ShapeError("attention map does not match inputs");
    double num = 0.0, den = 0.0;
    bool differ = false;
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const double h1 = fx[i % hw] * x[i], h2 = fx2[i % hw] * x2[i];
      num += (h1 - h2) * (h1 - h2);
      den += (x[i] - x2[i]) * (x[i] - x2[i]);
      if (x[i] + h1 != x2[i] + h2) differ = true;
    }
    if (den == 0.0) continue;
    ++r.pairs;
    r.max_ratio = std::max(r.max_ratio, num / den);
    r.injective_on_sample = r.injective_on_sample && differ;
  }
  return r;
}

ContractionReport contraction_check(const AttentionFn& f, const Shape& shape, double delta,
                                    std::size_t num_pairs, Rng& rng) {
  const auto pairs = sample_ball_pairs(shape, delta, num_pairs, rng);
  return contraction_check(f, pairs);
}

}  // namespace rectattn
