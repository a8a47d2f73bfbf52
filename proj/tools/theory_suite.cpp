#include <algorithm>
#include <cmath>
#include <set>

#include <json.hpp>

#include "cli.hpp"
#include "rectattn/errors.hpp"
#include "rectattn/rect_attention.hpp"
#include "rectattn/theory.hpp"

namespace rectattn::cli {

namespace {

BinaryMask random_mask(Rng& rng, std::size_t h, std::size_t w) {
  std::vector<std::int8_t> v(h * w);
  for (auto& e : v) e = static_cast<std::int8_t>(rademacher(rng));
  return BinaryMask(h, w, std::move(v));
}

BinaryMask random_rectangle(Rng& rng, std::size_t h, std::size_t w) {
  std::size_t r0 = uniform_int(rng, 0, int(h) - 1), r1 = uniform_int(rng, 0, int(h) - 1);
  std::size_t c0 = uniform_int(rng, 0, int(w) - 1), c1 = uniform_int(rng, 0, int(w) - 1);
  return BinaryMask::rectangle(h, w, std::min(r0, r1), std::max(r0, r1), std::min(c0, c1), std::max(c0, c1));
}

DiscreteDist random_dist(Rng& rng, std::size_t m, const std::vector<std::size_t>& support) {
  DiscreteDist d{std::vector<double>(m, 0.0)};
  double total = 0.0;
  for (std::size_t i : support) total += d.probs[i] = uniform(rng, 0.05, 1.0);
  for (double& p : d.probs) p /= total;
  return d;
}

TheoryCheck make(std::string name, bool passed, double value, double threshold, std::string detail) {
  return TheoryCheck{std::move(name), passed, value, threshold, std::move(detail), {}};
}

TheoryCheck check_psi_bounds(Rng& rng) {
  double worst = 0.0;
  bool ok = true;
  for (int t = 0; t < 500; ++t) {
    const auto a = random_mask(rng, 5, 7), b = random_mask(rng, 5, 7);
    const double psi = catching_rate(a, b);
    ok = ok && psi >= -1.0 && psi <= 1.0;
    worst = std::max(worst, std::abs(missing_rate(a, b) - (1.0 - psi) / 2.0));
  }
  return make("catching_rate_range_and_missing_rate_identity", ok && worst <= 1e-15, worst, 1e-15,
              "500 random 5x7 mask pairs");
}

TheoryCheck check_psi_extremes(Rng& rng) {
  double worst = 0.0;
  for (int t = 0; t < 200; ++t) {
    const auto a = random_mask(rng, 6, 6);
    worst = std::max({worst, std::abs(catching_rate(a, a) - 1.0), std::abs(catching_rate(a, a.negated()) + 1.0)});
  }
  return make("catching_rate_self_and_complement", worst == 0.0, worst, 0.0, "Psi(a,a)=1 and Psi(a,-a)=-1");
}

TheoryCheck check_fitting_iou(Rng& rng, bool inject_fault) {
  double worst = 0.0;
  std::size_t n = 0;
  while (n < 1000) {
    const std::size_t h = uniform_int(rng, 1, 8), w = uniform_int(rng, 1, 8);
    const auto a = random_mask(rng, h, w), b = random_mask(rng, h, w);
    if (a.support_size() == 0 && b.support_size() == 0) continue;
    double ref = iou_bruteforce(a, b);
    if (inject_fault && n == 0) ref += 1e-3;
    worst = std::max(worst, std::abs(fitting_rate(a, b) - ref));
    ++n;
  }
  return make("fitting_rate_equals_iou", worst <= 1e-12, worst, 1e-12, "1000 random mask pairs, H,W <= 8");
}

TheoryCheck check_relevance_all_masks() {
  const auto all = MaskFamily::all_masks(3, 3);
  const auto rects = MaskFamily::axis_rectangles(3, 3);
  const double a = relevance_level(all, rects), b = relevance_level(rects, all);
  const bool ok = a == -1.0 && b == -1.0 && relevance_level(all, all) == -1.0;
  return make("relevance_all_masks_is_minus_one", ok, std::max(a, b), -1.0, "3x3 grid");
}

TheoryCheck check_relevance_singleton() {
  double worst = 0.0;
  for (const auto& m : MaskFamily::axis_rectangles(3, 3).members()) {
    const auto s = MaskFamily::singleton(m);
    worst = std::max(worst, std::abs(relevance_level(s, s) - 1.0));
  }
  return make("relevance_singleton_self_is_one", worst == 0.0, worst, 0.0, "every 3x3 rectangle");
}

TheoryCheck check_relevance_monotone(Rng& rng) {
  std::size_t violations = 0;
  for (int t = 0; t < 100; ++t) {
    std::vector<BinaryMask> small, extra, in;
    for (int i = 0; i < 3; ++i) small.push_back(random_mask(rng, 3, 3));
    for (int i = 0; i < 3; ++i) extra.push_back(random_mask(rng, 3, 3));
    for (int i = 0; i < 4; ++i) in.push_back(random_mask(rng, 3, 3));
    std::vector<BinaryMask> big = small;
    big.insert(big.end(), extra.begin(), extra.end());
    const auto f = MaskFamily::explicit_list(small), g = MaskFamily::explicit_list(big);
    const auto fin = MaskFamily::explicit_list(in);
    if (relevance_level(f, fin) < relevance_level(g, fin)) ++violations;
    if (relevance_level(fin, f) < relevance_level(fin, g)) ++violations;
  }
  return make("relevance_monotone_under_inclusion", violations == 0, double(violations), 0.0,
              "100 random nested explicit pairs on 3x3");
}

TheoryCheck check_rademacher(Rng& rng) {
  std::vector<LabeledMask> sample;
  for (std::size_t i = 0; i < 40; ++i) sample.push_back({i, random_mask(rng, 4, 4)});
  const auto est = empirical_rademacher(MaskFamily::all_masks(4, 4), sample, 10000, rng);
  return make("rademacher_all_masks_half", std::abs(est.mean - 0.5) <= 0.02, est.mean, 0.5,
              "|estimate - 0.5| <= 0.02 at 10^4 draws");
}

TheoryCheck check_rademacher_bound(Rng& rng) {
  const auto rects = MaskFamily::axis_rectangles(3, 3);
  std::vector<LabeledMask> sample;
  for (std::size_t i = 0; i < 30; ++i) sample.push_back({i % 10, random_rectangle(rng, 3, 3)});
  const auto est = empirical_rademacher(rects, sample, 2000, rng);
  const double rho = relevance_level(rects, rects);
  const double limit = (1.0 - rho) / 4.0 + 3.0 * est.std_error;
  return make("rademacher_below_relevance_bound", est.mean <= limit, est.mean, limit,
              "axis rectangles on 3x3, estimate <= (1-rho)/4 + 3 stderr");
}

TheoryCheck check_generalization_bound(Rng& rng) {
  std::vector<JointAtom> dist;
  double total = 0.0;
  for (std::size_t x = 0; x < 6; ++x) {
    for (int j = 0; j < 3; ++j) {
      const double p = uniform(rng, 0.2, 1.0);
      dist.push_back({x, random_rectangle(rng, 3, 3), p});
      total += p;
    }
  }
  for (auto& a : dist) a.prob /= total;
  const auto rects = MaskFamily::axis_rectangles(3, 3);
  const auto rep = bound_experiment(dist, rects, rects, 200, 50, 0.05, rng);
  return make("generalization_bound_violation_fraction", rep.violation_fraction <= 0.10, rep.violation_fraction,
              0.10, "200 training sets of size 50, delta = 0.05");
}

MixtureSpec random_mixture(Rng& rng, bool disjoint) {
  const std::size_t m = uniform_int(rng, 4, 64);
  const std::size_t classes = 2;
  MixtureSpec spec;
  std::vector<std::size_t> all(m);
  for (std::size_t i = 0; i < m; ++i) all[i] = i;
  for (std::size_t y = 0; y < classes; ++y) {
    std::vector<std::size_t> support;
    for (std::size_t i = 0; i < m; ++i) {
      if (disjoint ? (i % classes == y) : uniform(rng, 0.0, 1.0) < 0.7) support.push_back(i);
    }
    if (support.empty()) support.push_back(y % m);
    spec.pure.push_back(random_dist(rng, m, support));
  }
  spec.background = random_dist(rng, m, all);
  for (std::size_t i = 0; i < m; ++i) spec.lambda.push_back(uniform(rng, 0.0, 1.0));
  return spec;
}

TheoryCheck check_tv_bound(Rng& rng, bool disjoint) {
  std::size_t failures = 0, checked = 0;
  double worst = -1.0;
  for (int t = 0; t < 50; ++t) {
    const MixtureSpec spec = random_mixture(rng, disjoint);
    const auto rep = tv_lowerbound_check(spec, 0, 1);
    if (disjoint && !rep.bound2) continue;
    ++checked;
    if (!rep.holds) ++failures;
    worst = std::max(worst, std::max(rep.bound1, rep.bound2.value_or(rep.bound1)) - rep.lhs);
  }
  const bool ok = failures == 0 && checked > 0;
  return make(disjoint ? "tv_lower_bound_disjoint_supports" : "tv_lower_bound", ok, worst, 1e-12,
              std::to_string(checked) + " random mixture specs");
}

TheoryCheck check_injectivity(Rng& rng) {
  std::vector<InjectivityPair> pairs;
  for (int t = 0; t < 300; ++t) {
    InjectivityPair p{Tensor(Shape{2, 3, 3}), Tensor(Shape{2, 3, 3}), Tensor(Shape{3, 3}), Tensor(Shape{3, 3})};
    for (std::size_t i = 0; i < p.x.numel(); ++i) {
      p.x[i] = uniform_int(rng, -2, 2);
      p.x2[i] = uniform(rng, 0.0, 1.0) < 0.5 ? p.x[i] : double(uniform_int(rng, -2, 2));
    }
    for (std::size_t i = 0; i < 9; ++i) {
      p.f[i] = uniform_int(rng, 0, 1);
      p.f2[i] = uniform_int(rng, 0, 1);
    }
    pairs.push_back(std::move(p));
  }
  std::size_t bad = 0, covered = 0;
  for (const auto& r : injectivity_binary_check(pairs)) {
    if (!r.applicable || !r.condition) continue;
    ++covered;
    if (!r.outputs_differ) ++bad;
  }
  return make("injectivity_binary_attention", bad == 0 && covered > 0, double(bad), 0.0,
              std::to_string(covered) + " pairs meeting the condition");
}

TheoryCheck check_contraction(Rng& rng) {
  RectParams p;
  p.sigma = {0.3, 0.2};
  p.alpha = 0.4;
  const Tensor map = render_map(p, 6.0, 6, 6);
  const AttentionFn f = [map](const Tensor&) { return map; };
  const auto rep = contraction_check(f, Shape{2, 6, 6}, 0.1, 200, rng);
  return make("contraction_implies_injective", rep.max_ratio < 1.0 && rep.injective_on_sample, rep.max_ratio, 1.0,
              "fixed rectangle map, 200 pairs in a ball of radius 0.1");
}

TheoryCheck check_bound_rhs() {
  const double rhs = bound_rhs({100, 0.05, 0.2, 0.5});
  const double ref = 0.2 + 0.25 + 3.0 * std::sqrt(std::log(40.0) / 200.0);
  return make("bound_rhs_closed_form", std::abs(rhs - ref) <= 1e-15, rhs, ref, "N=100, delta=0.05, R=0.2, rho=0.5");
}

}  // namespace

std::vector<TheoryCheck> run_theory_suite(std::uint64_t seed, bool inject_fault) {
  std::vector<TheoryCheck> checks;
  std::uint64_t stream = 0;
  auto next = [&] { return derive_stream(seed, stream++); };
  Rng r1 = next(), r2 = next(), r3 = next(), r4 = next(), r5 = next(), r6 = next(), r7 = next(), r8 = next(),
      r9 = next(), r10 = next(), r11 = next();
  checks.push_back(check_psi_bounds(r1));
  checks.push_back(check_psi_extremes(r2));
  checks.push_back(check_fitting_iou(r3, inject_fault));
  checks.push_back(check_relevance_all_masks());
  checks.push_back(check_relevance_singleton());
  checks.push_back(check_relevance_monotone(r4));
  checks.push_back(check_rademacher(r5));
  checks.push_back(check_rademacher_bound(r6));
  checks.push_back(check_bound_rhs());
  checks.push_back(check_generalization_bound(r7));
  checks.push_back(check_tv_bound(r8, false));
  checks.push_back(check_tv_bound(r9, true));
  checks.push_back(check_injectivity(r10));
  checks.push_back(check_contraction(r11));
  for (auto& c : checks) c.inputs_digest = sha256_hex(c.name + "|" + std::to_string(seed) + "|" + c.detail);
  return checks;
}

std::string theory_report_json(std::uint64_t seed, const std::vector<TheoryCheck>& checks) {
  nlohmann::json j;
  j["seed"] = seed;
  bool all = true;
  j["checks"] = nlohmann::json::array();
  for (const auto& c : checks) {
    all = all && c.passed;
    j["checks"].push_back(
        {{"name", c.name}, {"passed", c.passed}, {"value", c.value}, {"threshold", c.threshold}, {"detail", c.detail},
         {"inputs_digest", c.inputs_digest}});
  }
  j["passed"] = all;
  return j.dump(2) + "\n";
}

}  // namespace rectattn::cli
