#include "rectattn/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <numeric>

#include "rectattn/errors.hpp"
#include "rectattn/image_export.hpp"
#include "rectattn/theory.hpp"

namespace rectattn {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
// Transforms used to score equivariance on validation data are shared by all runs.
constexpr std::uint64_t kValidationTransformSeed = 0x5eed'e9c0ULL;
constexpr std::size_t kEvalBatch = 50;

double logit(double p) { return std::log(p / (1.0 - p)); }

std::size_t argmax_row(const Tensor& logits, std::size_t row) {
  const std::size_t k = logits.dim(1);
  std::size_t best = 0;
  for (std::size_t j = 1; j < k; ++j)
    if (logits[row * k + j] > logits[row * k + best]) best = j;
  return best;
}

Tensor map_slice(const Tensor& maps, std::size_t n) {
  const std::size_t h = maps.dim(1), w = maps.dim(2);
  std::vector<double> v(maps.ptr() + n * h * w, maps.ptr() + (n + 1) * h * w);
  return Tensor(Shape{h, w}, std::move(v));
}

std::vector<BinaryMask> slot_gt_masks(const Dataset& ds, const ModelShape& shape) {
  std::vector<BinaryMask> out;
  out.reserve(ds.samples.size());
  for (const auto& s : ds.samples) out.push_back(gt_mask(s.gt_rect, shape.slot_height(), shape.slot_width()));
  return out;
}

std::vector<std::size_t> range_indices(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return idx;
}

}  // namespace

const char* to_string(AttentionKind k) {
  switch (k) {
    case AttentionKind::none: return "none";
    case AttentionKind::position_wise: return "position_wise";
    case AttentionKind::rectangular: return "rectangular";
  }
  return "?";
}

const char* to_string(InsertionDepth d) { return d == InsertionDepth::shallow ? "shallow" : "deep"; }

std::optional<AttentionKind> parse_attention_kind(const std::string& s) {
  if (s == "none") return AttentionKind::none;
  if (s == "position_wise") return AttentionKind::position_wise;
  if (s == "rectangular") return AttentionKind::rectangular;
  return std::nullopt;
}

std::optional<InsertionDepth> parse_insertion_depth(const std::string& s) {
  if (s == "shallow") return InsertionDepth::shallow;
  if (s == "deep") return InsertionDepth::deep;
  return std::nullopt;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw DomainError("batch_size must be >= 1");
  if (epochs < 1) throw DomainError("epochs must be >= 1");
  if (!(lr > 0.0)) throw DomainError("lr must be positive");
  if (!(lambda_eq >= 0.0)) throw DomainError("lambda_eq must be non-negative");
  attention_config().validate();
  eq.validate();
}

RectAttentionConfig TrainConfig::attention_config() const {
  RectAttentionConfig c;
  c.sharpness = sharpness;
  c.sigma_min = sigma_min;
  c.sigma_max = sigma_max;
  c.use_rescale = use_rescale;
  c.use_residual = use_residual;
  return c;
}

ModelShape model_shape_of(const DatasetHeader& h) {
  return ModelShape{h.classes, h.channels, h.height, h.width};
}

TrunkModel TrunkModel::create(const ModelShape& shape, const TrainConfig& cfg, Rng& rng) {
  cfg.validate();
  if (shape.height % 4 != 0 || shape.width % 4 != 0) throw ShapeError("image extents must be divisible by 4");
  if (cfg.attention_kind == AttentionKind::rectangular &&
      (shape.slot_height() % 4 != 0 || shape.slot_width() % 4 != 0)) {
    throw ShapeError("rectangular attention needs image extents divisible by 16");
  }
  TrunkModel m;
  m.shape_ = shape;
  m.cfg_ = cfg;
  const ConvGeometry same{1, 1, 1};
  m.conv1_ = Conv2D::create("trunk.conv1", shape.channels, 16, 3, same, rng);
  m.conv2_ = Conv2D::create("trunk.conv2", 16, 32, 3, same, rng);
  m.conv3_ = Conv2D::create("trunk.conv3", 32, 64, 3, same, rng);
  m.fc1_ = Linear::create("trunk.fc1", 64, 64, rng);
  m.fc2_ = Linear::create("trunk.fc2", 64, shape.classes, rng);
  const std::size_t slot_c = m.slot_channels();
  if (cfg.attention_kind == AttentionKind::rectangular) {
    m.predictor_ = PredictorNet::create("attn.rect", slot_c, rng, cfg.predictor_widths);
    if (cfg.adversarial_init) {
      // mu = 0.1 on both axes, sigma = sigma_min + 1% of the range
      const double sigma_raw = logit(0.01);
      Tensor& b = m.predictor_.head().bias.value;
      b[0] = logit(0.1);
      b[1] = logit(0.1);
      b[2] = sigma_raw;
      b[3] = sigma_raw;
      b[4] = 0.0;
    }
  } else if (cfg.attention_kind == AttentionKind::position_wise) {
    m.pw_ = PWModule::create("attn.pw", slot_c, rng);
  }
  return m;
}

std::size_t TrunkModel::slot_channels() const {
  return cfg_.insertion_depth == InsertionDepth::shallow ? 32 : 64;
}

Var TrunkModel::slot_features(ParamBinder& bind, const Var& x) const {
  if (x.value().rank() != 4 || x.value().dim(1) != shape_.channels || x.value().dim(2) != shape_.height ||
      x.value().dim(3) != shape_.width) {
    throw ShapeError("model expects [N," + std::to_string(shape_.channels) + "," + std::to_string(shape_.height) +
                     "," + std::to_string(shape_.width) + "], got " + shape_str(x.shape()));
  }
  Var h = maxpool2d(relu(conv1_.forward(bind, x)), 2);
  h = maxpool2d(relu(conv2_.forward(bind, h)), 2);
  if (cfg_.insertion_depth == InsertionDepth::deep) h = relu(conv3_.forward(bind, h));
  return h;
}

RectVars TrunkModel::predict_rect(ParamBinder& bind, const Var& features) const {
  if (cfg_.attention_kind != AttentionKind::rectangular) throw DomainError("model has no rectangle predictor");
  return predict_params(predictor_, bind, features, cfg_.attention_config());
}

Var TrunkModel::attend(ParamBinder& bind, const Var& h, const Tensor* forced_map, Output& out) const {
  if (cfg_.attention_kind == AttentionKind::none && forced_map == nullptr) return h;
  RectAttentionConfig acfg = cfg_.attention_config();
  if (forced_map != nullptr) {
    out.map = bind.tape().constant(*forced_map);
  } else if (cfg_.attention_kind == AttentionKind::rectangular) {
    out.rect = predict_rect(bind, h);
    out.has_rect = true;
    out.map = render_map(out.rect, cfg_.sharpness, h.value().dim(2), h.value().dim(3));
  } else {
    out.map = pw_.forward(bind, h);
    acfg.use_rescale = false;
  }
  return apply_attention(h, out.map, acfg);
}

TrunkModel::Output TrunkModel::forward(ParamBinder& bind, const Var& x, const Tensor* forced_map) const {
  Output out;
  Var h = slot_features(bind, x);
  h = attend(bind, h, forced_map, out);
  if (cfg_.insertion_depth == InsertionDepth::shallow) h = relu(conv3_.forward(bind, h));
  h = relu(fc1_.forward(bind, global_avg_pool(h)));
  out.logits = fc2_.forward(bind, h);
  return out;
}

std::vector<Parameter*> TrunkModel::parameters() {
  std::vector<Parameter*> out = upstream_parameters();
  if (cfg_.insertion_depth == InsertionDepth::shallow)
    for (Parameter* p : conv3_.parameters()) out.push_back(p);
  for (auto* layer : {&fc1_, &fc2_})
    for (Parameter* p : layer->parameters()) out.push_back(p);
  if (cfg_.attention_kind == AttentionKind::rectangular)
    for (Parameter* p : predictor_.parameters()) out.push_back(p);
  if (cfg_.attention_kind == AttentionKind::position_wise)
    for (Parameter* p : pw_.parameters()) out.push_back(p);
  return out;
}

std::vector<Parameter*> TrunkModel::upstream_parameters() {
  std::vector<Parameter*> out;
  for (auto* layer : {&conv1_, &conv2_})
    for (Parameter* p : layer->parameters()) out.push_back(p);
  if (cfg_.insertion_depth == InsertionDepth::deep)
    for (Parameter* p : conv3_.parameters()) out.push_back(p);
  return out;
}

std::string format_metrics_row(const MetricsRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%zu,%.10g,%.10g,%.10g,%.10g,%.10g,%.3f", r.epoch, r.train_loss, r.train_acc,
                r.val_acc, r.mean_psi, r.mean_eq_loss, r.wall_time);
  return buf;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : rows) out += format_metrics_row(r) + "\n";
  return out;
}

Tensor batch_images(const Dataset& ds, std::span<const std::size_t> indices) {
  const auto& hd = ds.header;
  const std::size_t pixels = static_cast<std::size_t>(hd.channels) * hd.height * hd.width;
  Tensor out(Shape{indices.size(), hd.channels, hd.height, hd.width});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const Tensor& img = ds.samples.at(indices[k]).image;
    std::copy_n(img.ptr(), pixels, out.ptr() + k * pixels);
  }
  return out;
}

double pearson_correlation(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) return kNaN;
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return kNaN;
  return sab / std::sqrt(saa * sbb);
}

EvalMetrics evaluate(TrunkModel& model, const Dataset& ds) {
  if (model_shape_of(ds.header) != model.shape()) throw ShapeError("model and dataset shapes differ");
  const auto gts = slot_gt_masks(ds, model.shape());
  const bool has_map = model.config().attention_kind != AttentionKind::none;
  std::size_t correct = 0;
  double psi = 0.0, phi = 0.0, fit = 0.0;
  const std::size_t n = ds.samples.size();
  for (std::size_t start = 0; start < n; start += kEvalBatch) {
    const auto idx = range_indices(start, std::min(n, start + kEvalBatch));
    Tape tape;
    ParamBinder bind(tape, false);
    const auto out = model.forward(bind, tape.constant(batch_images(ds, idx)));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (static_cast<int>(argmax_row(out.logits.value(), k)) == ds.samples[idx[k]].label) ++correct;
      if (!has_map) continue;
      const BinaryMask pred = binarize(map_slice(out.map.value(), k));
      const BinaryMask& gt = gts[idx[k]];
      psi += catching_rate(pred, gt);
      phi += missing_rate(pred, gt);
      fit += fitting_rate(gt, pred);
    }
  }
  EvalMetrics m;
  const double dn = static_cast<double>(n);
  m.accuracy = static_cast<double>(correct) / dn;
  m.mean_psi = has_map ? psi / dn : kNaN;
  m.mean_phi = has_map ? phi / dn : kNaN;
  m.mean_fitting_rate = has_map ? fit / dn : kNaN;
  return m;
}

double validation_eq_loss(TrunkModel& model, const Dataset& ds, std::size_t batch_size) {
  if (model.config().attention_kind != AttentionKind::rectangular) return kNaN;
  if (batch_size == 0) throw DomainError("batch_size must be positive");
  const TrainConfig& cfg = model.config();
  const RectAttentionConfig acfg = cfg.attention_config();
  const std::size_t n = ds.samples.size();
  double total = 0.0;
  for (std::size_t start = 0, b = 0; start < n; start += batch_size, ++b) {
    const auto idx = range_indices(start, std::min(n, start + batch_size));
    Rng rng = derive_stream(kValidationTransformSeed, b);
    const TransformSpec spec = sample_transform(rng, cfg.eq);
    const Tensor x = batch_images(ds, idx);
    Tape tape;
    ParamBinder bind(tape, false);
    const RectVars p = model.predict_rect(bind, model.slot_features(bind, tape.constant(x)));
    const RectVars pt =
        model.predict_rect(bind, model.slot_features(bind, tape.constant(warp_image(x, spec, cfg.eq.center))));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      total += equivariance_loss(pt.at(k), transform_params(p.at(k), spec, cfg.eq.center, acfg));
    }
  }
  return total / static_cast<double>(n);
}

TrainResult train(const TrainConfig& cfg, const Dataset& train_set, const Dataset& val_set) {
  cfg.validate();
  const ModelShape shape = model_shape_of(train_set.header);
  if (model_shape_of(val_set.header) != shape) throw ShapeError("train and validation sets differ in K, C, H or W");
  if (train_set.samples.empty() || val_set.samples.empty()) throw DomainError("datasets must be non-empty");

  Rng init_rng = derive_stream(cfg.seed, 0);
  Rng shuffle_rng = derive_stream(cfg.seed, 1);
  Rng eq_rng = derive_stream(cfg.seed, 2);
  TrainResult result{TrunkModel::create(shape, cfg, init_rng), {}, {}, {}, 0.0};
  TrunkModel& model = result.model;
  const std::vector<Parameter*> params = model.parameters();
  AdamState adam;
  adam.lr = cfg.lr;

  const bool rect = cfg.attention_kind == AttentionKind::rectangular;
  const bool has_map = cfg.attention_kind != AttentionKind::none;
  const bool use_eq = rect && cfg.lambda_eq > 0.0;
  const RectAttentionConfig acfg = cfg.attention_config();
  const auto gts = slot_gt_masks(train_set, shape);
  const std::size_t n = train_set.samples.size();
  std::vector<std::size_t> order = range_indices(0, n);
  std::vector<int> labels;
  const auto t0 = std::chrono::steady_clock::now();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0, phi_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(n, start + cfg.batch_size) - start);
      labels.clear();
      for (std::size_t i : idx) labels.push_back(train_set.samples[i].label);
      const Tensor x = batch_images(train_set, idx);

      Tape tape;
      ParamBinder bind(tape);
      const auto out = model.forward(bind, tape.constant(x));
      const Var main = softmax_cross_entropy(out.logits, labels);
      Var loss = main;
      if (use_eq) {
        const TransformSpec spec = sample_transform(eq_rng, cfg.eq);
        const Tensor xt = warp_image(x, spec, cfg.eq.center);
        const RectVars pt = model.predict_rect(bind, model.slot_features(bind, tape.constant(xt)));
        const RectVars ph = transform_params(out.rect, spec, cfg.eq.center, acfg);
        loss = combined_loss(main, equivariance_loss(pt, ph), cfg.lambda_eq);
      }
      const Gradients grads = backward(loss);
      adam_step(adam, params, bind.gradients(grads, params));

      loss_sum += main.value().item() * static_cast<double>(idx.size());
      for (std::size_t k = 0; k < idx.size(); ++k) {
        if (static_cast<int>(argmax_row(out.logits.value(), k)) == labels[k]) ++correct;
        if (has_map) phi_sum += missing_rate(binarize(map_slice(out.map.value(), k)), gts[idx[k]]);
      }
    }
    if (!std::isfinite(loss_sum)) throw DomainError("training diverged: non-finite loss");

    MetricsRow row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(n);
    row.train_acc = static_cast<double>(correct) / static_cast<double>(n);
    const EvalMetrics val = evaluate(model, val_set);
    row.val_acc = val.accuracy;
    row.mean_psi = val.mean_psi;
    row.mean_eq_loss = validation_eq_loss(model, val_set, cfg.batch_size);
    if (cfg.record_wall_time) {
      row.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    result.rows.push_back(row);
    result.train_main_loss.push_back(row.train_loss);
    result.train_mean_phi.push_back(has_map ? phi_sum / static_cast<double>(n) : kNaN);
  }
  result.h1_correlation = has_map ? pearson_correlation(result.train_main_loss, result.train_mean_phi) : kNaN;
  return result;
}

AttentionDump attention_maps(TrunkModel& model, const Dataset& ds, const std::vector<std::size_t>& indices) {
  if (model_shape_of(ds.header) != model.shape()) throw ShapeError("model and dataset shapes differ");
  if (model.config().attention_kind == AttentionKind::none) throw DomainError("model has no attention map");
  AttentionDump dump;
  for (std::size_t start = 0; start < indices.size(); start += kEvalBatch) {
    const std::vector<std::size_t> idx(indices.begin() + static_cast<std::ptrdiff_t>(start),
                                       indices.begin() + static_cast<std::ptrdiff_t>(std::min(indices.size(), start + kEvalBatch)));
    Tape tape;
    ParamBinder bind(tape, false);
    const auto out = model.forward(bind, tape.constant(batch_images(ds, idx)));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      dump.maps.push_back(map_slice(out.map.value(), k));
      if (out.has_rect) dump.rects.push_back(out.rect.at(k));
    }
  }
  return dump;
}

std::vector<ResidualAblationSeed> ablation_residual(const TrainConfig& base, const Dataset& train_set,
                                                    const Dataset& val_set, const std::vector<std::uint64_t>& seeds) {
  if (seeds.size() < 3) throw DomainError("residual ablation needs at least 3 seeds");
  std::vector<ResidualAblationSeed> report;
  for (std::uint64_t seed : seeds) {
    ResidualAblationSeed r;
    r.seed = seed;
    TrainConfig cfg = base;
    cfg.attention_kind = AttentionKind::rectangular;
    cfg.adversarial_init = true;
    cfg.seed = seed;
    {
      cfg.use_residual = true;
      Rng rng = derive_stream(seed, 0);
      TrunkModel init = TrunkModel::create(model_shape_of(train_set.header), cfg, rng);
      const EvalMetrics m = evaluate(init, val_set);
      r.initial_psi = m.mean_psi;
      r.initial_fitting_rate = m.mean_fitting_rate;
    }
    for (bool residual : {true, false}) {
      cfg.use_residual = residual;
      const TrainResult t = train(cfg, train_set, val_set);
      (residual ? r.loss_residual : r.loss_nonresidual) = t.train_main_loss;
      (residual ? r.val_acc_residual : r.val_acc_nonresidual) = t.rows.back().val_acc;
    }
    report.push_back(std::move(r));
  }
  return report;
}

ZeroSupportProbe zero_support_gradient_probe(const TrainConfig& cfg_in, const Dataset& ds, std::size_t batch) {
  const ModelShape shape = model_shape_of(ds.header);
  const std::size_t count = std::min(batch, ds.samples.size());
  if (count == 0) throw DomainError("probe needs at least one sample");
  const auto idx = range_indices(0, count);
  const Tensor x = batch_images(ds, idx);
  std::vector<int> labels;
  for (std::size_t i : idx) labels.push_back(ds.samples[i].label);
  const Tensor zero_map(Shape{count, shape.slot_height(), shape.slot_width()}, 0.0);

  ZeroSupportProbe probe;
  for (bool residual : {false, true}) {
    TrainConfig cfg = cfg_in;
    cfg.use_residual = residual;
    cfg.use_rescale = false;  // a zero map cannot be rescaled
    Rng rng = derive_stream(cfg.seed, 0);
    TrunkModel model = TrunkModel::create(shape, cfg, rng);
    Tape tape;
    ParamBinder bind(tape);
    const auto out = model.forward(bind, tape.constant(x), &zero_map);
    const Gradients grads = backward(softmax_cross_entropy(out.logits, labels));
    const auto upstream = model.upstream_parameters();
    double sq = 0.0;
    for (const Tensor& g : bind.gradients(grads, upstream))
      for (double v : g.data()) sq += v * v;
    (residual ? probe.upstream_grad_norm_residual : probe.upstream_grad_norm_nonresidual) = std::sqrt(sq);
  }
  return probe;
}

RescaleStability rescale_stability(const std::vector<double>& sigmas, Rng& rng) {
  constexpr std::size_t c = 16, h = 48, w = 48;
  Tensor x(Shape{c, h, w});
  for (double& v : x.data()) v = uniform(rng, -1.0, 1.0);
  auto mean_abs = [](const Tensor& t) {
    double acc = 0.0;
    for (double v : t.data()) acc += std::abs(v);
    return acc / static_cast<double>(t.numel());
  };
  RectAttentionConfig with, without;
  without.use_rescale = false;
  RescaleStability r;
  r.sigmas = sigmas;
  r.reference_mean = mean_abs(apply_attention(x, Tensor(Shape{h, w}, 1.0), with));
  for (double s : sigmas) {
    RectParams p;
    p.sigma = {s, s};
    const Tensor f = render_map(p, with.sharpness, h, w);
    r.mean_with_rescale.push_back(mean_abs(apply_attention(x, f, with)));
    r.mean_without_rescale.push_back(mean_abs(apply_attention(x, f, without)));
  }
  return r;
}

std::vector<std::string> depth_comparison(std::vector<TrunkModel*> models, const Dataset& ds,
                                          const std::vector<std::size_t>& indices, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::string> paths;
  for (TrunkModel* m : models) {
    const std::string label =
        std::string(to_string(m->config().attention_kind)) + "_" + to_string(m->config().insertion_depth);
    const AttentionDump dump = attention_maps(*m, ds, indices);
    for (std::size_t k = 0; k < indices.size(); ++k) {
      const std::string path = (std::filesystem::path(out_dir) /
                                ("img" + std::to_string(indices[k]) + "_" + label + ".pgm")).string();
      write_pgm(path, dump.maps[k]);
      paths.push_back(path);
    }
  }
  return paths;
}

}  // namespace rectattn
