#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rectattn/equivariance.hpp"
#include "rectattn/nn.hpp"
#include "rectattn/pw_attention.hpp"
#include "rectattn/rect_attention.hpp"
#include "rectattn/synthdata.hpp"

namespace rectattn {

enum class AttentionKind { none, position_wise, rectangular };
enum class InsertionDepth { shallow, deep };

const char* to_string(AttentionKind k);
const char* to_string(InsertionDepth d);
std::optional<AttentionKind> parse_attention_kind(const std::string& s);
std::optional<InsertionDepth> parse_insertion_depth(const std::string& s);

struct TrainConfig {
  AttentionKind attention_kind = AttentionKind::rectangular;
  double lambda_eq = 0.1;
  bool use_residual = true;
  bool use_rescale = true;
  InsertionDepth insertion_depth = InsertionDepth::shallow;
  std::size_t epochs = 15;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  double sharpness = 6.0;
  double sigma_min = 0.05;
  double sigma_max = 1.0;
  /// Predictor head biased so the initial rectangle sits in the top-left corner at minimal size.
  bool adversarial_init = false;
  /// Leave the wall_time column at 0 so reruns produce identical metrics.
  bool record_wall_time = false;
  /// Transform sampling ranges and center; lambda_eq above is the weight used.
  EquivarianceConfig eq;
  std::array<std::size_t, 3> predictor_widths = PredictorNet::kDefaultWidths;

  void validate() const;
  RectAttentionConfig attention_config() const;
};

struct ModelShape {
  std::size_t classes = 4;
  std::size_t channels = 1;
  std::size_t height = 48;
  std::size_t width = 48;

  bool operator==(const ModelShape&) const = default;
  std::size_t slot_height() const { return height / 4; }
  std::size_t slot_width() const { return width / 4; }
};

ModelShape model_shape_of(const DatasetHeader& h);

/// conv16-pool-conv32-pool-[shallow slot]-conv64-[deep slot]-GAP-fc64-fcK,
/// with ReLU after every conv and the hidden linear layer.
class TrunkModel {
 public:
  struct Output {
    Var logits;
    Var map;  // [N,h,w] attention map at the slot; unbound for the plain CNN
    RectVars rect;
    bool has_rect = false;
  };

  TrunkModel() = default;
  static TrunkModel create(const ModelShape& shape, const TrainConfig& cfg, Rng& rng);

  /// x is [N,C,H,W]. `forced_map` [N,h,w] replaces the attention map when given.
  Output forward(ParamBinder& bind, const Var& x, const Tensor* forced_map = nullptr) const;
  /// Features entering the attention slot.
  Var slot_features(ParamBinder& bind, const Var& x) const;
  /// Rectangle predicted from slot features.
  RectVars predict_rect(ParamBinder& bind, const Var& features) const;

  std::vector<Parameter*> parameters();
  /// Parameters upstream of the attention slot.
  std::vector<Parameter*> upstream_parameters();
  PredictorNet& predictor() { return predictor_; }
  PWModule& pw() { return pw_; }
  const TrainConfig& config() const { return cfg_; }
  const ModelShape& shape() const { return shape_; }
  std::size_t slot_channels() const;

 private:
  Var attend(ParamBinder& bind, const Var& h, const Tensor* forced_map, Output& out) const;

  ModelShape shape_;
  TrainConfig cfg_;
  Conv2D conv1_, conv2_, conv3_;
  Linear fc1_, fc2_;
  PredictorNet predictor_;
  PWModule pw_;
};

struct MetricsRow {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double mean_psi = 0.0;      // NaN without an attention map
  double mean_eq_loss = 0.0;  // NaN unless rectangular
  double wall_time = 0.0;
};

inline constexpr const char* kMetricsHeader = "epoch,train_loss,train_acc,val_acc,mean_psi,mean_eq_loss,wall_time";
std::string format_metrics_row(const MetricsRow& r);
std::string metrics_csv(const std::vector<MetricsRow>& rows);

struct TrainResult {
  TrunkModel model;
  std::vector<MetricsRow> rows;
  std::vector<double> train_main_loss;  // per epoch
  std::vector<double> train_mean_phi;   // per epoch, NaN without a map
  /// Pearson correlation of the two series above (logged evidence, not a gate).
  double h1_correlation = 0.0;
};

TrainResult train(const TrainConfig& cfg, const Dataset& train_set, const Dataset& val_set);

struct EvalMetrics {
  double accuracy = 0.0;
  double mean_psi = 0.0;
  double mean_phi = 0.0;
  double mean_fitting_rate = 0.0;
};

/// Metrics of Psi/Phi/fitting rate are computed at slot resolution against
/// the ground-truth rectangle rasterized at the same resolution.
EvalMetrics evaluate(TrunkModel& model, const Dataset& ds);

/// Mean validation equivariance loss under fixed transforms (one per batch of
/// `batch_size`, drawn from a constant seed). NaN unless rectangular.
double validation_eq_loss(TrunkModel& model, const Dataset& ds, std::size_t batch_size = 32);

/// Attention maps [N,h,w] and rectangles (if any) for a set of samples.
struct AttentionDump {
  std::vector<Tensor> maps;
  std::vector<RectParams> rects;
};
AttentionDump attention_maps(TrunkModel& model, const Dataset& ds, const std::vector<std::size_t>& indices);

struct ResidualAblationSeed {
  std::uint64_t seed = 0;
  std::vector<double> loss_residual;      // per-epoch mean training loss
  std::vector<double> loss_nonresidual;
  double val_acc_residual = 0.0;
  double val_acc_nonresidual = 0.0;
  double initial_psi = 0.0;         // catching rate of the corner rectangle vs ground truth
  double initial_fitting_rate = 0.0;
};

std::vector<ResidualAblationSeed> ablation_residual(const TrainConfig& base, const Dataset& train_set,
                                                    const Dataset& val_set, const std::vector<std::uint64_t>& seeds);

struct ZeroSupportProbe {
  double upstream_grad_norm_nonresidual = 0.0;
  double upstream_grad_norm_residual = 0.0;
};

/// Forces an all-zero attention map and measures the gradient norm of the
/// parameters upstream of the slot, with and without the residual path.
ZeroSupportProbe zero_support_gradient_probe(const TrainConfig& cfg, const Dataset& ds, std::size_t batch);

struct RescaleStability {
  std::vector<double> sigmas;
  double reference_mean = 0.0;             // uniform map (f = 1)
  std::vector<double> mean_with_rescale;   // per sigma
  std::vector<double> mean_without_rescale;
};

/// Mean |x + g*x| on random features for centered rectangles of the given sizes.
RescaleStability rescale_stability(const std::vector<double>& sigmas, Rng& rng);

/// Writes one PGM map per model for each selected image; returns the paths.
/// Models are labeled `<kind>_<depth>` in the file names.
std::vector<std::string> depth_comparison(std::vector<TrunkModel*> models, const Dataset& ds,
                                          const std::vector<std::size_t>& indices, const std::string& out_dir);

double pearson_correlation(const std::vector<double>& a, const std::vector<double>& b);

/// Stacks sample images into a batch [N,C,H,W].
Tensor batch_images(const Dataset& ds, std::span<const std::size_t> indices);

}  // namespace rectattn
