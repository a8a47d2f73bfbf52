#include "rectattn/pw_attention.hpp"

#include "rectattn/errors.hpp"
#include "rectattn/rect_attention.hpp"

namespace rectattn {

PWModule PWModule::create(const std::string& name, std::size_t in_channels, Rng& rng, std::size_t width) {
  PWModule m;
  const ConvGeometry dilated{1, 4, 4};
  m.layers_[0] = Conv2D::create(name + ".reduce", in_channels, width, 1, ConvGeometry{}, rng);
  m.layers_[1] = Conv2D::create(name + ".dilated1", width, width, 3, dilated, rng);
  m.layers_[2] = Conv2D::create(name + ".dilated2", width, width, 3, dilated, rng);
  m.layers_[3] = Conv2D::create(name + ".head", width, 1, 3, dilated, rng);
  return m;
}

Var PWModule::forward(ParamBinder& bind, const Var& x) const {
  const bool batched = x.value().rank() == 4;
  if (x.value().rank() != 3 && !batched) throw ShapeError("pw_forward expects [C,H,W] or [N,C,H,W]");
  if (x.value().dim(batched ? 1 : 0) != in_channels()) {
    throw ShapeError("pw_forward expects " + std::to_string(in_channels()) + " channels, got " +
                     shape_str(x.shape()));
  }
  Var h = x;
  for (std::size_t k = 0; k < 3; ++k) h = relu(layers_[k].forward(bind, h));
  h = sigmoid(layers_[3].forward(bind, h));
  Shape s = h.shape();
  s.erase(s.end() - 3);
  return reshape(h, s);
}

std::vector<Parameter*> PWModule::parameters() {
  std::vector<Parameter*> out;
  for (auto& l : layers_)
    for (Parameter* p : l.parameters()) out.push_back(p);
  return out;
}

std::size_t PWModule::multiply_accumulates(std::size_t h, std::size_t w) const {
  std::size_t total = 0;
  for (const auto& l : layers_) total += l.weight.value.numel() * h * w;
  return total;
}

Var pw_apply(const Var& x, const Var& f) {
  RectAttentionConfig cfg;
  cfg.use_rescale = false;
  cfg.use_residual = true;
  return apply_attention(x, f, cfg);
}

}  // namespace rectattn
