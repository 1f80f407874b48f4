#include "stk/model/tapm.hpp"

#include "stk/core/error.hpp"
#include "stk/tensor/ops.hpp"

namespace stk::model {

template <typename T>
Tapm<T>::Tapm(const ModelConfig& cfg, Initializer& init)
    : mask_proj(cfg.feature_dim, 1, init),
      substrate(init.uniform<T>({cfg.prototypes, cfg.feature_dim}, cfg.feature_dim, cfg.feature_dim)),
      coord_hidden(cfg.feature_dim, cfg.feature_dim, init),
      coord_out(cfg.feature_dim, 3, init) {
  require(cfg.prototypes >= 1 && cfg.tapm_depth >= 1, ErrorKind::kInvalidArgument,
          "prototype mining needs at least one prototype and one attention layer");
  for (std::size_t i = 0; i < cfg.tapm_depth; ++i) blocks.emplace_back(cfg.feature_dim, cfg.heads, init, nn::AttentionKind::kSelf);
  const auto& b = cfg.bev;
  center_ = BasicTensor<T>({3}, {static_cast<T>((b.x_min + b.x_max) / 2), static_cast<T>((b.y_min + b.y_max) / 2),
                                 static_cast<T>((b.z_min + b.z_max) / 2)});
  half_ = BasicTensor<T>({3}, {static_cast<T>((b.x_max - b.x_min) / 2), static_cast<T>((b.y_max - b.y_min) / 2),
                               static_cast<T>((b.z_max - b.z_min) / 2)});
}

template <typename T>
MaskedFeatures<T> Tapm<T>::mask_and_enhance(const BasicTensor<T>& fused) const {
  auto mask = sigmoid(mask_proj(fused));
  auto enhanced = scale_rows(fused, mask);
  return {mask, enhanced};
}

template <typename T>
PrototypeFeatures<T> Tapm<T>::iterate_prototypes(const BasicTensor<T>& enhanced) const {
  require(enhanced.rank() == 2 && enhanced.dim(1) == substrate.dim(1), ErrorKind::kShapeMismatch,
          "iterate_prototypes: features " + shape_str(enhanced.shape()) + " vs substrate " +
              shape_str(substrate.shape()));
  const std::size_t n = enhanced.dim(0);
  auto tokens = concat_rows<T>({enhanced, substrate});
  for (const auto& block : blocks) tokens = block(tokens);
  return {slice_rows(tokens, 0, n), slice_rows(tokens, n, tokens.dim(0))};
}

template <typename T>
BasicTensor<T> Tapm<T>::predict_prototype_coords(const BasicTensor<T>& prototypes) const {
  const auto raw = coord_out(relu(coord_hidden(prototypes)));
  return add_bias(mul_lastdim(tanh(raw), half_), center_);
}

template <typename T>
TapmOutput<T> Tapm<T>::operator()(const BasicTensor<T>& fused) const {
  const auto masked = mask_and_enhance(fused.detach());
  const auto mined = iterate_prototypes(masked.enhanced);
  return {masked.mask, mined.prototypes, predict_prototype_coords(mined.prototypes)};
}

template <typename T>
void Tapm<T>::collect(const std::string& prefix, nn::ParameterList<T>& out) const {
  mask_proj.collect(prefix + ".mask", out);
  out.push_back({prefix + ".substrate", substrate});
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(prefix + ".block" + std::to_string(i), out);
  coord_hidden.collect(prefix + ".coord_hidden", out);
  coord_out.collect(prefix + ".coord_out", out);
}

template <typename T>
EnhancedCloud<T> assemble_enhanced(const geometry::PointCloud& search_coords, const BasicTensor<T>& search_features,
                                   const BasicTensor<T>* prototype_coords, const BasicTensor<T>* prototype_features) {
  require(search_features.rank() == 2 && search_features.dim(0) == search_coords.size(), ErrorKind::kShapeMismatch,
          "assemble_enhanced: " + std::to_string(search_coords.size()) + " search points vs features " +
              shape_str(search_features.shape()));
  require((prototype_coords == nullptr) == (prototype_features == nullptr), ErrorKind::kInvalidArgument,
          "assemble_enhanced: prototype coordinates and features must come together");
  if (prototype_coords == nullptr) return {search_coords, search_features};
  require(prototype_coords->rank() == 2 && prototype_coords->dim(1) == 3 && prototype_features->rank() == 2 &&
              prototype_coords->dim(0) == prototype_features->dim(0),
          ErrorKind::kShapeMismatch,
          "assemble_enhanced: prototype coordinates " + shape_str(prototype_coords->shape()) + " vs features " +
              shape_str(prototype_features->shape()));
  EnhancedCloud<T> out{search_coords, concat_rows<T>({search_features, *prototype_features})};
  const auto extra = geometry::to_cloud(prototype_coords->data());
  out.coords.insert(out.coords.end(), extra.begin(), extra.end());
  return out;
}

template class Tapm<float>;
template class Tapm<double>;
template EnhancedCloud<float> assemble_enhanced(const geometry::PointCloud&, const BasicTensor<float>&,
                                                const BasicTensor<float>*, const BasicTensor<float>*);
template EnhancedCloud<double> assemble_enhanced(const geometry::PointCloud&, const BasicTensor<double>&,
                                                 const BasicTensor<double>*, const BasicTensor<double>*);

}  // namespace stk::model
