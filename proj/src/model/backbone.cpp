#include "stk/model/backbone.hpp"

#include "stk/core/error.hpp"
#include "stk/tensor/ops.hpp"

namespace stk::model {

template <typename T>
PointEncoder<T>::PointEncoder(const ModelConfig& cfg, Initializer& init)
    : embed_in_(3, cfg.feature_dim, init), embed_out_(cfg.feature_dim, cfg.feature_dim, init), neighbors_(cfg.neighbors) {
  require(cfg.search_stages.size() == cfg.template_stages.size(), ErrorKind::kInvalidArgument,
          "search and template paths need the same number of encoder stages");
  const std::size_t c = cfg.feature_dim;
  for (std::size_t s = 0; s < cfg.search_stages.size(); ++s) {
    Stage stage;
    stage.group = nn::Linear<T>(c + 3, c, init);
    stage.mix = nn::Linear<T>(c, c, init);
    stages_.push_back(std::move(stage));
  }
}

template <typename T>
BasicTensor<T> PointEncoder<T>::embed(const PointCloud& pc) const {
  return relu(embed_out_(relu(embed_in_(geometry::to_tensor<T>(pc)))));
}

template <typename T>
Encoded<T> PointEncoder<T>::operator()(const PointCloud& pc, const std::vector<std::size_t>& counts) const {
  require(counts.size() == stages_.size(), ErrorKind::kInvalidArgument, "encoder stage count mismatch");
  require(!counts.empty() && pc.size() >= counts.front(), ErrorKind::kOutOfRange,
          "encoder needs at least " + std::to_string(counts.empty() ? 0 : counts.front()) + " points, got " +
              std::to_string(pc.size()));
  BasicTensor<T> features = embed(pc);
  BasicTensor<T> xyz = geometry::to_tensor<T>(pc);
  PointCloud coords = pc;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    const auto centers = geometry::farthest_point_sample(coords, counts[s]);
    const std::size_t k = std::min(neighbors_, coords.size());
    const auto groups = geometry::k_nearest(coords, centers, k);
    std::vector<std::uint32_t> center_of_row;
    center_of_row.reserve(groups.size());
    for (auto c : centers) center_of_row.insert(center_of_row.end(), k, c);
    const auto offsets = sub(gather_rows(xyz, groups), gather_rows(xyz, center_of_row));
    const auto rows = concat_cols<T>({gather_rows(features, groups), offsets});
    const auto& stage = stages_[s];
    features = group_max(relu(stage.mix(relu(stage.group(rows)))), k);
    xyz = gather_rows(xyz, centers);
    coords = geometry::select(coords, centers);
  }
  return {features, coords};
}

template <typename T>
void PointEncoder<T>::collect(const std::string& prefix, nn::ParameterList<T>& out) const {
  embed_in_.collect(prefix + ".embed_in", out);
  embed_out_.collect(prefix + ".embed_out", out);
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    stages_[s].group.collect(prefix + ".stage" + std::to_string(s) + ".group", out);
    stages_[s].mix.collect(prefix + ".stage" + std::to_string(s) + ".mix", out);
  }
}

template <typename T>
Backbone<T>::Backbone(const ModelConfig& cfg, Initializer& init)
    : encoder(cfg, init),
      fusion(cfg.feature_dim, cfg.heads, init),
      search_stages_(cfg.search_stages),
      template_stages_(cfg.template_stages) {}

template <typename T>
BasicTensor<T> Backbone<T>::relation_fuse(const BasicTensor<T>& template_features,
                                          const BasicTensor<T>& search_features) const {
  require(template_features.rank() == 2 && search_features.rank() == 2 &&
              template_features.dim(1) == search_features.dim(1),
          ErrorKind::kShapeMismatch,
          "relation_fuse: template " + shape_str(template_features.shape()) + " vs search " +
              shape_str(search_features.shape()));
  return fusion(search_features, template_features);
}

template <typename T>
void Backbone<T>::collect(const std::string& prefix, nn::ParameterList<T>& out) const {
  encoder.collect(prefix + ".encoder", out);
  fusion.collect(prefix + ".fusion", out);
}

template class PointEncoder<float>;
template class PointEncoder<double>;
template class Backbone<float>;
template class Backbone<double>;

}  // namespace stk::model
