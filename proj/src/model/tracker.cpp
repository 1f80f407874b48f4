#include "stk/model/tracker.hpp"

#include "json.hpp"

#include "stk/core/error.hpp"
#include "stk/model/checkpoint.hpp"

namespace stk::model {

template <typename T>
TrackerNet<T>::TrackerNet(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Initializer init(seed);
  backbone = Backbone<T>(cfg_, init);
  if (cfg_.use_tapm) tapm.emplace(cfg_, init);
  head = RgsHead<T>(cfg_, init);
}

template <typename T>
TrackerOutput<T> TrackerNet<T>::forward(const geometry::PointCloud& search,
                                        const geometry::PointCloud& template_points) const {
  const auto s = backbone.encode_search(search);
  const auto t = backbone.encode_template(template_points);
  const auto fused = backbone.relation_fuse(t.features, s.features);
  TrackerOutput<T> out;
  if (tapm) {
    out.tapm = (*tapm)(fused);
    const auto cloud = assemble_enhanced(s.coords, fused, &out.tapm->coords, &out.tapm->prototypes);
    out.maps = head(cloud.coords, cloud.features);
  } else {
    out.maps = head(s.coords, fused);
  }
  return out;
}

template <typename T>
geometry::Box3D TrackerNet<T>::predict(const geometry::PointCloud& search, const geometry::PointCloud& template_points,
                                       const geometry::Box3D& reference, const geometry::Vec3& size) const {
  NoGradGuard guard;
  const auto out = forward(search, template_points);
  return geometry::box_from_frame(decode_box(out.maps, cfg_.output_grid(), size), reference);
}

template <typename T>
nn::ParameterList<T> TrackerNet<T>::parameters() const {
  nn::ParameterList<T> out;
  backbone.collect("backbone", out);
  if (tapm) tapm->collect("tapm", out);
  head.collect("head", out);
  return out;
}

template <typename T>
void save_model(const std::filesystem::path& path, const TrackerNet<T>& net) {
  nn::ParameterList<float> params;
  for (const auto& [name, tensor] : net.parameters()) params.push_back({name, tensor.template cast<float>()});
  const nlohmann::json sidecar{{"model", nlohmann::json::parse(to_json(net.config()))}};
  save_checkpoint(path, params, sidecar.dump(2) + "\n");
}

template <typename T>
TrackerNet<T> load_model(const std::filesystem::path& path) {
  ModelConfig cfg;
  try {
    const auto sidecar = nlohmann::json::parse(load_checkpoint_sidecar(path));
    require(sidecar.is_object() && sidecar.contains("model"), ErrorKind::kInvalidArgument,
            sidecar_path(path).string() + ": missing model config");
    cfg = model_config_from_json(sidecar["model"].dump());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kInvalidArgument, sidecar_path(path).string() + ": " + e.what());
  }
  TrackerNet<T> net(cfg);
  auto params = net.parameters();
  assign_by_name(load_checkpoint_tensors(path), params);
  return net;
}

template class TrackerNet<float>;
template class TrackerNet<double>;
template void save_model(const std::filesystem::path&, const TrackerNet<float>&);
template void save_model(const std::filesystem::path&, const TrackerNet<double>&);
template TrackerNet<float> load_model(const std::filesystem::path&);
template TrackerNet<double> load_model(const std::filesystem::path&);

}  // namespace stk::model
