#include "stk/training/optimizer.hpp"

#include <cmath>
#include <map>

#include "stk/core/error.hpp"

namespace stk::training {

template <typename T>
Adam<T>::Adam(nn::ParameterList<T> params, const AdamConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
  require(cfg.learning_rate > 0 && cfg.beta1 >= 0 && cfg.beta1 < 1 && cfg.beta2 >= 0 && cfg.beta2 < 1 &&
              cfg.epsilon > 0,
          ErrorKind::kInvalidArgument, "invalid optimizer settings");
  for (const auto& p : params_) {
    m_.push_back(BasicTensor<T>::zeros(p.tensor.shape()));
    v_.push_back(BasicTensor<T>::zeros(p.tensor.shape()));
  }
}

template <typename T>
void Adam<T>::step() {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(cfg_.beta1, t);
  const double c2 = 1.0 - std::pow(cfg_.beta2, t);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& param = params_[k].tensor;
    if (!param.has_grad()) continue;
    const auto g = param.grad();
    auto w = param.mutable_data();
    auto m = m_[k].mutable_data();
    auto v = v_[k].mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      m[i] = static_cast<T>(cfg_.beta1 * static_cast<double>(m[i]) + (1 - cfg_.beta1) * gi);
      v[i] = static_cast<T>(cfg_.beta2 * static_cast<double>(v[i]) + (1 - cfg_.beta2) * gi * gi);
      const double mhat = static_cast<double>(m[i]) / c1;
      const double vhat = static_cast<double>(v[i]) / c2;
      w[i] = static_cast<T>(static_cast<double>(w[i]) - cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon));
    }
    param.zero_grad();
  }
}

template <typename T>
nn::ParameterList<T> Adam<T>::state() const {
  nn::ParameterList<T> out;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    out.push_back({"adam.m." + params_[k].name, m_[k]});
    out.push_back({"adam.v." + params_[k].name, v_[k]});
  }
  out.push_back({"adam.step", BasicTensor<T>({1}, {static_cast<T>(steps_)})});
  return out;
}

template <typename T>
void Adam<T>::load_state(const nn::ParameterList<float>& entries) {
  std::map<std::string, const BasicTensor<float>*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e.tensor;
  auto restore = [&](const std::string& name, BasicTensor<T>& dst) {
    const auto it = by_name.find(name);
    require(it != by_name.end(), ErrorKind::kInvalidArgument, "checkpoint lacks optimizer entry " + name);
    require(it->second->shape() == dst.shape(), ErrorKind::kShapeMismatch, "optimizer entry " + name + " has shape " +
                                                                                shape_str(it->second->shape()));
    auto out = dst.mutable_data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(it->second->data()[i]);
  };
  for (std::size_t k = 0; k < params_.size(); ++k) {
    restore("adam.m." + params_[k].name, m_[k]);
    restore("adam.v." + params_[k].name, v_[k]);
  }
  auto step = BasicTensor<T>::zeros({1});
  restore("adam.step", step);
  steps_ = static_cast<std::uint64_t>(step.data()[0]);
}

template class Adam<float>;
template class Adam<double>;

}  // namespace stk::training
