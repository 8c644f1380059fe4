#include "tvdb/optim.hpp"

#include "tvdb/errors.hpp"

#include <cmath>

namespace tvdb {

void AdamW::step(const std::vector<Mat*>& params, const std::vector<const Mat*>& grads) {
  if (params.size() != grads.size()) throw ConfigError("AdamW: params/grads size mismatch");
  if (m_.empty()) {
    for (const Mat* p : params) {
      m_.push_back(Mat::Zero(p->rows(), p->cols()));
      v_.push_back(Mat::Zero(p->rows(), p->cols()));
    }
  }
  if (m_.size() != params.size()) throw ConfigError("AdamW: parameter set changed between steps");
  ++step_;
  const auto& o = options_;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Mat& p = *params[i];
    const Mat& g = *grads[i];
    m_[i] = o.beta1 * m_[i] + (1.0 - o.beta1) * g;
    v_[i] = o.beta2 * v_[i] + (1.0 - o.beta2) * g.cwiseAbs2();
    if (o.weight_decay != 0.0) p *= (1.0 - o.learning_rate * o.weight_decay);
    p.array() -= o.learning_rate * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + o.epsilon);
  }
}

}  // namespace tvdb
