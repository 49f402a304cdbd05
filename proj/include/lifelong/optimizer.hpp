#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "lifelong/error.hpp"

namespace lifelong::optim {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-2;
};

// lr_init * (1 - step / total_steps); the schedule restarts every stage.
inline double learning_rate_at(long step, long total_steps, double lr_init) {
    require(total_steps >= 1, "total_steps must be >= 1");
    require(step >= 0 && step <= total_steps,
            "step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + "]");
    return lr_init * (1.0 - static_cast<double>(step) / static_cast<double>(total_steps));
}

// Adam with bias correction and decoupled weight decay:
//   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta
// Blocks with mask[i] == false are left untouched (no moments, no decay).
template <typename T>
class AdamW {
public:
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

    explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

    void step(std::span<Mat> params, std::span<const Mat> grads, std::span<const bool> mask,
              double lr, std::span<const std::string> names = {}) {
        require(params.size() == grads.size() && params.size() == mask.size(),
                "optimizer: params, grads and mask must align");
        if (m_.empty()) {
            for (const auto& p : params) {
                m_.push_back(Mat::Zero(p.rows(), p.cols()));
                v_.push_back(Mat::Zero(p.rows(), p.cols()));
            }
        }
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (!mask[i]) continue;
            if (!grads[i].allFinite())
                throw NumericalError("non-finite gradient in parameter block '" +
                                     (i < names.size() ? names[i] : std::to_string(i)) + "'");
        }
        ++t_;
        const T b1 = static_cast<T>(cfg_.beta1);
        const T b2 = static_cast<T>(cfg_.beta2);
        const T c1 = static_cast<T>(1.0 - std::pow(cfg_.beta1, static_cast<double>(t_)));
        const T c2 = static_cast<T>(1.0 - std::pow(cfg_.beta2, static_cast<double>(t_)));
        const T lr_t = static_cast<T>(lr);
        const T decay = static_cast<T>(lr * cfg_.weight_decay);
        const T eps = static_cast<T>(cfg_.eps);
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (!mask[i]) continue;
            m_[i] = b1 * m_[i] + (T(1) - b1) * grads[i];
            v_[i] = b2 * v_[i] + (T(1) - b2) * grads[i].cwiseProduct(grads[i]);
            auto m_hat = m_[i].array() / c1;
            auto v_hat = v_[i].array() / c2;
            params[i].array() -= lr_t * m_hat / (v_hat.sqrt() + eps) + decay * params[i].array();
        }
    }

    long steps_taken() const { return t_; }
    const std::vector<Mat>& first_moments() const { return m_; }
    const std::vector<Mat>& second_moments() const { return v_; }

private:
    AdamWConfig cfg_;
    long t_ = 0;
    std::vector<Mat> m_;
    std::vector<Mat> v_;
};

}  // namespace lifelong::optim
