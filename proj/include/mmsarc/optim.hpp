#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "mmsarc/tensor.hpp"

namespace mmsarc {

/// Scales every gradient in place so the joint L2 norm does not exceed
/// max_norm. Returns the pre-clip norm. Parameters without an allocated
/// gradient count as all-zero. Applying twice changes nothing: after one
/// rescale the norm equals max_norm and the trigger condition no longer fires.
inline double clip_global_norm(const std::vector<Tensor>& params, double max_norm) {
    if (max_norm <= 0.0) throw ConfigError("clip_global_norm: max_norm must be positive");
    double sq = 0.0;
    for (const auto& p : params) {
        if (!p.has_grad()) continue;
        for (double g : p.impl()->grad) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericError("clip_global_norm: non-finite gradient norm");
    if (norm > max_norm * (1.0 + 1e-12)) {
        const double scale = max_norm / norm;
        for (const auto& p : params) {
            if (!p.has_grad()) continue;
            for (double& g : p.impl()->grad) g *= scale;
        }
    }
    return norm;
}

/// Adam with decoupled weight decay, applied per parameter group so different
/// sub-networks can run at different learning rates.
class AdamGroups {
public:
    struct Group {
        std::string name;
        std::vector<Tensor> params;
        double lr;
        double weight_decay;
    };

    AdamGroups(std::vector<Group> groups, double beta1 = 0.9, double beta2 = 0.999,
               double eps = 1e-8)
        : groups_(std::move(groups)), beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (auto& g : groups_) {
            State st;
            for (auto& p : g.params) {
                st.m.emplace_back(p.size(), 0.0);
                st.v.emplace_back(p.size(), 0.0);
            }
            states_.push_back(std::move(st));
        }
    }

    long step_count() const { return t_; }

    const std::vector<Group>& groups() const { return groups_; }

    std::vector<Tensor> all_params() const {
        std::vector<Tensor> out;
        for (const auto& g : groups_)
            for (const auto& p : g.params) out.push_back(p);
        return out;
    }

    /// One update from the gradients currently stored on the parameters.
    /// Missing gradients are treated as zero (moments still decay). Both the
    /// Adam delta and the decay term read the pre-step parameter value.
    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
            auto& g = groups_[gi];
            auto& st = states_[gi];
            for (std::size_t pi = 0; pi < g.params.size(); ++pi) {
                auto& p = g.params[pi];
                auto& vals = p.impl()->values;
                const bool has = p.has_grad();
                const std::vector<double>& grad = has ? p.impl()->grad : zero_of(vals.size());
                auto& m = st.m[pi];
                auto& v = st.v[pi];
                for (std::size_t i = 0; i < vals.size(); ++i) {
                    m[i] = beta1_ * m[i] + (1.0 - beta1_) * grad[i];
                    v[i] = beta2_ * v[i] + (1.0 - beta2_) * grad[i] * grad[i];
                    const double mhat = m[i] / bc1;
                    const double vhat = v[i] / bc2;
                    const double pre = vals[i];
                    vals[i] = pre - g.lr * (mhat / (std::sqrt(vhat) + eps_) + g.weight_decay * pre);
                }
            }
        }
    }

    void zero_grad() {
        for (auto& g : groups_)
            for (auto& p : g.params) p.zero_grad();
    }

private:
    struct State {
        std::vector<std::vector<double>> m, v;
    };

    static const std::vector<double>& zero_of(std::size_t n) {
        thread_local std::vector<double> z;
        if (z.size() < n) z.assign(n, 0.0);
        return z;
    }

    std::vector<Group> groups_;
    std::vector<State> states_;
    double beta1_, beta2_, eps_;
    long t_ = 0;
};

}  // namespace mmsarc
