#ifndef AMEGAN_ADAM_HPP_
#define AMEGAN_ADAM_HPP_

#include <cmath>
#include <string>
#include <vector>

#include "layers.hpp"

namespace amegan {

struct AdamConfig {
	double learning_rate = 2e-4;
	double beta1 = 0.5;
	double beta2 = 0.999;
	double epsilon = 1e-8;
};

/// Adam over a fixed, ordered set of named parameters.
template<typename T>
class Adam {
public:
	struct Slot {
		std::string name;
		Var<T> param;
		Tensor<T> m;
		Tensor<T> v;
	};

	Adam() = default;
	Adam(const std::vector<ParameterRegistry<T>*>& registries, AdamConfig cfg) : cfg_(cfg) {
		for (auto* r : registries)
			for (const auto& p : r->parameters())
				slots_.push_back({p.name, p.var, Tensor<T>(p.var->value.shape()), Tensor<T>(p.var->value.shape())});
	}

	const AdamConfig& config() const { return cfg_; }
	long steps() const { return t_; }
	void set_steps(long t) { t_ = t; }
	std::vector<Slot>& slots() { return slots_; }
	const std::vector<Slot>& slots() const { return slots_; }

	void zero_grad() {
		for (auto& s : slots_)
			s.param->zero_grad();
	}

	/// One update from the accumulated gradients. Parameters without a
	/// gradient buffer are treated as having zero gradient.
	void step() {
		++t_;
		const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
		const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
		const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
		const T lr = static_cast<T>(cfg_.learning_rate / c1);
		const T inv_c2 = static_cast<T>(1.0 / c2);
		const T eps = static_cast<T>(cfg_.epsilon);
		for (auto& s : slots_) {
			auto& value = s.param->value;
			const bool has_grad = s.param->grad.size() == value.size();
			for (std::size_t i = 0; i < value.size(); ++i) {
				const T g = has_grad ? s.param->grad[i] : T(0);
				s.m[i] = b1 * s.m[i] + (T(1) - b1) * g;
				s.v[i] = b2 * s.v[i] + (T(1) - b2) * g * g;
				value[i] -= lr * s.m[i] / (std::sqrt(s.v[i] * inv_c2) + eps);
			}
		}
	}

private:
	AdamConfig cfg_;
	std::vector<Slot> slots_;
	long t_ = 0;
};

} // namespace amegan

#endif // AMEGAN_ADAM_HPP_
