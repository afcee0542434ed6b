#ifndef AMEGAN_LAYERS_HPP_
#define AMEGAN_LAYERS_HPP_

#include <memory>
#include <string>
#include <vector>

#include "conv.hpp"
#include "norm.hpp"
#include "random.hpp"

namespace amegan {

template<typename T>
struct NamedParameter {
	std::string name;
	Var<T> var;
};

template<typename T>
struct NamedBuffer {
	std::string name;
	Tensor<T>* tensor;
};

/// Flat, ordered view over a network's trainable tensors and its running
/// statistics. Order is construction order and is stable.
template<typename T>
class ParameterRegistry {
public:
	explicit ParameterRegistry(std::string prefix = {}) : prefix_(std::move(prefix)) { }

	Var<T> add(const std::string& name, Tensor<T> init) {
		auto v = leaf(std::move(init), true);
		params_.push_back({prefix_ + name, v});
		return v;
	}
	void add_buffer(const std::string& name, Tensor<T>* tensor) {
		buffers_.push_back({prefix_ + name, tensor});
	}

	const std::vector<NamedParameter<T>>& parameters() const { return params_; }
	const std::vector<NamedBuffer<T>>& buffers() const { return buffers_; }

	void set_trainable(bool trainable) {
		for (auto& p : params_)
			p.var->requires_grad = trainable;
	}
	void zero_grad() {
		for (auto& p : params_)
			p.var->zero_grad();
	}

private:
	std::string prefix_;
	std::vector<NamedParameter<T>> params_;
	std::vector<NamedBuffer<T>> buffers_;
};

/// N(0, std) weights; biases start at zero. Layers feeding a normalization
/// layer are built without a bias, which the normalization would cancel.
template<typename T>
Tensor<T> normal_tensor(Shape shape, double std, Rng& rng) {
	Tensor<T> t(shape);
	for (auto& v : t.storage())
		v = static_cast<T>(std * rng.normal());
	return t;
}

template<typename T>
struct Conv2d {
	Var<T> weight, bias;
	ConvGeometry geometry;

	Conv2d() = default;
	Conv2d(ParameterRegistry<T>& reg, const std::string& name, int cin, int cout, ConvGeometry g, double std, Rng& rng,
			bool with_bias = true) :
			weight(reg.add(name + ".weight", normal_tensor<T>(Shape{g.kernel, g.kernel, cin, cout}, std, rng))),
			bias(with_bias ? reg.add(name + ".bias", Tensor<T>(Shape{1, 1, 1, cout})) : nullptr),
			geometry(g) { }

	int out_channels() const { return weight->value.shape().c; }
	Var<T> operator()(const Var<T>& x) const { return conv2d(x, weight, bias, geometry); }
};

template<typename T>
struct ConvTranspose2d {
	Var<T> weight, bias;
	ConvGeometry geometry;

	ConvTranspose2d() = default;
	ConvTranspose2d(ParameterRegistry<T>& reg, const std::string& name, int cin, int cout, ConvGeometry g, double std,
			Rng& rng, bool with_bias = true) :
			weight(reg.add(name + ".weight", normal_tensor<T>(Shape{cin, g.kernel, g.kernel, cout}, std, rng))),
			bias(with_bias ? reg.add(name + ".bias", Tensor<T>(Shape{1, 1, 1, cout})) : nullptr),
			geometry(g) { }

	Var<T> operator()(const Var<T>& x) const { return conv_transpose2d(x, weight, bias, geometry); }
};

template<typename T>
struct Dense {
	Var<T> weight, bias;

	Dense() = default;
	Dense(ParameterRegistry<T>& reg, const std::string& name, int features, int outputs, double std, Rng& rng) :
			weight(reg.add(name + ".weight", normal_tensor<T>(Shape{1, 1, features, outputs}, std, rng))),
			bias(reg.add(name + ".bias", Tensor<T>(Shape{1, 1, 1, outputs}))) { }

	Var<T> operator()(const Var<T>& x) const { return dense(x, weight, bias); }
};

template<typename T>
struct BatchNorm {
	Var<T> gamma, beta;
	// Heap-allocated so buffer pointers in the registry survive moves.
	std::unique_ptr<RunningStats<T>> stats;

	BatchNorm() = default;
	BatchNorm(ParameterRegistry<T>& reg, const std::string& name, int channels) :
			gamma(reg.add(name + ".gamma", Tensor<T>(Shape{1, 1, 1, channels}, T(1)))),
			beta(reg.add(name + ".beta", Tensor<T>(Shape{1, 1, 1, channels}))),
			stats(std::make_unique<RunningStats<T>>(channels)) {
		reg.add_buffer(name + ".running_mean", &stats->mean);
		reg.add_buffer(name + ".running_var", &stats->var);
	}

	Var<T> operator()(const Var<T>& x, Mode mode) const { return batch_norm(x, gamma, beta, *stats, mode); }
};

template<typename T>
struct InstanceNorm {
	Var<T> gamma, beta;

	InstanceNorm() = default;
	InstanceNorm(ParameterRegistry<T>& reg, const std::string& name, int channels) :
			gamma(reg.add(name + ".gamma", Tensor<T>(Shape{1, 1, 1, channels}, T(1)))),
			beta(reg.add(name + ".beta", Tensor<T>(Shape{1, 1, 1, channels}))) { }

	Var<T> operator()(const Var<T>& x) const { return instance_norm(x, gamma, beta); }
};

} // namespace amegan

#endif // AMEGAN_LAYERS_HPP_
