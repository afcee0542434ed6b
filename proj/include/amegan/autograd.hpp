#ifndef AMEGAN_AUTOGRAD_HPP_
#define AMEGAN_AUTOGRAD_HPP_

#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace amegan {

template<typename T>
struct Node;

/// A value in the computation graph. Parameters are long-lived leaf nodes;
/// everything else is rebuilt on every forward pass.
template<typename T>
using Var = std::shared_ptr<Node<T>>;

template<typename T>
struct Node {
	Tensor<T> value;
	Tensor<T> grad;
	bool requires_grad = false;
	std::vector<Var<T>> parents;
	/// Accumulates this node's grad into the parents' grads.
	std::function<void(Node&)> backward;

	Tensor<T>& grad_buffer() {
		if (grad.shape() != value.shape())
			grad = Tensor<T>(value.shape());
		return grad;
	}
	void zero_grad() {
		if (!grad.empty())
			grad.fill(T(0));
	}
};

namespace detail {
inline bool& grad_disabled() {
	thread_local bool disabled = false;
	return disabled;
}
} // namespace detail

/// While alive on the current thread, new nodes record no history.
class NoGradGuard {
public:
	NoGradGuard() : previous_(detail::grad_disabled()) { detail::grad_disabled() = true; }
	~NoGradGuard() { detail::grad_disabled() = previous_; }
	NoGradGuard(const NoGradGuard&) = delete;
	NoGradGuard& operator=(const NoGradGuard&) = delete;
private:
	bool previous_;
};

template<typename T>
Var<T> constant(Tensor<T> value) {
	auto node = std::make_shared<Node<T>>();
	node->value = std::move(value);
	return node;
}

template<typename T>
Var<T> leaf(Tensor<T> value, bool requires_grad = true) {
	auto node = std::make_shared<Node<T>>();
	node->value = std::move(value);
	node->requires_grad = requires_grad;
	return node;
}

/// Leaf holding a copy of v's value, cut off from v's history.
template<typename T>
Var<T> detach(const Var<T>& v) {
	return constant(v->value);
}

/// Builds an op result. The backward closure is attached only when some
/// parent needs a gradient and recording is enabled.
template<typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> backward) {
	auto node = std::make_shared<Node<T>>();
	node->value = std::move(value);
	if (detail::grad_disabled())
		return node;
	bool any = false;
	for (const auto& p : parents)
		any = any || p->requires_grad;
	if (any) {
		node->requires_grad = true;
		node->parents = std::move(parents);
		node->backward = std::move(backward);
	}
	return node;
}

/// Reverse sweep from a scalar root. Gradients accumulate into every reachable
/// node that requires one; callers zero parameter grads between sweeps.
template<typename T>
void backward(const Var<T>& root) {
	require(root->value.size() == 1, "backward() needs a scalar root");
	if (!root->requires_grad)
		return;
	std::vector<Node<T>*> order;
	std::unordered_set<Node<T>*> seen;
	std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.get(), 0}};
	seen.insert(root.get());
	while (!stack.empty()) {
		auto& [node, next] = stack.back();
		if (next < node->parents.size()) {
			Node<T>* parent = node->parents[next++].get();
			if (parent->requires_grad && seen.insert(parent).second)
				stack.emplace_back(parent, 0);
		} else {
			order.push_back(node);
			stack.pop_back();
		}
	}
	root->grad_buffer().fill(T(1));
	for (auto it = order.rbegin(); it != order.rend(); ++it) {
		Node<T>* node = *it;
		if (node->backward && !node->grad.empty())
			node->backward(*node);
	}
}

// Elementwise ops ------------------------------------------------------------

namespace detail {

template<typename T, typename Forward, typename Derivative>
Var<T> unary(const Var<T>& x, Forward f, Derivative df) {
	Tensor<T> out(x->value.shape());
	const auto& in = x->value;
	for (std::size_t i = 0; i < in.size(); ++i)
		out[i] = f(in[i]);
	return make_result<T>(std::move(out), {x}, [df](Node<T>& self) {
		auto& parent = *self.parents[0];
		auto& g = parent.grad_buffer();
		for (std::size_t i = 0; i < g.size(); ++i)
			g[i] += self.grad[i] * df(parent.value[i], self.value[i]);
	});
}

} // namespace detail

template<typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
	return detail::unary<T>(x, [slope](T v) { return v > T(0) ? v : slope * v; },
			[slope](T in, T) { return in > T(0) ? T(1) : slope; });
}

template<typename T>
Var<T> relu(const Var<T>& x) {
	return detail::unary<T>(x, [](T v) { return v > T(0) ? v : T(0); },
			[](T in, T) { return in > T(0) ? T(1) : T(0); });
}

template<typename T>
Var<T> tanh(const Var<T>& x) {
	return detail::unary<T>(x, [](T v) { return std::tanh(v); }, [](T, T out) { return T(1) - out * out; });
}

template<typename T>
Var<T> sigmoid(const Var<T>& x) {
	return detail::unary<T>(x, [](T v) {
		return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
	}, [](T, T out) { return out * (T(1) - out); });
}

/// softplus(x) + floor, strictly positive for every finite x.
template<typename T>
Var<T> softplus(const Var<T>& x, T floor) {
	return detail::unary<T>(x, [floor](T v) {
		return (v > T(20) ? v : std::log1p(std::exp(v))) + floor;
	}, [](T in, T) {
		return in >= T(0) ? T(1) / (T(1) + std::exp(-in)) : std::exp(in) / (T(1) + std::exp(in));
	});
}

template<typename T>
Var<T> scale(const Var<T>& x, T factor) {
	return detail::unary<T>(x, [factor](T v) { return factor * v; }, [factor](T, T) { return factor; });
}

template<typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
	require(a->value.shape() == b->value.shape(),
			"add: shape " + a->value.shape().to_string() + " vs " + b->value.shape().to_string());
	Tensor<T> out(a->value.shape());
	for (std::size_t i = 0; i < out.size(); ++i)
		out[i] = a->value[i] + b->value[i];
	return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
		for (auto& p : self.parents) {
			if (!p->requires_grad)
				continue;
			auto& g = p->grad_buffer();
			for (std::size_t i = 0; i < g.size(); ++i)
				g[i] += self.grad[i];
		}
	});
}

template<typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
	require(a->value.shape() == b->value.shape(),
			"mul: shape " + a->value.shape().to_string() + " vs " + b->value.shape().to_string());
	Tensor<T> out(a->value.shape());
	for (std::size_t i = 0; i < out.size(); ++i)
		out[i] = a->value[i] * b->value[i];
	return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
		auto& pa = *self.parents[0];
		auto& pb = *self.parents[1];
		if (pa.requires_grad) {
			auto& g = pa.grad_buffer();
			for (std::size_t i = 0; i < g.size(); ++i)
				g[i] += self.grad[i] * pb.value[i];
		}
		if (pb.requires_grad) {
			auto& g = pb.grad_buffer();
			for (std::size_t i = 0; i < g.size(); ++i)
				g[i] += self.grad[i] * pa.value[i];
		}
	});
}

// Structural ops -------------------------------------------------------------

template<typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
	const Shape sa = a->value.shape();
	const Shape sb = b->value.shape();
	require(sa.n == sb.n && sa.h == sb.h && sa.w == sb.w,
			"concat_channels: " + sa.to_string() + " vs " + sb.to_string());
	Tensor<T> out(Shape{sa.n, sa.h, sa.w, sa.c + sb.c});
	const std::size_t pixels = static_cast<std::size_t>(sa.n) * sa.h * sa.w;
	for (std::size_t p = 0; p < pixels; ++p) {
		std::copy_n(a->value.data() + p * sa.c, sa.c, out.data() + p * (sa.c + sb.c));
		std::copy_n(b->value.data() + p * sb.c, sb.c, out.data() + p * (sa.c + sb.c) + sa.c);
	}
	return make_result<T>(std::move(out), {a, b}, [sa, sb, pixels](Node<T>& self) {
		const int c = sa.c + sb.c;
		if (self.parents[0]->requires_grad) {
			auto& g = self.parents[0]->grad_buffer();
			for (std::size_t p = 0; p < pixels; ++p)
				for (int k = 0; k < sa.c; ++k)
					g[p * sa.c + k] += self.grad[p * c + k];
		}
		if (self.parents[1]->requires_grad) {
			auto& g = self.parents[1]->grad_buffer();
			for (std::size_t p = 0; p < pixels; ++p)
				for (int k = 0; k < sb.c; ++k)
					g[p * sb.c + k] += self.grad[p * c + sa.c + k];
		}
	});
}

/// Channels [begin, begin + count).
template<typename T>
Var<T> slice_channels(const Var<T>& x, int begin, int count) {
	const Shape s = x->value.shape();
	require(begin >= 0 && count > 0 && begin + count <= s.c, "slice_channels out of range");
	Tensor<T> out(Shape{s.n, s.h, s.w, count});
	const std::size_t pixels = static_cast<std::size_t>(s.n) * s.h * s.w;
	for (std::size_t p = 0; p < pixels; ++p)
		std::copy_n(x->value.data() + p * s.c + begin, count, out.data() + p * count);
	return make_result<T>(std::move(out), {x}, [s, begin, count, pixels](Node<T>& self) {
		auto& g = self.parents[0]->grad_buffer();
		for (std::size_t p = 0; p < pixels; ++p)
			for (int k = 0; k < count; ++k)
				g[p * s.c + begin + k] += self.grad[p * count + k];
	});
}

template<typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
	return make_result<T>(x->value.reshaped(shape), {x}, [](Node<T>& self) {
		auto& g = self.parents[0]->grad_buffer();
		for (std::size_t i = 0; i < g.size(); ++i)
			g[i] += self.grad[i];
	});
}

/// (N,H,W,C) -> (N,1,1,H*W*C).
template<typename T>
Var<T> flatten(const Var<T>& x) {
	const Shape s = x->value.shape();
	return reshape(x, Shape{s.n, 1, 1, s.h * s.w * s.c});
}

/// Sum of all elements into a (1,1,1,1) scalar.
template<typename T>
Var<T> sum(const Var<T>& x) {
	double total = 0;
	for (T v : x->value.storage())
		total += v;
	return make_result<T>(Tensor<T>(Shape{1, 1, 1, 1}, static_cast<T>(total)), {x}, [](Node<T>& self) {
		auto& g = self.parents[0]->grad_buffer();
		const T upstream = self.grad[0];
		for (std::size_t i = 0; i < g.size(); ++i)
			g[i] += upstream;
	});
}

/// Weighted sum of scalar nodes.
template<typename T>
Var<T> weighted_sum(const std::vector<Var<T>>& terms, const std::vector<T>& weights) {
	require(terms.size() == weights.size() && !terms.empty(), "weighted_sum arity");
	double total = 0;
	for (std::size_t i = 0; i < terms.size(); ++i) {
		require(terms[i]->value.size() == 1, "weighted_sum expects scalars");
		total += static_cast<double>(weights[i]) * terms[i]->value[0];
	}
	return make_result<T>(Tensor<T>(Shape{1, 1, 1, 1}, static_cast<T>(total)), terms, [weights](Node<T>& self) {
		for (std::size_t i = 0; i < self.parents.size(); ++i)
			if (self.parents[i]->requires_grad)
				self.parents[i]->grad_buffer()[0] += weights[i] * self.grad[0];
	});
}

} // namespace amegan

#endif // AMEGAN_AUTOGRAD_HPP_
