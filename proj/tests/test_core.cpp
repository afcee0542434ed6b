#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <functional>
#include <set>

#include "support.hpp"

using namespace amegan;
using amegan::testing::random_tensor;

namespace {

/// Max relative error between backprop and central differences for a scalar
/// function of one leaf.
double op_gradient_error(Tensor<double> input, const std::function<Var<double>(const Var<double>&)>& f) {
	auto x = leaf(input);
	backward(f(x));
	double worst = 0;
	for (std::size_t i = 0; i < input.size(); ++i) {
		const double h = 1e-6;
		auto plus = input, minus = input;
		plus[i] += h;
		minus[i] -= h;
		const double numeric = (f(constant(plus))->value[0] - f(constant(minus))->value[0]) / (2 * h);
		const double analytic = x->grad[i];
		worst = std::max(worst, std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-8}));
	}
	return worst;
}

/// Weighted sum of all elements with fixed pseudo-random weights, so every
/// output element reaches the scalar with a distinct coefficient.
Var<double> project(const Var<double>& y) {
	Rng rng(99);
	auto w = constant(random_tensor<double>(y->value.shape(), rng));
	return sum(mul(y, w));
}

/// Direct-loop convolution oracle.
Tensor<double> conv_oracle(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b, ConvGeometry g) {
	const Shape s = x.shape();
	const int cout = w.shape().c;
	const int oh = (s.h + 2 * g.pad - g.kernel) / g.stride + 1;
	const int ow = (s.w + 2 * g.pad - g.kernel) / g.stride + 1;
	Tensor<double> out(Shape{s.n, oh, ow, cout});
	for (int n = 0; n < s.n; ++n)
		for (int oy = 0; oy < oh; ++oy)
			for (int ox = 0; ox < ow; ++ox)
				for (int co = 0; co < cout; ++co) {
					double acc = b[co];
					for (int ky = 0; ky < g.kernel; ++ky)
						for (int kx = 0; kx < g.kernel; ++kx) {
							const int iy = oy * g.stride - g.pad + ky, ix = ox * g.stride - g.pad + kx;
							if (iy < 0 || ix < 0 || iy >= s.h || ix >= s.w)
								continue;
							for (int ci = 0; ci < s.c; ++ci)
								acc += x.at(n, iy, ix, ci) * w.at(ky, kx, ci, co);
						}
					out.at(n, oy, ox, co) = acc;
				}
	return out;
}

/// Scatter definition of the transposed convolution.
Tensor<double> deconv_oracle(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b,
		ConvGeometry g) {
	const Shape s = x.shape();
	const int cout = w.shape().c;
	const int oh = (s.h - 1) * g.stride - 2 * g.pad + g.kernel;
	const int ow = (s.w - 1) * g.stride - 2 * g.pad + g.kernel;
	Tensor<double> out(Shape{s.n, oh, ow, cout});
	for (int n = 0; n < s.n; ++n)
		for (int y = 0; y < oh; ++y)
			for (int x0 = 0; x0 < ow; ++x0)
				for (int co = 0; co < cout; ++co)
					out.at(n, y, x0, co) = b[co];
	for (int n = 0; n < s.n; ++n)
		for (int iy = 0; iy < s.h; ++iy)
			for (int ix = 0; ix < s.w; ++ix)
				for (int ky = 0; ky < g.kernel; ++ky)
					for (int kx = 0; kx < g.kernel; ++kx) {
						const int y = iy * g.stride - g.pad + ky, xx = ix * g.stride - g.pad + kx;
						if (y < 0 || xx < 0 || y >= oh || xx >= ow)
							continue;
						for (int ci = 0; ci < s.c; ++ci)
							for (int co = 0; co < cout; ++co)
								out.at(n, y, xx, co) += x.at(n, iy, ix, ci) * w.at(ci, ky, kx, co);
					}
	return out;
}

} // namespace

TEST(Tensor, IndexingIsRowMajorNHWC) {
	Tensor<float> t(Shape{2, 3, 4, 5});
	EXPECT_EQ(t.index(1, 2, 3, 4), t.size() - 1);
	EXPECT_EQ(t.index(0, 0, 1, 0), 5u);
	EXPECT_EQ(t.index(0, 1, 0, 0), 20u);
}

TEST(Tensor, SliceAndConcatRoundTrip) {
	Rng rng(1);
	const auto t = random_tensor<float>(Shape{4, 2, 2, 3}, rng);
	std::vector<Tensor<float>> parts{t.slice_batch(0, 1), t.slice_batch(1, 3)};
	EXPECT_EQ(concat_batch<float>(parts), t);
}

TEST(Tensor, StorageIsCacheLineAligned) {
	for (int n = 1; n < 40; n += 3) {
		const Tensor<float> t(Shape{n, 1, 1, 3});
		EXPECT_EQ(reinterpret_cast<std::uintptr_t>(t.data()) % 64, 0u);
		EXPECT_EQ(reinterpret_cast<std::uintptr_t>(t.slice_batch(0, 1).data()) % 64, 0u);
		EXPECT_EQ(reinterpret_cast<std::uintptr_t>(t.cast<double>().data()) % 64, 0u);
	}
}

TEST(Rng, SameSeedSameStream) {
	Rng a(42), b(42), c(43);
	for (int i = 0; i < 100; ++i)
		EXPECT_EQ(a.bits(), b.bits());
	EXPECT_NE(Rng(42).bits(), c.bits());
}

TEST(Rng, SerializeResumesMidStream) {
	Rng a(5);
	a.normal(); // leaves a cached spare deviate
	Rng b = Rng::deserialize(a.serialize());
	EXPECT_EQ(a, b);
	for (int i = 0; i < 10; ++i)
		EXPECT_EQ(a.normal(), b.normal());
}

TEST(Rng, BelowAndPermutationStayInRange) {
	Rng rng(3);
	for (int i = 0; i < 1000; ++i)
		EXPECT_LT(rng.below(7), 7u);
	auto p = rng.permutation(20);
	std::set<int> seen(p.begin(), p.end());
	EXPECT_EQ(seen.size(), 20u);
	EXPECT_EQ(*seen.begin(), 0);
	EXPECT_EQ(*seen.rbegin(), 19);
}

TEST(Rng, NormalMoments) {
	Rng rng(11);
	double m = 0, v = 0;
	const int n = 200000;
	for (int i = 0; i < n; ++i) {
		const double x = rng.normal();
		m += x;
		v += x * x;
	}
	m /= n;
	v = v / n - m * m;
	EXPECT_NEAR(m, 0.0, 0.01);
	EXPECT_NEAR(v, 1.0, 0.02);
}

TEST(Autograd, ElementwiseOpsMatchFiniteDifferences) {
	Rng rng(2);
	const auto x = random_tensor<double>(Shape{2, 3, 3, 2}, rng, -2.0, 2.0);
	EXPECT_LT(op_gradient_error(x, [](const Var<double>& v) { return project(leaky_relu(v, 0.2)); }), 1e-6);
	EXPECT_LT(op_gradient_error(x, [](const Var<double>& v) { return project(tanh(v)); }), 1e-6);
	EXPECT_LT(op_gradient_error(x, [](const Var<double>& v) { return project(sigmoid(v)); }), 1e-6);
	EXPECT_LT(op_gradient_error(x, [](const Var<double>& v) { return project(softplus(v, 1e-4)); }), 1e-6);
	EXPECT_LT(op_gradient_error(x, [](const Var<double>& v) { return project(mul(v, tanh(v))); }), 1e-6);
	EXPECT_LT(op_gradient_error(x, [](const Var<double>& v) {
		return project(concat_channels(slice_channels(v, 1, 1), scale(v, 3.0)));
	}), 1e-6);
}

TEST(Autograd, DetachCutsHistory) {
	auto x = leaf(Tensor<double>(Shape{1, 1, 1, 2}, 1.0));
	auto y = add(detach(tanh(x)), x);
	backward(sum(y));
	EXPECT_DOUBLE_EQ(x->grad[0], 1.0);
}

TEST(Autograd, NoGradGuardRecordsNothing) {
	auto x = leaf(Tensor<double>(Shape{1, 1, 1, 2}, 1.0));
	NoGradGuard guard;
	auto y = tanh(x);
	EXPECT_FALSE(y->requires_grad);
	EXPECT_TRUE(y->parents.empty());
}

TEST(Conv, ForwardMatchesDirectLoops) {
	Rng rng(4);
	for (ConvGeometry g : {ConvGeometry{4, 2, 1}, ConvGeometry{3, 1, 1}, ConvGeometry{1, 1, 0}}) {
		const auto x = random_tensor<double>(Shape{2, 8, 8, 3}, rng);
		const auto w = random_tensor<double>(Shape{g.kernel, g.kernel, 3, 5}, rng);
		const auto b = random_tensor<double>(Shape{1, 1, 1, 5}, rng);
		const auto y = conv2d(constant(x), constant(w), constant(b), g);
		EXPECT_LT(max_abs_diff(y->value, conv_oracle(x, w, b, g)), 1e-12);
	}
}

TEST(Conv, TransposedForwardMatchesScatterDefinition) {
	Rng rng(5);
	for (ConvGeometry g : {ConvGeometry{4, 2, 1}, ConvGeometry{3, 1, 1}}) {
		const auto x = random_tensor<double>(Shape{2, 4, 4, 3}, rng);
		const auto w = random_tensor<double>(Shape{3, g.kernel, g.kernel, 5}, rng);
		const auto b = random_tensor<double>(Shape{1, 1, 1, 5}, rng);
		const auto y = conv_transpose2d(constant(x), constant(w), constant(b), g);
		EXPECT_LT(max_abs_diff(y->value, deconv_oracle(x, w, b, g)), 1e-12);
	}
}

TEST(Conv, TransposedIsAdjointOfConvolution) {
	// <conv(x), y> == <x, conv_transpose(y)> with the weight axes swapped.
	Rng rng(6);
	const ConvGeometry g{4, 2, 1};
	const auto x = random_tensor<double>(Shape{1, 8, 8, 2}, rng);
	const auto y = random_tensor<double>(Shape{1, 4, 4, 3}, rng);
	const auto w = random_tensor<double>(Shape{4, 4, 2, 3}, rng);
	Tensor<double> wt(Shape{3, 4, 4, 2});
	for (int ky = 0; ky < 4; ++ky)
		for (int kx = 0; kx < 4; ++kx)
			for (int ci = 0; ci < 2; ++ci)
				for (int co = 0; co < 3; ++co)
					wt.at(co, ky, kx, ci) = w.at(ky, kx, ci, co);
	const auto cx = conv2d<double>(constant(x), constant(w), nullptr, g)->value;
	const auto ty = conv_transpose2d<double>(constant(y), constant(wt), nullptr, g)->value;
	double lhs = 0, rhs = 0;
	for (std::size_t i = 0; i < cx.size(); ++i)
		lhs += cx[i] * y[i];
	for (std::size_t i = 0; i < ty.size(); ++i)
		rhs += ty[i] * x[i];
	EXPECT_NEAR(lhs, rhs, 1e-10);
}

TEST(Conv, GradientsMatchFiniteDifferences) {
	Rng rng(7);
	const auto x = random_tensor<double>(Shape{2, 6, 6, 2}, rng);
	const auto w = random_tensor<double>(Shape{4, 4, 2, 3}, rng);
	const auto wt = random_tensor<double>(Shape{2, 4, 4, 3}, rng);
	const auto b = random_tensor<double>(Shape{1, 1, 1, 3}, rng);
	const ConvGeometry g{4, 2, 1};
	EXPECT_LT(op_gradient_error(x, [&](const Var<double>& v) { return project(conv2d(v, constant(w), constant(b), g)); }),
			1e-6);
	EXPECT_LT(op_gradient_error(w, [&](const Var<double>& v) { return project(conv2d(constant(x), v, constant(b), g)); }),
			1e-6);
	EXPECT_LT(op_gradient_error(b, [&](const Var<double>& v) { return project(conv2d(constant(x), constant(w), v, g)); }),
			1e-6);
	EXPECT_LT(op_gradient_error(x, [&](const Var<double>& v) {
		return project(conv_transpose2d(v, constant(wt), constant(b), g));
	}), 1e-6);
	EXPECT_LT(op_gradient_error(wt, [&](const Var<double>& v) {
		return project(conv_transpose2d(constant(x), v, constant(b), g));
	}), 1e-6);
	EXPECT_LT(op_gradient_error(b, [&](const Var<double>& v) {
		return project(conv_transpose2d(constant(x), constant(wt), v, g));
	}), 1e-6);
}

TEST(Norm, BatchNormTrainMatchesFormulaAndUpdatesRunningStats) {
	Rng rng(8);
	const auto x = random_tensor<double>(Shape{4, 3, 3, 2}, rng, -3.0, 5.0);
	const auto gamma = random_tensor<double>(Shape{1, 1, 1, 2}, rng);
	const auto beta = random_tensor<double>(Shape{1, 1, 1, 2}, rng);
	RunningStats<double> stats(2);
	const auto y = batch_norm(constant(x), constant(gamma), constant(beta), stats, Mode::train)->value;
	const double count = 4 * 3 * 3;
	for (int c = 0; c < 2; ++c) {
		double m = 0, v = 0;
		for (std::size_t i = c; i < x.size(); i += 2)
			m += x[i];
		m /= count;
		for (std::size_t i = c; i < x.size(); i += 2)
			v += (x[i] - m) * (x[i] - m);
		v /= count;
		for (std::size_t i = c; i < x.size(); i += 2)
			EXPECT_NEAR(y[i], gamma[c] * (x[i] - m) / std::sqrt(v + 1e-5) + beta[c], 1e-12);
		EXPECT_NEAR(stats.mean[c], 0.1 * m, 1e-12);
		EXPECT_NEAR(stats.var[c], 0.9 + 0.1 * v * count / (count - 1), 1e-12);
	}
}

TEST(Norm, BatchNormInferIsPerSampleIndependent) {
	Rng rng(9);
	const auto x = random_tensor<double>(Shape{3, 2, 2, 2}, rng);
	RunningStats<double> stats(2);
	stats.mean[0] = 0.3;
	stats.var[1] = 2.0;
	const auto g = constant(Tensor<double>(Shape{1, 1, 1, 2}, 1.5));
	const auto b = constant(Tensor<double>(Shape{1, 1, 1, 2}, -0.5));
	const auto all = batch_norm(constant(x), g, b, stats, Mode::infer)->value;
	const auto one = batch_norm(constant(x.slice_batch(1, 1)), g, b, stats, Mode::infer)->value;
	EXPECT_EQ(all.slice_batch(1, 1), one);
}

TEST(Norm, NormalizationGradientsMatchFiniteDifferences) {
	Rng rng(10);
	const auto x = random_tensor<double>(Shape{3, 4, 4, 2}, rng);
	const auto gamma = random_tensor<double>(Shape{1, 1, 1, 2}, rng);
	const auto beta = random_tensor<double>(Shape{1, 1, 1, 2}, rng);
	EXPECT_LT(op_gradient_error(x, [&](const Var<double>& v) {
		RunningStats<double> stats(2);
		return project(batch_norm(v, constant(gamma), constant(beta), stats, Mode::train));
	}), 1e-5);
	EXPECT_LT(op_gradient_error(x, [&](const Var<double>& v) {
		return project(instance_norm(v, constant(gamma), constant(beta)));
	}), 1e-5);
	EXPECT_LT(op_gradient_error(gamma, [&](const Var<double>& v) {
		return project(instance_norm(constant(x), v, constant(beta)));
	}), 1e-6);
}
