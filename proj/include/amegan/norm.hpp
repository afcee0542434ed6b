#ifndef AMEGAN_NORM_HPP_
#define AMEGAN_NORM_HPP_

#include <cmath>
#include <vector>

#include "autograd.hpp"

namespace amegan {

enum class Mode { train, infer };

/// Running statistics of a batch-normalization layer.
template<typename T>
struct RunningStats {
	Tensor<T> mean;
	Tensor<T> var;
	explicit RunningStats(int channels = 0) :
			mean(Shape{1, 1, 1, channels}, T(0)),
			var(Shape{1, 1, 1, channels}, T(1)) { }
};

namespace detail {

/// Shared normalization kernel. Elements are split into `groups` (each a
/// contiguous run of `group_pixels` pixels); statistics are per (group, channel).
/// With `fixed` set the given mean/var replace the measured ones and are
/// treated as constants.
template<typename T>
Var<T> normalize(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, int groups, T eps,
		const std::vector<double>* fixed_mean, const std::vector<double>* fixed_var,
		std::vector<double>* measured_mean, std::vector<double>* measured_var) {
	const Shape s = x->value.shape();
	const int c = s.c;
	const std::size_t pixels = static_cast<std::size_t>(s.n) * s.h * s.w;
	const std::size_t group_pixels = pixels / groups;
	const std::size_t stats = static_cast<std::size_t>(groups) * c;

	std::vector<double> mean(stats, 0.0), var(stats, 0.0);
	if (fixed_mean) {
		for (int gi = 0; gi < groups; ++gi)
			for (int k = 0; k < c; ++k) {
				mean[gi * c + k] = (*fixed_mean)[k];
				var[gi * c + k] = (*fixed_var)[k];
			}
	} else {
		for (std::size_t p = 0; p < pixels; ++p) {
			const std::size_t base = (p / group_pixels) * c;
			for (int k = 0; k < c; ++k)
				mean[base + k] += x->value[p * c + k];
		}
		for (auto& m : mean)
			m /= static_cast<double>(group_pixels);
		for (std::size_t p = 0; p < pixels; ++p) {
			const std::size_t base = (p / group_pixels) * c;
			for (int k = 0; k < c; ++k) {
				const double d = x->value[p * c + k] - mean[base + k];
				var[base + k] += d * d;
			}
		}
		for (auto& v : var)
			v /= static_cast<double>(group_pixels);
		if (measured_mean) {
			*measured_mean = mean;
			*measured_var = var;
		}
	}

	auto inv_std = std::make_shared<std::vector<T>>(stats);
	for (std::size_t i = 0; i < stats; ++i)
		(*inv_std)[i] = static_cast<T>(1.0 / std::sqrt(var[i] + static_cast<double>(eps)));
	auto xhat = std::make_shared<Tensor<T>>(s);
	Tensor<T> out(s);
	for (std::size_t p = 0; p < pixels; ++p) {
		const std::size_t base = (p / group_pixels) * c;
		for (int k = 0; k < c; ++k) {
			const std::size_t i = p * c + k;
			const T h = static_cast<T>((x->value[i] - mean[base + k]) * (*inv_std)[base + k]);
			(*xhat)[i] = h;
			out[i] = gamma->value[k] * h + beta->value[k];
		}
	}

	const bool batch_stats = fixed_mean == nullptr;
	return make_result<T>(std::move(out), {x, gamma, beta},
			[xhat, inv_std, pixels, group_pixels, c, stats, batch_stats](Node<T>& self) {
		auto& px = *self.parents[0];
		auto& pg = *self.parents[1];
		auto& pb = *self.parents[2];
		const auto& dy = self.grad;
		if (pg.requires_grad || pb.requires_grad) {
			std::vector<double> dg(c, 0.0), db(c, 0.0);
			for (std::size_t p = 0; p < pixels; ++p)
				for (int k = 0; k < c; ++k) {
					dg[k] += static_cast<double>(dy[p * c + k]) * (*xhat)[p * c + k];
					db[k] += dy[p * c + k];
				}
			if (pg.requires_grad) {
				auto& g = pg.grad_buffer();
				for (int k = 0; k < c; ++k)
					g[k] += static_cast<T>(dg[k]);
			}
			if (pb.requires_grad) {
				auto& g = pb.grad_buffer();
				for (int k = 0; k < c; ++k)
					g[k] += static_cast<T>(db[k]);
			}
		}
		if (!px.requires_grad)
			return;
		auto& gx = px.grad_buffer();
		if (!batch_stats) {
			for (std::size_t p = 0; p < pixels; ++p) {
				const std::size_t base = (p / group_pixels) * c;
				for (int k = 0; k < c; ++k)
					gx[p * c + k] += dy[p * c + k] * pg.value[k] * (*inv_std)[base + k];
			}
			return;
		}
		// dx = inv_std / M * (M*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat))
		std::vector<double> sum_d(stats, 0.0), sum_dx(stats, 0.0);
		for (std::size_t p = 0; p < pixels; ++p) {
			const std::size_t base = (p / group_pixels) * c;
			for (int k = 0; k < c; ++k) {
				const double d = static_cast<double>(dy[p * c + k]) * pg.value[k];
				sum_d[base + k] += d;
				sum_dx[base + k] += d * (*xhat)[p * c + k];
			}
		}
		const double m = static_cast<double>(group_pixels);
		for (std::size_t p = 0; p < pixels; ++p) {
			const std::size_t base = (p / group_pixels) * c;
			for (int k = 0; k < c; ++k) {
				const std::size_t i = p * c + k;
				const double d = static_cast<double>(dy[i]) * pg.value[k];
				gx[i] += static_cast<T>((*inv_std)[base + k] / m
						* (m * d - sum_d[base + k] - (*xhat)[i] * sum_dx[base + k]));
			}
		}
	});
}

} // namespace detail

/// Batch normalization over (N, H, W) per channel. Train mode normalizes with
/// batch statistics and folds them into `stats` with the given momentum
/// (unbiased variance); infer mode reads `stats` only.
template<typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, RunningStats<T>& stats, Mode mode,
		T momentum = T(0.1), T eps = T(1e-5)) {
	const Shape s = x->value.shape();
	require(gamma->value.size() == static_cast<std::size_t>(s.c), "batch_norm: channel mismatch");
	if (mode == Mode::infer) {
		std::vector<double> m(s.c), v(s.c);
		for (int k = 0; k < s.c; ++k) {
			m[k] = stats.mean[k];
			v[k] = stats.var[k];
		}
		return detail::normalize<T>(x, gamma, beta, 1, eps, &m, &v, nullptr, nullptr);
	}
	std::vector<double> m, v;
	auto out = detail::normalize<T>(x, gamma, beta, 1, eps, nullptr, nullptr, &m, &v);
	const double count = static_cast<double>(s.n) * s.h * s.w;
	const double unbias = count > 1 ? count / (count - 1) : 1.0;
	for (int k = 0; k < s.c; ++k) {
		stats.mean[k] = static_cast<T>((1 - momentum) * stats.mean[k] + momentum * m[k]);
		stats.var[k] = static_cast<T>((1 - momentum) * stats.var[k] + momentum * v[k] * unbias);
	}
	return out;
}

/// Instance normalization over (H, W) per sample and channel, with affine
/// parameters. A 1x1 map has no spatial statistics and passes through the
/// affine transform of the identity normalization.
template<typename T>
Var<T> instance_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
	const Shape s = x->value.shape();
	require(gamma->value.size() == static_cast<std::size_t>(s.c), "instance_norm: channel mismatch");
	if (s.h * s.w == 1) {
		std::vector<double> m(s.c, 0.0), v(s.c, 1.0 - static_cast<double>(eps));
		return detail::normalize<T>(x, gamma, beta, s.n, eps, &m, &v, nullptr, nullptr);
	}
	return detail::normalize<T>(x, gamma, beta, s.n, eps, nullptr, nullptr, nullptr, nullptr);
}

} // namespace amegan

#endif // AMEGAN_NORM_HPP_
