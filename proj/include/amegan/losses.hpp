#ifndef AMEGAN_LOSSES_HPP_
#define AMEGAN_LOSSES_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "networks.hpp"

namespace amegan {

/// Clipping bound applied inside every logarithm.
inline constexpr double kLogEps = 1e-8;

enum class Side { discriminator, generator };
enum class Role { generator_step, discriminator_step };

inline double clip_probability(double p) { return std::clamp(p, kLogEps, 1.0 - kLogEps); }

// Plain arithmetic --------------------------------------------------------------

/// Mean absolute difference over all elements.
template<typename T>
double recon_loss(const Tensor<T>& output, const Tensor<T>& target) {
	if (output.shape() != target.shape())
		throw ContractError("recon_loss: " + output.shape().to_string() + " vs " + target.shape().to_string());
	require(!output.empty(), "recon_loss of empty tensors");
	double total = 0;
	for (std::size_t i = 0; i < output.size(); ++i)
		total += std::abs(static_cast<double>(output[i]) - static_cast<double>(target[i]));
	return total / static_cast<double>(output.size());
}

/// Discriminator side: -(mean log D(real) + mean log(1 - D(fake))).
/// Generator side (non-saturating): -mean log D(fake); `real` is ignored.
inline double latent_adv_loss(std::span<const double> real, std::span<const double> fake, Side side) {
	require(!fake.empty(), "latent_adv_loss needs fake scores");
	double fake_term = 0;
	if (side == Side::generator) {
		for (double s : fake)
			fake_term += std::log(clip_probability(s));
		return -fake_term / static_cast<double>(fake.size());
	}
	require(!real.empty(), "latent_adv_loss needs real scores on the discriminator side");
	double real_term = 0;
	for (double s : real)
		real_term += std::log(clip_probability(s));
	for (double s : fake)
		fake_term += std::log(1.0 - clip_probability(s));
	return -(real_term / static_cast<double>(real.size()) + fake_term / static_cast<double>(fake.size()));
}

/// Per-scale scores d[i][b] with weights gamma[i].
struct MultiScaleOutput {
	std::vector<std::vector<double>> d;
	std::vector<double> gamma;
};

inline void check_gamma(std::span<const double> gamma, std::size_t scales) {
	if (gamma.size() != scales || scales == 0)
		throw ContractError("multi-scale output needs one weight per scale");
	double total = 0;
	for (double g : gamma) {
		if (g < 0)
			throw ContractError("multi-scale weights must be nonnegative");
		total += g;
	}
	if (std::abs(total - 1.0) > 1e-6)
		throw ContractError("multi-scale weights sum to " + std::to_string(total) + ", expected 1");
}

/// a_b = sum_i gamma_i d_i[b].
inline std::vector<double> multiscale_aggregate(const MultiScaleOutput& out) {
	check_gamma(out.gamma, out.d.size());
	const std::size_t batch = out.d.front().size();
	std::vector<double> a(batch, 0.0);
	for (std::size_t i = 0; i < out.d.size(); ++i) {
		require(out.d[i].size() == batch, "multi-scale scores disagree on batch size");
		for (std::size_t b = 0; b < batch; ++b)
			a[b] += out.gamma[i] * out.d[i][b];
	}
	return a;
}

/// latent_adv_loss conventions applied to the weighted aggregate.
inline double multiscale_adv_loss(const MultiScaleOutput* real, const MultiScaleOutput& fake, Side side) {
	const auto fake_a = multiscale_aggregate(fake);
	if (side == Side::generator)
		return latent_adv_loss({}, fake_a, side);
	require(real != nullptr, "multiscale_adv_loss needs real scores on the discriminator side");
	const auto real_a = multiscale_aggregate(*real);
	return latent_adv_loss(real_a, fake_a, side);
}

/// Sum over attributes of binary cross entropy, averaged over the batch.
/// Both tensors are (B,1,1,n).
template<typename T>
double attribute_cls_loss(const Tensor<T>& pred, const Tensor<T>& labels) {
	if (pred.shape() != labels.shape())
		throw ContractError("attribute_cls_loss: prediction " + pred.shape().to_string() + " vs label "
				+ labels.shape().to_string());
	const Shape s = pred.shape();
	require(s.n > 0, "attribute_cls_loss of empty batch");
	double total = 0;
	for (std::size_t i = 0; i < pred.size(); ++i) {
		const double c = clip_probability(pred[i]);
		const double y = labels[i];
		total += -y * std::log(c) - (1.0 - y) * std::log(1.0 - c);
	}
	return total / s.n;
}

// Objective bookkeeping -------------------------------------------------------

struct LossWeights {
	double recon = 1.0;
	double adv_g = 1.0;
	double adv_u = 1.0;
	double adv_a = 1.0;
	double cls_a = 1.0;
	friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

inline void to_json(nlohmann::json& j, const LossWeights& w) {
	j = nlohmann::json{{"recon", w.recon}, {"adv_g", w.adv_g}, {"adv_u", w.adv_u}, {"adv_a", w.adv_a}, {"cls_a", w.cls_a}};
}
inline void from_json(const nlohmann::json& j, LossWeights& w) {
	LossWeights d;
	w.recon = j.value("recon", d.recon);
	w.adv_g = j.value("adv_g", d.adv_g);
	w.adv_u = j.value("adv_u", d.adv_u);
	w.adv_a = j.value("adv_a", d.adv_a);
	w.cls_a = j.value("cls_a", d.cls_a);
}

struct LossComponents {
	double recon = 0;
	double adv_g = 0;
	double adv_u = 0;
	double adv_a = 0;
	double cls_a = 0;
};

struct LossReport {
	double recon = 0;
	double adv_g = 0;
	double adv_u = 0;
	double adv_a = 0;
	double cls_a = 0;
	double total = 0;
	Role role = Role::generator_step;
	friend bool operator==(const LossReport&, const LossReport&) = default;
};

/// Weighted sum; a non-finite component raises DivergenceError naming it.
inline LossReport total_loss(const LossComponents& c, const LossWeights& w = {}, Role role = Role::generator_step,
		long step = -1) {
	const std::array<std::pair<const char*, double>, 5> named{{{"recon", c.recon}, {"adv_g", c.adv_g},
			{"adv_u", c.adv_u}, {"adv_a", c.adv_a}, {"cls_a", c.cls_a}}};
	for (const auto& [name, value] : named)
		if (!std::isfinite(value))
			throw DivergenceError(name, step, std::string("non-finite loss component ") + name
					+ (step >= 0 ? " at step " + std::to_string(step) : std::string()));
	LossReport r;
	r.recon = c.recon;
	r.adv_g = c.adv_g;
	r.adv_u = c.adv_u;
	r.adv_a = c.adv_a;
	r.cls_a = c.cls_a;
	r.total = w.recon * c.recon + w.adv_g * c.adv_g + w.adv_u * c.adv_u + w.adv_a * c.adv_a + w.cls_a * c.cls_a;
	r.role = role;
	return r;
}

// Differentiable versions ----------------------------------------------------------

namespace detail {

/// Scalar mean over all elements of log(clip(s)) or log(1 - clip(s)).
template<typename T>
Var<T> mean_log(const Var<T>& scores, bool complement) {
	const auto& v = scores->value;
	const double n = static_cast<double>(v.size());
	double total = 0;
	for (T s : v) {
		const double p = clip_probability(s);
		total += std::log(complement ? 1.0 - p : p);
	}
	return make_result<T>(Tensor<T>(Shape{1, 1, 1, 1}, static_cast<T>(total / n)), {scores},
			[complement, n](Node<T>& self) {
		auto& parent = *self.parents[0];
		auto& g = parent.grad_buffer();
		const double upstream = self.grad[0];
		for (std::size_t i = 0; i < g.size(); ++i) {
			const double s = parent.value[i];
			if (s < kLogEps || s > 1.0 - kLogEps)
				continue;
			g[i] += static_cast<T>(upstream / n * (complement ? -1.0 / (1.0 - s) : 1.0 / s));
		}
	});
}

} // namespace detail

template<typename T>
Var<T> recon_loss(const Var<T>& output, const Tensor<T>& target) {
	const double value = recon_loss(output->value, target);
	const double n = static_cast<double>(target.size());
	auto t = std::make_shared<Tensor<T>>(target);
	return make_result<T>(Tensor<T>(Shape{1, 1, 1, 1}, static_cast<T>(value)), {output}, [t, n](Node<T>& self) {
		auto& parent = *self.parents[0];
		auto& g = parent.grad_buffer();
		const T step = static_cast<T>(self.grad[0] / n);
		for (std::size_t i = 0; i < g.size(); ++i) {
			const T d = parent.value[i] - (*t)[i];
			g[i] += d > T(0) ? step : (d < T(0) ? -step : T(0));
		}
	});
}

/// Differentiable latent_adv_loss; `real` may be null on the generator side.
template<typename T>
Var<T> latent_adv_loss(const Var<T>& real, const Var<T>& fake, Side side) {
	if (side == Side::generator)
		return scale(detail::mean_log(fake, false), T(-1));
	require(real != nullptr, "latent_adv_loss needs real scores on the discriminator side");
	return weighted_sum<T>({detail::mean_log(real, false), detail::mean_log(fake, true)}, {T(-1), T(-1)});
}

/// Per-sample sum_i gamma_i d_i as a (B,1,1,1) node.
template<typename T>
Var<T> multiscale_aggregate(const ImageCritique<T>& critique) {
	std::vector<double> gamma(critique.gamma.begin(), critique.gamma.end());
	check_gamma(gamma, critique.scales.size());
	const Shape s = critique.scales.front()->value.shape();
	Tensor<T> out(s);
	for (std::size_t i = 0; i < critique.scales.size(); ++i) {
		require(critique.scales[i]->value.shape() == s, "scale scores disagree on shape");
		for (std::size_t b = 0; b < out.size(); ++b)
			out[b] += critique.gamma[i] * critique.scales[i]->value[b];
	}
	auto weights = critique.gamma;
	return make_result<T>(std::move(out), critique.scales, [weights](Node<T>& self) {
		for (std::size_t i = 0; i < self.parents.size(); ++i) {
			if (!self.parents[i]->requires_grad)
				continue;
			auto& g = self.parents[i]->grad_buffer();
			for (std::size_t b = 0; b < g.size(); ++b)
				g[b] += weights[i] * self.grad[b];
		}
	});
}

template<typename T>
Var<T> multiscale_adv_loss(const ImageCritique<T>* real, const ImageCritique<T>& fake, Side side) {
	auto fake_a = multiscale_aggregate(fake);
	if (side == Side::generator)
		return latent_adv_loss<T>(nullptr, fake_a, side);
	require(real != nullptr, "multiscale_adv_loss needs real scores on the discriminator side");
	return latent_adv_loss<T>(multiscale_aggregate(*real), fake_a, side);
}

template<typename T>
Var<T> attribute_cls_loss(const Var<T>& pred, const Tensor<T>& labels) {
	const double value = attribute_cls_loss(pred->value, labels);
	const double batch = pred->value.shape().n;
	auto y = std::make_shared<Tensor<T>>(labels);
	return make_result<T>(Tensor<T>(Shape{1, 1, 1, 1}, static_cast<T>(value)), {pred}, [y, batch](Node<T>& self) {
		auto& parent = *self.parents[0];
		auto& g = parent.grad_buffer();
		const double upstream = self.grad[0] / batch;
		for (std::size_t i = 0; i < g.size(); ++i) {
			const double c = parent.value[i];
			if (c < kLogEps || c > 1.0 - kLogEps)
				continue;
			const double t = (*y)[i];
			g[i] += static_cast<T>(upstream * (-t / c + (1.0 - t) / (1.0 - c)));
		}
	});
}

/// Converts a differentiable critique into plain scores.
template<typename T>
MultiScaleOutput to_multiscale_output(const ImageCritique<T>& critique) {
	MultiScaleOutput out;
	for (const auto& s : critique.scales)
		out.d.emplace_back(s->value.storage().begin(), s->value.storage().end());
	out.gamma.assign(critique.gamma.begin(), critique.gamma.end());
	return out;
}

} // namespace amegan

#endif // AMEGAN_LOSSES_HPP_
