#ifndef AMEGAN_TESTS_SUPPORT_HPP_
#define AMEGAN_TESTS_SUPPORT_HPP_

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "amegan/amegan.hpp"

namespace amegan::testing {

/// 16x16 images, every channel width <= 8.
inline ModelConfig tiny_config() {
	ModelConfig c;
	c.image_size = 16;
	c.base_width = 4;
	c.max_width = 8;
	c.attr_channels = 8;
	c.background_channels = 8;
	c.fuse_channels = 8;
	c.moment_hidden = 8;
	c.latent_disc_width = 8;
	c.num_scales = 2;
	c.init_std = 0.2;
	return c;
}

inline TrainConfig tiny_train_config(long steps = 10) {
	TrainConfig t;
	t.model = tiny_config();
	t.steps = steps;
	t.batch_size = 4;
	t.checkpoint_interval = 1000;
	t.seed = 7;
	return t;
}

template<typename T>
Tensor<T> random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
	Tensor<T> t(s);
	for (auto& v : t)
		v = static_cast<T>(rng.uniform(lo, hi));
	return t;
}

/// Clean renders of consecutive evaluation seeds.
template<typename T>
Batch<T> eval_batch(int count, int size, std::uint64_t first = synth::kEvalSeedBegin) {
	std::vector<std::uint64_t> seeds(count);
	for (int i = 0; i < count; ++i)
		seeds[i] = first + static_cast<std::uint64_t>(i);
	return render_batch<T>(seeds, size);
}

/// One differentiable objective term evaluated on fixed inputs.
struct LossTerm {
	std::string name;
	std::function<Var<double>(const Model<double>&)> evaluate;
	std::vector<std::string> networks; // registry prefixes whose parameters it depends on
};

/// The five objective terms on a fixed batch, prior draw and target permutation.
inline std::vector<LossTerm> objective_terms(const ModelConfig& cfg, int batch_size, std::uint64_t seed) {
	auto batch = std::make_shared<Batch<double>>(eval_batch<double>(batch_size, cfg.image_size));
	Rng rng(seed);
	auto targets = std::make_shared<Tensor<double>>(permute_batch(batch->labels, rng.permutation(batch_size)));
	const int side = cfg.latent_size();
	auto prior_g = std::make_shared<Tensor<double>>(Shape{batch_size, side, side, cfg.attr_channels});
	for (auto& v : *prior_g)
		v = rng.normal();
	auto prior_u = std::make_shared<Tensor<double>>(Shape{batch_size, side, side, cfg.background_channels});
	for (auto& v : *prior_u)
		v = rng.uniform_open_pm1();

	auto fake = [=](const Model<double>& m, const Tensor<double>& labels) {
		const auto lat = encode(m, batch->images, Mode::train);
		return decode_fuse(m, decode_attribute(m, lat.attr, labels, TransferControl(1.0)), decode_background(m, lat));
	};
	const std::vector<std::string> gen{"enc.", "dec_a.", "dec_b.", "dec_f."};
	auto with = [&](std::string extra) {
		auto v = gen;
		v.push_back(std::move(extra));
		return v;
	};
	std::vector<LossTerm> terms;
	terms.push_back({"recon", [=](const Model<double>& m) { return recon_loss(fake(m, batch->labels), batch->images); },
			gen});
	terms.push_back({"adv_g", [=](const Model<double>& m) {
				const auto lat = encode(m, batch->images, Mode::train);
				return latent_adv_loss(discriminate_latent_gaussian(m, constant(*prior_g), Mode::train),
						discriminate_latent_gaussian(m, lat.attr, Mode::train), Side::discriminator);
			}, {"enc.", "d_g."}});
	terms.push_back({"adv_u", [=](const Model<double>& m) {
				const auto lat = encode(m, batch->images, Mode::train);
				return latent_adv_loss(discriminate_latent_uniform(m, constant(*prior_u), Mode::train),
						discriminate_latent_uniform(m, lat.background, Mode::train), Side::discriminator);
			}, {"enc.", "d_u."}});
	terms.push_back({"adv_a", [=](const Model<double>& m) {
				const auto real = discriminate_image(m, constant(batch->images), Mode::train);
				const auto critique = discriminate_image(m, fake(m, *targets), Mode::train);
				return multiscale_adv_loss(&real, critique, Side::discriminator);
			}, with("d_a.")});
	terms.push_back({"cls_a", [=](const Model<double>& m) {
				const auto critique = discriminate_image(m, fake(m, *targets), Mode::train);
				return attribute_cls_loss(critique.attributes, *targets);
			}, with("d_a.")});
	return terms;
}

struct GradCheck {
	int checked = 0;
	int passed = 0;
	double worst = 0;
	double pass_rate() const { return checked ? static_cast<double>(passed) / checked : 0.0; }
};

/// Central differences against backprop on `coords` parameter elements drawn
/// uniformly from the term's networks.
inline GradCheck check_gradients(Model<double>& model, const LossTerm& term, int coords, std::uint64_t seed,
		double step = 1e-6, double tolerance = 1e-3) {
	std::vector<Var<double>> params;
	std::size_t total = 0;
	for (const auto& p : model.parameters())
		for (const auto& prefix : term.networks)
			if (p.name.rfind(prefix, 0) == 0) {
				params.push_back(p.var);
				total += p.var->value.size();
			}
	for (auto& p : model.parameters())
		p.var->zero_grad();
	backward(term.evaluate(model));

	Rng rng(seed);
	GradCheck r;
	for (int k = 0; k < coords; ++k) {
		std::size_t flat = rng.below(total);
		std::size_t which = 0;
		while (flat >= params[which]->value.size())
			flat -= params[which++]->value.size();
		auto& value = params[which]->value[flat];
		const double analytic = params[which]->grad.empty() ? 0.0 : params[which]->grad[flat];
		const double saved = value;
		double plus, minus;
		{
			NoGradGuard guard;
			value = saved + step;
			plus = term.evaluate(model)->value[0];
			value = saved - step;
			minus = term.evaluate(model)->value[0];
			value = saved;
		}
		const double numeric = (plus - minus) / (2 * step);
		const double scale = std::max(std::abs(analytic), std::abs(numeric));
		const double rel = std::abs(analytic - numeric) / std::max(scale, 1e-8);
		++r.checked;
		r.passed += rel < tolerance;
		r.worst = std::max(r.worst, rel);
	}
	return r;
}

} // namespace amegan::testing

#endif // AMEGAN_TESTS_SUPPORT_HPP_
