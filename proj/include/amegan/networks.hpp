#ifndef AMEGAN_NETWORKS_HPP_
#define AMEGAN_NETWORKS_HPP_

#include <string>
#include <vector>

#include "config.hpp"
#include "layers.hpp"

namespace amegan {

/// Encoder output: attribute latent l_a, background latent l_b (both
/// (B, h, w, C) maps) and the intermediate features feeding the U-Net path,
/// shallowest first.
template<typename T>
struct LatentPair {
	Var<T> attr;
	Var<T> background;
	std::vector<Var<T>> skips;
};

/// Per-scale real/fake probabilities d_i with their weights gamma_i, plus the
/// attribute classification head c.
template<typename T>
struct ImageCritique {
	std::vector<Var<T>> scales;
	std::vector<T> gamma;
	Var<T> attributes;
};

/// Five strided Conv-BN-LeakyReLU stages; the last stage emits C_a + C_b
/// channels split into l_a (linear) and l_b (tanh, bounded like its uniform prior).
template<typename T>
class Encoder {
public:
	ParameterRegistry<T> registry{"enc."};

	Encoder(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
		const auto stages = downsampling_stages(cfg.image_size);
		int cin = 3;
		for (int i = 0; i < kEncoderStages; ++i) {
			const int cout = i + 1 < kEncoderStages ? cfg.stage_width(i) : cfg.attr_channels + cfg.background_channels;
			const std::string name = "stage" + std::to_string(i + 1);
			convs_.emplace_back(registry, name + ".conv", cin, cout, stages[i].geometry, cfg.init_std, rng, false);
			norms_.emplace_back(registry, name + ".bn", cout);
			cin = cout;
		}
	}

	LatentPair<T> operator()(const Var<T>& images, Mode mode) const {
		LatentPair<T> out;
		Var<T> h = images;
		for (int i = 0; i < kEncoderStages; ++i) {
			h = norms_[i](convs_[i](h), mode);
			if (i + 1 < kEncoderStages) {
				h = leaky_relu(h, static_cast<T>(cfg_.leaky_slope));
				out.skips.push_back(h);
			}
		}
		out.attr = slice_channels(h, 0, cfg_.attr_channels);
		out.background = tanh(slice_channels(h, cfg_.attr_channels, cfg_.background_channels));
		return out;
	}

private:
	ModelConfig cfg_;
	std::vector<Conv2d<T>> convs_;
	std::vector<BatchNorm<T>> norms_;
};

/// DEC_a together with the two label-conditioned stacks producing the
/// attribute moments. The upsampling stack carries no normalization: the
/// magnitude of its input is the transfer intensity.
template<typename T>
class AttributeDecoder {
public:
	ParameterRegistry<T> registry{"dec_a."};

	AttributeDecoder(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
		const ConvGeometry same{3, 1, 1};
		mean1_ = Conv2d<T>(registry, "mean.conv1", cfg.num_attributes, cfg.moment_hidden, same, cfg.init_std, rng);
		mean2_ = Conv2d<T>(registry, "mean.conv2", cfg.moment_hidden, cfg.attr_channels, same, cfg.init_std, rng);
		var1_ = Conv2d<T>(registry, "var.conv1", cfg.num_attributes, cfg.moment_hidden, same, cfg.init_std, rng);
		var2_ = Conv2d<T>(registry, "var.conv2", cfg.moment_hidden, cfg.attr_channels, same, cfg.init_std, rng);
		const auto stages = downsampling_stages(cfg.image_size);
		int cin = cfg.attr_channels;
		for (int k = 0; k < kSkipCount; ++k) {
			const int cout = k + 1 < kSkipCount ? cfg.stage_width(kSkipCount - 1 - k) : cfg.fuse_channels;
			ups_.emplace_back(registry, "up" + std::to_string(k + 1), cin, cout, stages[kEncoderStages - 1 - k].geometry,
					cfg.init_std, rng);
			cin = cout;
		}
	}

	/// Label map (B, h, w, n) -> (mean, variance), variance = softplus(.) + 1e-4.
	std::pair<Var<T>, Var<T>> moments(const Var<T>& label_map) const {
		const T slope = static_cast<T>(cfg_.leaky_slope);
		auto mean = mean2_(leaky_relu(mean1_(label_map), slope));
		auto var = softplus(var2_(leaky_relu(var1_(label_map), slope)), T(1e-4));
		return {mean, var};
	}

	Var<T> decode(const Var<T>& modulated) const {
		Var<T> h = modulated;
		for (std::size_t k = 0; k < ups_.size(); ++k) {
			h = ups_[k](h);
			if (k + 1 < ups_.size())
				h = relu(h);
		}
		return h;
	}

private:
	ModelConfig cfg_;
	Conv2d<T> mean1_, mean2_, var1_, var2_;
	std::vector<ConvTranspose2d<T>> ups_;
};

/// DEC_b: Deconv-InstanceNorm-ReLU stages with U-Net skips from the encoder,
/// closed by a 3x3 layer over the shallowest skip.
template<typename T>
class BackgroundDecoder {
public:
	ParameterRegistry<T> registry{"dec_b."};

	BackgroundDecoder(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
		const auto stages = downsampling_stages(cfg.image_size);
		int cin = cfg.background_channels;
		for (int k = 0; k < kSkipCount; ++k) {
			const int cout = cfg.stage_width(kSkipCount - 1 - k);
			const std::string name = "up" + std::to_string(k + 1);
			ups_.emplace_back(registry, name + ".deconv", cin, cout, stages[kEncoderStages - 1 - k].geometry,
					cfg.init_std, rng, false);
			norms_.emplace_back(registry, name + ".in", cout);
			cin = cout + cfg.stage_width(kSkipCount - 1 - k);
		}
		out_ = ConvTranspose2d<T>(registry, "out", cin, cfg.fuse_channels, ConvGeometry{3, 1, 1}, cfg.init_std, rng);
	}

	Var<T> operator()(const LatentPair<T>& latent) const {
		if (latent.skips.size() != static_cast<std::size_t>(kSkipCount))
			throw ConfigError("background decoder expects " + std::to_string(kSkipCount) + " skip features, got "
					+ std::to_string(latent.skips.size()));
		Var<T> h = latent.background;
		for (int k = 0; k < kSkipCount; ++k) {
			h = relu(norms_[k](ups_[k](h)));
			h = concat_channels(h, latent.skips[kSkipCount - 1 - k]);
		}
		return out_(h);
	}

private:
	ModelConfig cfg_;
	std::vector<ConvTranspose2d<T>> ups_;
	std::vector<InstanceNorm<T>> norms_;
	ConvTranspose2d<T> out_;
};

/// DEC_f: one stride-1 Deconv-ReLU block on r_a + r_b, then the final
/// upsampling to image resolution with tanh. No instance normalization here:
/// it would remove the per-image colour offsets that r_b carries.
template<typename T>
class FuseDecoder {
public:
	ParameterRegistry<T> registry{"dec_f."};

	FuseDecoder(const ModelConfig& cfg, Rng& rng) {
		const auto stages = downsampling_stages(cfg.image_size);
		mix_ = ConvTranspose2d<T>(registry, "mix.deconv", cfg.fuse_channels, cfg.fuse_channels, ConvGeometry{3, 1, 1},
				cfg.init_std, rng);
		out_ = ConvTranspose2d<T>(registry, "out", cfg.fuse_channels, 3, stages[0].geometry, cfg.init_std, rng);
	}

	Var<T> operator()(const Var<T>& representation) const {
		return tanh(out_(relu(mix_(representation))));
	}

private:
	ConvTranspose2d<T> mix_;
	ConvTranspose2d<T> out_;
};

/// D_g / D_u: two 1x1 Conv-BN-LeakyReLU blocks and a fully connected sigmoid.
template<typename T>
class LatentDiscriminator {
public:
	ParameterRegistry<T> registry;

	LatentDiscriminator(const std::string& prefix, const ModelConfig& cfg, int channels, Rng& rng) :
			registry(prefix),
			cfg_(cfg) {
		const ConvGeometry pointwise{1, 1, 0};
		const int width = cfg.latent_disc_width;
		const int side = cfg.latent_size();
		conv1_ = Conv2d<T>(registry, "block1.conv", channels, width, pointwise, cfg.init_std, rng, false);
		norm1_ = BatchNorm<T>(registry, "block1.bn", width);
		conv2_ = Conv2d<T>(registry, "block2.conv", width, width, pointwise, cfg.init_std, rng, false);
		norm2_ = BatchNorm<T>(registry, "block2.bn", width);
		fc_ = Dense<T>(registry, "fc", side * side * width, 1, cfg.init_std, rng);
		channels_ = channels;
	}

	/// (B, h, w, C) -> (B, 1, 1, 1) probabilities of "drawn from the prior".
	Var<T> operator()(const Var<T>& sample, Mode mode) const {
		const Shape s = sample->value.shape();
		const int side = cfg_.latent_size();
		if (s.h != side || s.w != side || s.c != channels_)
			throw ContractError("latent discriminator input " + s.to_string() + " does not match latent shape");
		const T slope = static_cast<T>(cfg_.leaky_slope);
		auto h = leaky_relu(norm1_(conv1_(sample), mode), slope);
		h = leaky_relu(norm2_(conv2_(h), mode), slope);
		return sigmoid(fc_(h));
	}

private:
	ModelConfig cfg_;
	int channels_ = 0;
	Conv2d<T> conv1_, conv2_;
	BatchNorm<T> norm1_, norm2_;
	Dense<T> fc_;
};

/// D_a: five Conv-BN-LeakyReLU stages; the last m stages each feed a fully
/// connected real/fake head, the deepest also feeds the attribute classifier.
template<typename T>
class ImageDiscriminator {
public:
	ParameterRegistry<T> registry{"d_a."};

	ImageDiscriminator(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
		const auto stages = downsampling_stages(cfg.image_size);
		int cin = 3;
		for (int i = 0; i < kEncoderStages; ++i) {
			const int cout = cfg.stage_width(i);
			const std::string name = "stage" + std::to_string(i + 1);
			convs_.emplace_back(registry, name + ".conv", cin, cout, stages[i].geometry, cfg.init_std, rng, false);
			norms_.emplace_back(registry, name + ".bn", cout);
			cin = cout;
		}
		for (int i = kEncoderStages - cfg.num_scales; i < kEncoderStages; ++i) {
			const int side = stages[i].out;
			taps_.emplace_back(registry, "scale" + std::to_string(i + 1) + ".fc", side * side * cfg.stage_width(i), 1,
					cfg.init_std, rng);
		}
		const int last = stages.back().out;
		classifier_ = Dense<T>(registry, "classifier.fc", last * last * cin, cfg.num_attributes, cfg.init_std, rng);
	}

	ImageCritique<T> operator()(const Var<T>& images, Mode mode) const {
		ImageCritique<T> out;
		const T slope = static_cast<T>(cfg_.leaky_slope);
		const int first_tap = kEncoderStages - cfg_.num_scales;
		Var<T> h = images;
		for (int i = 0; i < kEncoderStages; ++i) {
			h = leaky_relu(norms_[i](convs_[i](h), mode), slope);
			if (i >= first_tap)
				out.scales.push_back(sigmoid(taps_[i - first_tap](h)));
		}
		out.gamma.assign(cfg_.num_scales, static_cast<T>(1.0 / cfg_.num_scales));
		out.attributes = sigmoid(classifier_(h));
		return out;
	}

private:
	ModelConfig cfg_;
	std::vector<Conv2d<T>> convs_;
	std::vector<BatchNorm<T>> norms_;
	std::vector<Dense<T>> taps_;
	Dense<T> classifier_;
};

/// All seven networks. Parameters are shared handles, so the model is move-only.
template<typename T>
class Model {
public:
	explicit Model(const ModelConfig& cfg) : Model(cfg, seeded_rng(cfg)) { }

	Model(const Model&) = delete;
	Model& operator=(const Model&) = delete;
	Model(Model&&) = default;
	Model& operator=(Model&&) = default;

	const ModelConfig& config() const { return config_; }

	Encoder<T> enc;
	AttributeDecoder<T> dec_a;
	BackgroundDecoder<T> dec_b;
	FuseDecoder<T> dec_f;
	LatentDiscriminator<T> d_g;
	LatentDiscriminator<T> d_u;
	ImageDiscriminator<T> d_a;

	std::vector<ParameterRegistry<T>*> generator_registries() { return {&enc.registry, &dec_a.registry, &dec_b.registry, &dec_f.registry}; }
	std::vector<ParameterRegistry<T>*> discriminator_registries() { return {&d_g.registry, &d_u.registry, &d_a.registry}; }
	std::vector<ParameterRegistry<T>*> registries() {
		auto all = generator_registries();
		for (auto* r : discriminator_registries())
			all.push_back(r);
		return all;
	}
	std::vector<const ParameterRegistry<T>*> registries() const {
		return {&enc.registry, &dec_a.registry, &dec_b.registry, &dec_f.registry, &d_g.registry, &d_u.registry,
				&d_a.registry};
	}

	std::vector<NamedParameter<T>> parameters() const {
		std::vector<NamedParameter<T>> out;
		for (const auto* r : registries())
			out.insert(out.end(), r->parameters().begin(), r->parameters().end());
		return out;
	}
	std::vector<NamedBuffer<T>> buffers() const {
		std::vector<NamedBuffer<T>> out;
		for (const auto* r : registries())
			out.insert(out.end(), r->buffers().begin(), r->buffers().end());
		return out;
	}

	std::size_t parameter_count() const {
		std::size_t n = 0;
		for (const auto& p : parameters())
			n += p.var->value.size();
		return n;
	}

private:
	static Rng seeded_rng(const ModelConfig& cfg) {
		cfg.validate();
		return Rng(cfg.init_seed);
	}
	Model(const ModelConfig& cfg, Rng&& rng) :
			enc(cfg, rng),
			dec_a(cfg, rng),
			dec_b(cfg, rng),
			dec_f(cfg, rng),
			d_g("d_g.", cfg, cfg.attr_channels, rng),
			d_u("d_u.", cfg, cfg.background_channels, rng),
			d_a(cfg, rng),
			config_(cfg) { }

	ModelConfig config_;
};

// Forward contracts -----------------------------------------------------------

/// Rejects batches outside the ImageBatch contract, naming the first bad sample.
template<typename T>
void validate_images(const Tensor<T>& images, const ModelConfig& cfg) {
	const Shape s = images.shape();
	if (s.n < 1 || s.h != cfg.image_size || s.w != cfg.image_size || s.c != 3)
		throw ContractError("image batch " + s.to_string() + " does not match image_size " + std::to_string(cfg.image_size));
	const std::size_t per = s.per_sample();
	for (int b = 0; b < s.n; ++b)
		for (std::size_t i = 0; i < per; ++i) {
			const T v = images[b * per + i];
			if (!std::isfinite(v))
				throw ContractError("non-finite pixel in image batch at index " + std::to_string(b));
			if (v < T(-1) || v > T(1))
				throw ContractError("pixel outside [-1, 1] in image batch at index " + std::to_string(b));
		}
}

template<typename T>
LatentPair<T> encode(const Model<T>& model, const Var<T>& images, Mode mode) {
	validate_images(images->value, model.config());
	return model.enc(images, mode);
}

template<typename T>
LatentPair<T> encode(const Model<T>& model, const Tensor<T>& images, Mode mode) {
	return encode(model, constant(images), mode);
}

template<typename T>
Var<T> decode_background(const Model<T>& model, const LatentPair<T>& latent) {
	return model.dec_b(latent);
}

/// DEC_f(r_a + r_b).
template<typename T>
Var<T> decode_fuse(const Model<T>& model, const Var<T>& attr_repr, const Var<T>& background_repr) {
	if (attr_repr->value.shape() != background_repr->value.shape())
		throw ContractError("decode_fuse: r_a " + attr_repr->value.shape().to_string() + " vs r_b "
				+ background_repr->value.shape().to_string());
	return model.dec_f(add(attr_repr, background_repr));
}

template<typename T>
Var<T> discriminate_latent_gaussian(const Model<T>& model, const Var<T>& sample, Mode mode) {
	return model.d_g(sample, mode);
}

template<typename T>
Var<T> discriminate_latent_uniform(const Model<T>& model, const Var<T>& sample, Mode mode) {
	return model.d_u(sample, mode);
}

template<typename T>
ImageCritique<T> discriminate_image(const Model<T>& model, const Var<T>& images, Mode mode) {
	return model.d_a(images, mode);
}

} // namespace amegan

#endif // AMEGAN_NETWORKS_HPP_
