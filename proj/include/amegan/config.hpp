#ifndef AMEGAN_CONFIG_HPP_
#define AMEGAN_CONFIG_HPP_

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "conv.hpp"
#include "errors.hpp"

namespace amegan {

inline constexpr int kEncoderStages = 5;
inline constexpr int kSkipCount = kEncoderStages - 1;

/// Architecture hyperparameters. Widths are per-stage output channels.
struct ModelConfig {
	int image_size = 32;
	int num_attributes = 4;
	int base_width = 32;          // first encoder / discriminator stage
	int max_width = 128;          // cap for the doubling schedule
	int attr_channels = 64;       // C_a
	int background_channels = 64; // C_b
	int fuse_channels = 32;       // C_f, channels of r_a and r_b
	int moment_hidden = 32;       // hidden width of the mean / variance stacks
	int latent_disc_width = 64;   // width of the 1x1 latent discriminators
	int num_scales = 3;           // m, image discriminator score taps
	double leaky_slope = 0.2;
	double init_std = 0.02;
	std::uint64_t init_seed = 1;

	int stage_width(int stage) const { return std::min(base_width << stage, max_width); }

	/// Side of the latent maps: image_size / 2^5, floored at one pixel.
	int latent_size() const { return std::max(1, image_size >> kEncoderStages); }

	friend bool operator==(const ModelConfig&, const ModelConfig&) = default;

	void validate() const {
		const bool pow2 = image_size >= 16 && (image_size & (image_size - 1)) == 0;
		if (!pow2)
			throw ConfigError("image_size must be a power of two >= 16, got " + std::to_string(image_size));
		if (num_attributes < 1)
			throw ConfigError("num_attributes must be positive");
		for (int v : {base_width, max_width, attr_channels, background_channels, fuse_channels, moment_hidden,
				latent_disc_width})
			if (v < 1)
				throw ConfigError("channel widths must be positive");
		if (num_scales < 1 || num_scales > kEncoderStages)
			throw ConfigError("num_scales must lie in [1, " + std::to_string(kEncoderStages) + "], got "
					+ std::to_string(num_scales));
		if (init_std <= 0)
			throw ConfigError("init_std must be positive");
	}
};

/// Geometry of one downsampling stage: input side, output side and kernel.
struct Stage {
	int in = 0;
	int out = 0;
	ConvGeometry geometry;
};

/// The five encoder (and image discriminator) stages for a given image size.
/// Stages halve the map with 4x4/stride 2 kernels; once the map is 1x1 a 3x3
/// stride-1 kernel keeps it there.
inline std::vector<Stage> downsampling_stages(int image_size) {
	std::vector<Stage> stages;
	int side = image_size;
	for (int i = 0; i < kEncoderStages; ++i) {
		if (side >= 2) {
			stages.push_back({side, side / 2, ConvGeometry{4, 2, 1}});
			side /= 2;
		} else {
			stages.push_back({1, 1, ConvGeometry{3, 1, 1}});
		}
	}
	return stages;
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
	j = nlohmann::json{{"image_size", c.image_size}, {"num_attributes", c.num_attributes},
			{"base_width", c.base_width}, {"max_width", c.max_width}, {"attr_channels", c.attr_channels},
			{"background_channels", c.background_channels}, {"fuse_channels", c.fuse_channels},
			{"moment_hidden", c.moment_hidden}, {"latent_disc_width", c.latent_disc_width},
			{"num_scales", c.num_scales}, {"leaky_slope", c.leaky_slope}, {"init_std", c.init_std},
			{"init_seed", c.init_seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
	ModelConfig d;
	c.image_size = j.value("image_size", d.image_size);
	c.num_attributes = j.value("num_attributes", d.num_attributes);
	c.base_width = j.value("base_width", d.base_width);
	c.max_width = j.value("max_width", d.max_width);
	c.attr_channels = j.value("attr_channels", d.attr_channels);
	c.background_channels = j.value("background_channels", d.background_channels);
	c.fuse_channels = j.value("fuse_channels", d.fuse_channels);
	c.moment_hidden = j.value("moment_hidden", d.moment_hidden);
	c.latent_disc_width = j.value("latent_disc_width", d.latent_disc_width);
	c.num_scales = j.value("num_scales", d.num_scales);
	c.leaky_slope = j.value("leaky_slope", d.leaky_slope);
	c.init_std = j.value("init_std", d.init_std);
	c.init_seed = j.value("init_seed", d.init_seed);
}

/// n binary attribute flags.
class AttributeLabel {
public:
	AttributeLabel() = default;
	explicit AttributeLabel(std::vector<int> bits) : bits_(std::move(bits)) {
		for (int b : bits_)
			require(b == 0 || b == 1, "attribute bits must be 0 or 1");
	}

	/// Parses "1010"-style text.
	static AttributeLabel parse(const std::string& text) {
		std::vector<int> bits;
		for (char ch : text) {
			if (ch != '0' && ch != '1')
				throw ContractError("attribute bitstring must contain only 0/1: '" + text + "'");
			bits.push_back(ch - '0');
		}
		return AttributeLabel(std::move(bits));
	}

	/// Little-endian bit decomposition of `code`: bit i of code is attribute i.
	static AttributeLabel from_code(unsigned code, int n) {
		std::vector<int> bits(n);
		for (int i = 0; i < n; ++i)
			bits[i] = (code >> i) & 1u;
		return AttributeLabel(std::move(bits));
	}

	int size() const { return static_cast<int>(bits_.size()); }
	int operator[](int i) const { return bits_[i]; }
	const std::vector<int>& bits() const { return bits_; }

	AttributeLabel flipped(int i) const {
		auto b = bits_;
		b[i] = 1 - b[i];
		return AttributeLabel(std::move(b));
	}

	std::string to_string() const {
		std::string s;
		for (int b : bits_)
			s.push_back(static_cast<char>('0' + b));
		return s;
	}

	friend bool operator==(const AttributeLabel&, const AttributeLabel&) = default;

private:
	std::vector<int> bits_;
};

/// Stacks labels into a (B,1,1,n) tensor.
template<typename T>
Tensor<T> label_tensor(const std::vector<AttributeLabel>& labels, int n) {
	require(!labels.empty(), "empty label batch");
	Tensor<T> t(Shape{static_cast<int>(labels.size()), 1, 1, n});
	for (std::size_t b = 0; b < labels.size(); ++b) {
		if (labels[b].size() != n)
			throw ContractError("label length " + std::to_string(labels[b].size()) + " != num_attributes "
					+ std::to_string(n));
		for (int i = 0; i < n; ++i)
			t.at(static_cast<int>(b), 0, 0, i) = static_cast<T>(labels[b][i]);
	}
	return t;
}

/// Transfer intensity, restricted to [0, 1].
class TransferControl {
public:
	explicit TransferControl(double theta = 1.0) : theta_(theta) {
		if (!(theta >= 0.0 && theta <= 1.0))
			throw ContractError("theta must lie in [0, 1], got " + std::to_string(theta));
	}
	double theta() const { return theta_; }
private:
	double theta_;
};

} // namespace amegan

#endif // AMEGAN_CONFIG_HPP_
