#ifndef AMEGAN_MODULATION_HPP_
#define AMEGAN_MODULATION_HPP_

#include <vector>

#include "networks.hpp"

namespace amegan {

/// Label-conditioned mean and (strictly positive) variance maps, shaped like l_a.
template<typename T>
struct AttributeMoments {
	Var<T> mean;
	Var<T> variance;
};

/// Broadcasts (B,1,1,n) labels over an h x w grid.
template<typename T>
Tensor<T> broadcast_labels(const Tensor<T>& labels, int side) {
	const Shape s = labels.shape();
	require(s.h == 1 && s.w == 1, "labels must be (B,1,1,n)");
	Tensor<T> out(Shape{s.n, side, side, s.c});
	for (int b = 0; b < s.n; ++b)
		for (int y = 0; y < side; ++y)
			for (int x = 0; x < side; ++x)
				for (int i = 0; i < s.c; ++i)
					out.at(b, y, x, i) = labels.at(b, 0, 0, i);
	return out;
}

template<typename T>
AttributeMoments<T> label_to_moments(const Model<T>& model, const Tensor<T>& labels) {
	const auto& cfg = model.config();
	if (labels.shape().c != cfg.num_attributes || labels.shape().h != 1 || labels.shape().w != 1)
		throw ContractError("label tensor " + labels.shape().to_string() + " does not carry "
				+ std::to_string(cfg.num_attributes) + " attributes");
	auto [mean, var] = model.dec_a.moments(constant(broadcast_labels(labels, cfg.latent_size())));
	return {mean, var};
}

template<typename T>
AttributeMoments<T> label_to_moments(const Model<T>& model, const std::vector<AttributeLabel>& labels) {
	return label_to_moments(model, label_tensor<T>(labels, model.config().num_attributes));
}

/// theta * (l_a * v + m), elementwise.
template<typename T>
Var<T> modulate(const Var<T>& attr_latent, const AttributeMoments<T>& moments, TransferControl control) {
	const Shape s = attr_latent->value.shape();
	if (moments.mean->value.shape() != s || moments.variance->value.shape() != s)
		throw ContractError("modulate: latent " + s.to_string() + " vs moments "
				+ moments.mean->value.shape().to_string() + "/" + moments.variance->value.shape().to_string());
	return scale(add(mul(attr_latent, moments.variance), moments.mean), static_cast<T>(control.theta()));
}

/// r_a = DEC_a(theta * (l_a * v_y + m_y)).
template<typename T>
Var<T> decode_attribute(const Model<T>& model, const Var<T>& attr_latent, const Tensor<T>& labels,
		TransferControl control) {
	return model.dec_a.decode(modulate(attr_latent, label_to_moments(model, labels), control));
}

/// Full edit I_v = DEC_f(DEC_a(theta * (l_a * v_v + m_v)) + DEC_b(l_b)), in
/// inference mode. `targets` is (B,1,1,n).
template<typename T>
Tensor<T> transfer(const Model<T>& model, const Tensor<T>& images, const Tensor<T>& targets, TransferControl control) {
	NoGradGuard no_grad;
	if (targets.shape().n != images.shape().n)
		throw ContractError("transfer: " + std::to_string(targets.shape().n) + " targets for "
				+ std::to_string(images.shape().n) + " images");
	const auto latent = encode(model, images, Mode::infer);
	const auto attr = decode_attribute(model, latent.attr, targets, control);
	const auto background = decode_background(model, latent);
	return decode_fuse(model, attr, background)->value;
}

template<typename T>
Tensor<T> transfer(const Model<T>& model, const Tensor<T>& images, const std::vector<AttributeLabel>& targets,
		TransferControl control) {
	return transfer(model, images, label_tensor<T>(targets, model.config().num_attributes), control);
}

} // namespace amegan

#endif // AMEGAN_MODULATION_HPP_
