#ifndef AMEGAN_CONV_HPP_
#define AMEGAN_CONV_HPP_

#include <Eigen/Core>

#include <cstring>

#include "autograd.hpp"

namespace amegan {

/// Square kernel geometry shared by convolution and its transpose.
struct ConvGeometry {
	int kernel = 4;
	int stride = 2;
	int pad = 1;

	int conv_out(int in) const { return (in + 2 * pad - kernel) / stride + 1; }
	int transpose_out(int in) const { return (in - 1) * stride - 2 * pad + kernel; }
	friend bool operator==(const ConvGeometry&, const ConvGeometry&) = default;
};

namespace detail {

template<typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template<typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template<typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

/// Visits every (patch row, kernel tap) pair of a convolution over `image`
/// (spatial extents `ih` x `iw`) producing `oh` x `ow` patches. The callback gets
/// the offset of the patch row's tap block and the image pixel index, or -1
/// when the tap falls into padding.
template<typename F>
void for_each_tap(int batch, int ih, int iw, int oh, int ow, const ConvGeometry& g, F&& visit) {
	std::size_t row = 0;
	for (int n = 0; n < batch; ++n)
		for (int oy = 0; oy < oh; ++oy)
			for (int ox = 0; ox < ow; ++ox, ++row)
				for (int ky = 0; ky < g.kernel; ++ky) {
					const int y = oy * g.stride - g.pad + ky;
					for (int kx = 0; kx < g.kernel; ++kx) {
						const int x = ox * g.stride - g.pad + kx;
						const int tap = ky * g.kernel + kx;
						const bool inside = y >= 0 && y < ih && x >= 0 && x < iw;
						const long pixel = inside ? (static_cast<long>(n) * ih + y) * iw + x : -1;
						visit(row, tap, pixel);
					}
				}
}

/// Gathers image channels into a (patches, kernel*kernel*channels) matrix.
template<typename T>
RowMatrix<T> im2col(const T* image, int batch, int ih, int iw, int channels, int oh, int ow, const ConvGeometry& g) {
	const int taps = g.kernel * g.kernel;
	RowMatrix<T> cols(static_cast<Eigen::Index>(batch) * oh * ow, taps * channels);
	T* out = cols.data();
	for_each_tap(batch, ih, iw, oh, ow, g, [&](std::size_t row, int tap, long pixel) {
		T* dst = out + (row * taps + tap) * channels;
		if (pixel < 0)
			std::memset(dst, 0, sizeof(T) * channels);
		else
			std::memcpy(dst, image + pixel * channels, sizeof(T) * channels);
	});
	return cols;
}

/// Scatter-add inverse of im2col.
template<typename T>
void col2im(const RowMatrix<T>& cols, T* image, int batch, int ih, int iw, int channels, int oh, int ow,
		const ConvGeometry& g) {
	const int taps = g.kernel * g.kernel;
	const T* in = cols.data();
	for_each_tap(batch, ih, iw, oh, ow, g, [&](std::size_t row, int tap, long pixel) {
		if (pixel < 0)
			return;
		const T* src = in + (row * taps + tap) * channels;
		T* dst = image + pixel * channels;
		for (int c = 0; c < channels; ++c)
			dst[c] += src[c];
	});
}

} // namespace detail

/// 2-D convolution, NHWC. `weight` has shape (k, k, Cin, Cout), `bias`
/// (1,1,1,Cout) or null.
template<typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, ConvGeometry g) {
	const Shape in = x->value.shape();
	const Shape ws = weight->value.shape();
	require(ws.n == g.kernel && ws.h == g.kernel && ws.w == in.c,
			"conv2d: weight " + ws.to_string() + " incompatible with input " + in.to_string());
	const int cout = ws.c;
	const int oh = g.conv_out(in.h);
	const int ow = g.conv_out(in.w);
	require(oh > 0 && ow > 0, "conv2d: empty output for input " + in.to_string());
	const int k = g.kernel * g.kernel * in.c;

	auto cols = std::make_shared<detail::RowMatrix<T>>(
			detail::im2col(x->value.data(), in.n, in.h, in.w, in.c, oh, ow, g));
	Tensor<T> out(Shape{in.n, oh, ow, cout});
	detail::MatrixMap<T> y(out.data(), cols->rows(), cout);
	detail::ConstMatrixMap<T> w(weight->value.data(), k, cout);
	y.noalias() = *cols * w;
	std::vector<Var<T>> parents{x, weight};
	if (bias) {
		y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias->value.data(), cout);
		parents.push_back(bias);
	}

	return make_result<T>(std::move(out), std::move(parents), [cols, in, g, oh, ow, k, cout](Node<T>& self) {
		detail::ConstMatrixMap<T> dy(self.grad.data(), cols->rows(), cout);
		auto& px = *self.parents[0];
		auto& pw = *self.parents[1];
		if (pw.requires_grad) {
			detail::MatrixMap<T> dw(pw.grad_buffer().data(), k, cout);
			dw.noalias() += cols->transpose() * dy;
		}
		if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
			Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> db(self.parents[2]->grad_buffer().data(), cout);
			db += dy.colwise().sum();
		}
		if (px.requires_grad) {
			detail::ConstMatrixMap<T> w(pw.value.data(), k, cout);
			detail::RowMatrix<T> dcols = dy * w.transpose();
			detail::col2im(dcols, px.grad_buffer().data(), in.n, in.h, in.w, in.c, oh, ow, g);
		}
	});
}

/// Transposed convolution (fractionally strided), NHWC. `weight` has shape
/// (Cin, k, k, Cout), `bias` (1,1,1,Cout) or null. Output extent is (in-1)*s - 2p + k.
template<typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, ConvGeometry g) {
	const Shape in = x->value.shape();
	const Shape ws = weight->value.shape();
	require(ws.n == in.c && ws.h == g.kernel && ws.w == g.kernel,
			"conv_transpose2d: weight " + ws.to_string() + " incompatible with input " + in.to_string());
	const int cout = ws.c;
	const int oh = g.transpose_out(in.h);
	const int ow = g.transpose_out(in.w);
	require(oh > 0 && ow > 0, "conv_transpose2d: empty output for input " + in.to_string());
	const int taps_out = g.kernel * g.kernel * cout;
	const Eigen::Index rows = static_cast<Eigen::Index>(in.n) * in.h * in.w;

	// Each input pixel spreads a k*k*Cout block; the block layout coincides with
	// an im2col of the output taken with the same geometry.
	detail::ConstMatrixMap<T> xin(x->value.data(), rows, in.c);
	detail::ConstMatrixMap<T> w(weight->value.data(), in.c, taps_out);
	detail::RowMatrix<T> cols = xin * w;
	Tensor<T> out(Shape{in.n, oh, ow, cout});
	detail::col2im(cols, out.data(), in.n, oh, ow, cout, in.h, in.w, g);
	std::vector<Var<T>> parents{x, weight};
	if (bias) {
		detail::MatrixMap<T> y(out.data(), static_cast<Eigen::Index>(in.n) * oh * ow, cout);
		y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias->value.data(), cout);
		parents.push_back(bias);
	}

	return make_result<T>(std::move(out), std::move(parents), [in, g, oh, ow, cout, taps_out, rows](Node<T>& self) {
		auto& px = *self.parents[0];
		auto& pw = *self.parents[1];
		if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
			detail::ConstMatrixMap<T> dy(self.grad.data(), static_cast<Eigen::Index>(in.n) * oh * ow, cout);
			Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> db(self.parents[2]->grad_buffer().data(), cout);
			db += dy.colwise().sum();
		}
		if (!px.requires_grad && !pw.requires_grad)
			return;
		detail::RowMatrix<T> dcols = detail::im2col(self.grad.data(), in.n, oh, ow, cout, in.h, in.w, g);
		if (pw.requires_grad) {
			detail::ConstMatrixMap<T> xin(px.value.data(), rows, in.c);
			detail::MatrixMap<T> dw(pw.grad_buffer().data(), in.c, taps_out);
			dw.noalias() += xin.transpose() * dcols;
		}
		if (px.requires_grad) {
			detail::ConstMatrixMap<T> w(pw.value.data(), in.c, taps_out);
			detail::MatrixMap<T> dx(px.grad_buffer().data(), rows, in.c);
			dx.noalias() += dcols * w.transpose();
		}
	});
}

/// Fully connected layer on flattened samples. `weight` (1,1,F,Out), `bias` (1,1,1,Out).
template<typename T>
Var<T> dense(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
	const Shape s = x->value.shape();
	const int features = s.h * s.w * s.c;
	require(weight->value.shape().w == features, "dense: weight " + weight->value.shape().to_string()
			+ " incompatible with input " + s.to_string());
	return conv2d(flatten(x), weight, bias, ConvGeometry{1, 1, 0});
}

} // namespace amegan

#endif // AMEGAN_CONV_HPP_
