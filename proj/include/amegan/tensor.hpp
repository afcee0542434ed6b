#ifndef AMEGAN_TENSOR_HPP_
#define AMEGAN_TENSOR_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"

namespace amegan {

/// NHWC extents. Every tensor in the library is rank 4; vectors and scalars
/// use unit extents.
struct Shape {
	int n = 0;
	int h = 0;
	int w = 0;
	int c = 0;

	constexpr std::size_t size() const {
		return static_cast<std::size_t>(n) * h * w * c;
	}
	constexpr std::size_t per_sample() const {
		return static_cast<std::size_t>(h) * w * c;
	}
	friend constexpr bool operator==(const Shape&, const Shape&) = default;

	std::string to_string() const {
		return "(" + std::to_string(n) + "," + std::to_string(h) + "," + std::to_string(w) + ","
				+ std::to_string(c) + ")";
	}
};

/// Allocator with 64-byte alignment. Vectorized Eigen kernels peel unaligned
/// leading elements, so a fixed alignment keeps float sums independent of
/// where the heap placed a buffer.
template<typename T>
struct AlignedAllocator {
	using value_type = T;
	static constexpr std::align_val_t alignment{64};

	AlignedAllocator() = default;
	template<typename U>
	AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

	T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
	void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

	template<typename U>
	friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept {
		return true;
	}
};

template<typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

template<typename T>
class Tensor {
public:
	using value_type = T;

	Tensor() = default;
	explicit Tensor(Shape shape, T fill = T(0)) :
			shape_(shape),
			data_(shape.size(), fill) {
		require(shape.n >= 0 && shape.h >= 0 && shape.w >= 0 && shape.c >= 0, "negative tensor extent");
	}
	Tensor(Shape shape, AlignedVector<T> data) :
			shape_(shape),
			data_(std::move(data)) {
		require(data_.size() == shape.size(), "tensor payload does not match shape " + shape.to_string());
	}
	Tensor(Shape shape, const std::vector<T>& data) :
			Tensor(shape, AlignedVector<T>(data.begin(), data.end())) {}

	const Shape& shape() const { return shape_; }
	std::size_t size() const { return data_.size(); }
	bool empty() const { return data_.empty(); }

	T* data() { return data_.data(); }
	const T* data() const { return data_.data(); }
	std::span<T> span() { return data_; }
	std::span<const T> span() const { return data_; }
	AlignedVector<T>& storage() { return data_; }
	const AlignedVector<T>& storage() const { return data_; }

	auto begin() { return data_.begin(); }
	auto end() { return data_.end(); }
	auto begin() const { return data_.begin(); }
	auto end() const { return data_.end(); }

	T& operator[](std::size_t i) { return data_[i]; }
	const T& operator[](std::size_t i) const { return data_[i]; }

	std::size_t index(int n, int y, int x, int ch) const {
		return ((static_cast<std::size_t>(n) * shape_.h + y) * shape_.w + x) * shape_.c + ch;
	}
	T& at(int n, int y, int x, int ch) { return data_[index(n, y, x, ch)]; }
	const T& at(int n, int y, int x, int ch) const { return data_[index(n, y, x, ch)]; }

	void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

	/// Same payload, new extents with equal element count.
	Tensor reshaped(Shape shape) const {
		require(shape.size() == size(), "reshape " + shape_.to_string() + " -> " + shape.to_string());
		return Tensor(shape, data_);
	}

	/// Copy of samples [begin, begin + count).
	Tensor slice_batch(int begin, int count) const {
		require(begin >= 0 && count >= 0 && begin + count <= shape_.n, "batch slice out of range");
		Shape s = shape_;
		s.n = count;
		const std::size_t per = shape_.per_sample();
		AlignedVector<T> out(data_.begin() + begin * per, data_.begin() + (begin + count) * per);
		return Tensor(s, std::move(out));
	}

	template<typename U>
	Tensor<U> cast() const {
		AlignedVector<U> out(data_.size());
		std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
		return Tensor<U>(shape_, std::move(out));
	}

	bool all_finite() const {
		return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
	}

	friend bool operator==(const Tensor& a, const Tensor& b) {
		return a.shape_ == b.shape_ && a.data_ == b.data_;
	}

private:
	Shape shape_{};
	AlignedVector<T> data_;
};

/// Stack single-sample tensors along the batch axis.
template<typename T>
Tensor<T> concat_batch(std::span<const Tensor<T>> parts) {
	require(!parts.empty(), "concat_batch of nothing");
	Shape s = parts.front().shape();
	s.n = 0;
	for (const auto& p : parts) {
		require(p.shape().h == s.h && p.shape().w == s.w && p.shape().c == s.c, "concat_batch extent mismatch");
		s.n += p.shape().n;
	}
	AlignedVector<T> data;
	data.reserve(s.size());
	for (const auto& p : parts)
		data.insert(data.end(), p.storage().begin(), p.storage().end());
	return Tensor<T>(s, std::move(data));
}

template<typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
	require(a.shape() == b.shape(), "max_abs_diff shape mismatch");
	double m = 0;
	for (std::size_t i = 0; i < a.size(); ++i)
		m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
	return m;
}

} // namespace amegan

#endif // AMEGAN_TENSOR_HPP_
