#ifndef AMEGAN_IMAGE_IO_HPP_
#define AMEGAN_IMAGE_IO_HPP_

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace amegan {

/// 8-bit interleaved RGB.
struct Rgb8Image {
	int width = 0;
	int height = 0;
	std::vector<std::uint8_t> pixels;
	friend bool operator==(const Rgb8Image&, const Rgb8Image&) = default;
};

inline std::uint8_t quantize(double v) {
	const double q = std::round((std::clamp(v, -1.0, 1.0) + 1.0) * 127.5);
	return static_cast<std::uint8_t>(q);
}

inline float dequantize(std::uint8_t q) { return static_cast<float>(q / 127.5 - 1.0); }

/// Sample `index` of an NHWC batch to 8-bit.
template<typename T>
Rgb8Image to_rgb8(const Tensor<T>& batch, int index = 0) {
	const Shape s = batch.shape();
	require(s.c == 3 && index >= 0 && index < s.n, "to_rgb8 needs an RGB sample");
	Rgb8Image img{s.w, s.h, std::vector<std::uint8_t>(s.per_sample())};
	const std::size_t base = index * s.per_sample();
	for (std::size_t i = 0; i < s.per_sample(); ++i)
		img.pixels[i] = quantize(batch[base + i]);
	return img;
}

inline Tensor<float> from_rgb8(const Rgb8Image& img) {
	Tensor<float> t(Shape{1, img.height, img.width, 3});
	for (std::size_t i = 0; i < img.pixels.size(); ++i)
		t[i] = dequantize(img.pixels[i]);
	return t;
}

inline std::vector<std::uint8_t> encode_png(const Rgb8Image& img) {
	png_image image{};
	image.version = PNG_IMAGE_VERSION;
	image.width = static_cast<png_uint_32>(img.width);
	image.height = static_cast<png_uint_32>(img.height);
	image.format = PNG_FORMAT_RGB;
	png_alloc_size_t size = 0;
	if (!png_image_write_to_memory(&image, nullptr, &size, 0, img.pixels.data(), 0, nullptr))
		throw IoError(std::string("png encode: ") + image.message);
	std::vector<std::uint8_t> out(size);
	if (!png_image_write_to_memory(&image, out.data(), &size, 0, img.pixels.data(), 0, nullptr))
		throw IoError(std::string("png encode: ") + image.message);
	out.resize(size);
	return out;
}

inline Rgb8Image decode_png(const std::vector<std::uint8_t>& bytes) {
	png_image image{};
	image.version = PNG_IMAGE_VERSION;
	if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
		throw IoError(std::string("png decode: ") + image.message);
	image.format = PNG_FORMAT_RGB;
	Rgb8Image img{static_cast<int>(image.width), static_cast<int>(image.height),
			std::vector<std::uint8_t>(PNG_IMAGE_SIZE(image))};
	if (!png_image_finish_read(&image, nullptr, img.pixels.data(), 0, nullptr)) {
		png_image_free(&image);
		throw IoError(std::string("png decode: ") + image.message);
	}
	return img;
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
	std::ifstream in(path, std::ios::binary);
	if (!in)
		throw IoError("cannot open " + path);
	return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
	std::ofstream out(path, std::ios::binary | std::ios::trunc);
	if (!out)
		throw IoError("cannot write " + path);
	out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
	if (!out)
		throw IoError("short write to " + path);
}

inline void write_png(const std::string& path, const Rgb8Image& img) { write_file(path, encode_png(img)); }
inline Rgb8Image read_png(const std::string& path) { return decode_png(read_file(path)); }

inline std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
	static constexpr char table[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
	std::string out;
	out.reserve((bytes.size() + 2) / 3 * 4);
	std::size_t i = 0;
	for (; i + 2 < bytes.size(); i += 3) {
		const unsigned v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
		out += {table[v >> 18], table[(v >> 12) & 63], table[(v >> 6) & 63], table[v & 63]};
	}
	if (i + 1 == bytes.size()) {
		const unsigned v = bytes[i] << 16;
		out += {table[v >> 18], table[(v >> 12) & 63], '=', '='};
	} else if (i + 2 == bytes.size()) {
		const unsigned v = (bytes[i] << 16) | (bytes[i + 1] << 8);
		out += {table[v >> 18], table[(v >> 12) & 63], table[(v >> 6) & 63], '='};
	}
	return out;
}

inline std::vector<std::uint8_t> base64_decode(const std::string& text) {
	auto value = [](char ch) -> int {
		if (ch >= 'A' && ch <= 'Z') return ch - 'A';
		if (ch >= 'a' && ch <= 'z') return ch - 'a' + 26;
		if (ch >= '0' && ch <= '9') return ch - '0' + 52;
		if (ch == '+') return 62;
		if (ch == '/') return 63;
		return -1;
	};
	std::vector<std::uint8_t> out;
	unsigned acc = 0;
	int bits = 0;
	for (char ch : text) {
		if (ch == '=')
			break;
		const int v = value(ch);
		if (v < 0)
			throw ContractError("invalid base64 input");
		acc = (acc << 6) | static_cast<unsigned>(v);
		bits += 6;
		if (bits >= 8) {
			bits -= 8;
			out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xFF));
		}
	}
	return out;
}

} // namespace amegan

#endif // AMEGAN_IMAGE_IO_HPP_
