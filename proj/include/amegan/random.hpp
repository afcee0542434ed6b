#ifndef AMEGAN_RANDOM_HPP_
#define AMEGAN_RANDOM_HPP_

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"

namespace amegan {

/// splitmix64 finalizer; used to derive independent stream seeds from ids.
constexpr std::uint64_t mix64(std::uint64_t x) {
	x += 0x9E3779B97F4A7C15ull;
	x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
	x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
	return x ^ (x >> 31);
}

/// Seeded generator with distribution code written out explicitly. The standard
/// distributions are implementation-defined, which would break bit-exact
/// regeneration across standard libraries.
class Rng {
public:
	explicit Rng(std::uint64_t seed = 0) : engine_(mix64(seed)) { }

	std::uint64_t bits() { return engine_(); }

	/// Uniform on [0, 1) with 53 random bits.
	double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

	double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

	/// Uniform on the open interval (-1, 1).
	double uniform_open_pm1() {
		double u;
		do {
			u = 2.0 * uniform() - 1.0;
		} while (u == -1.0);
		return u;
	}

	/// Uniform integer on [0, n).
	std::uint64_t below(std::uint64_t n) {
		require(n > 0, "Rng::below(0)");
		const std::uint64_t limit = ~std::uint64_t(0) - (~std::uint64_t(0) % n);
		std::uint64_t r;
		do {
			r = engine_();
		} while (r >= limit);
		return r % n;
	}

	/// Standard normal via Box-Muller; the second deviate is cached.
	double normal() {
		if (has_spare_) {
			has_spare_ = false;
			return spare_;
		}
		double u1;
		do {
			u1 = uniform();
		} while (u1 <= 0.0);
		const double u2 = uniform();
		const double r = std::sqrt(-2.0 * std::log(u1));
		spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
		has_spare_ = true;
		return r * std::cos(2.0 * std::numbers::pi * u2);
	}

	/// Fisher-Yates permutation of [0, n).
	std::vector<int> permutation(int n) {
		std::vector<int> p(n);
		for (int i = 0; i < n; ++i)
			p[i] = i;
		for (int i = n - 1; i > 0; --i)
			std::swap(p[i], p[below(static_cast<std::uint64_t>(i) + 1)]);
		return p;
	}

	std::string serialize() const {
		std::ostringstream os;
		os << engine_ << ' ' << (has_spare_ ? 1 : 0) << ' ';
		os.precision(17);
		os << std::hexfloat << spare_;
		return os.str();
	}

	static Rng deserialize(const std::string& text) {
		Rng rng;
		std::istringstream is(text);
		int spare_flag = 0;
		std::string spare_text;
		is >> rng.engine_ >> spare_flag >> spare_text;
		if (!is && !is.eof())
			throw ContractError("malformed RNG state");
		rng.has_spare_ = spare_flag != 0;
		rng.spare_ = std::strtod(spare_text.c_str(), nullptr);
		return rng;
	}

	friend bool operator==(const Rng& a, const Rng& b) {
		return a.engine_ == b.engine_ && a.has_spare_ == b.has_spare_ && a.spare_ == b.spare_;
	}

private:
	std::mt19937_64 engine_;
	bool has_spare_ = false;
	double spare_ = 0.0;
};

} // namespace amegan

#endif // AMEGAN_RANDOM_HPP_
