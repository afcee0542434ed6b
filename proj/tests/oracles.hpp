#ifndef AMEGAN_TESTS_ORACLES_HPP_
#define AMEGAN_TESTS_ORACLES_HPP_

#include <algorithm>
#include <cmath>
#include <vector>

#include "amegan/amegan.hpp"

namespace amegan::testing {

// Long-double recomputations written straight from the loss definitions.

inline long double clipped(long double p) {
	const long double eps = 1e-8L;
	return p < eps ? eps : (p > 1 - eps ? 1 - eps : p);
}

inline long double oracle_recon(const Tensor<double>& a, const Tensor<double>& b) {
	const Shape s = a.shape();
	long double total = 0;
	for (int n = 0; n < s.n; ++n)
		for (int y = 0; y < s.h; ++y)
			for (int x = 0; x < s.w; ++x)
				for (int c = 0; c < s.c; ++c)
					total += std::fabs(static_cast<long double>(a.at(n, y, x, c)) - b.at(n, y, x, c));
	return total / s.size();
}

inline long double oracle_adv(const std::vector<double>& real, const std::vector<double>& fake, bool generator) {
	long double f = 0;
	if (generator) {
		for (double s : fake)
			f -= std::log(clipped(s));
		return f / fake.size();
	}
	long double r = 0;
	for (double s : real)
		r -= std::log(clipped(s));
	for (double s : fake)
		f -= std::log1p(-clipped(s));
	return r / real.size() + f / fake.size();
}

inline std::vector<double> oracle_aggregate(const std::vector<std::vector<double>>& d, const std::vector<double>& gamma) {
	std::vector<double> out(d.front().size());
	for (std::size_t b = 0; b < out.size(); ++b) {
		long double a = 0;
		for (std::size_t i = 0; i < d.size(); ++i)
			a += static_cast<long double>(gamma[i]) * d[i][b];
		out[b] = static_cast<double>(a);
	}
	return out;
}

inline long double oracle_cls(const Tensor<double>& pred, const Tensor<double>& y) {
	long double total = 0;
	const int n = pred.shape().c;
	for (int b = 0; b < pred.shape().n; ++b)
		for (int i = 0; i < n; ++i) {
			const long double c = clipped(pred.at(b, 0, 0, i));
			total += y.at(b, 0, 0, i) > 0.5 ? -std::log(c) : -std::log1p(-c);
		}
	return total / pred.shape().n;
}

inline double rel_error(double a, long double b) {
	return static_cast<double>(std::abs(static_cast<long double>(a) - b) / std::max<long double>(std::abs(b), 1e-300L));
}

inline std::vector<double> random_scores(Rng& rng, std::size_t n) {
	std::vector<double> v(n);
	for (auto& x : v)
		x = rng.uniform(0.0, 1.0);
	return v;
}

} // namespace amegan::testing

#endif // AMEGAN_TESTS_ORACLES_HPP_
