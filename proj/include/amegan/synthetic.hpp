#ifndef AMEGAN_SYNTHETIC_HPP_
#define AMEGAN_SYNTHETIC_HPP_

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "config.hpp"
#include "image_io.hpp"
#include "random.hpp"

namespace amegan::synth {

inline constexpr int kNumAttributes = 4;
inline constexpr const char* kGeneratorVersion = "amegan-synth-1";
inline constexpr std::array<const char*, kNumAttributes> kAttributeNames{"ring", "stripes", "glyph_hue", "frame"};

// Disjoint seed ranges: training draws from [0, 1e6), evaluation from [1e6, 2e6).
inline constexpr std::uint64_t kTrainSeedBegin = 0;
inline constexpr std::uint64_t kTrainSeedEnd = 1'000'000;
inline constexpr std::uint64_t kEvalSeedBegin = 1'000'000;
inline constexpr std::uint64_t kEvalSeedEnd = 2'000'000;

enum Attribute : int { ring = 0, stripes = 1, glyph_hue = 2, frame = 3 };

/// Pixel layout shared by the renderer and the oracle. Lengths scale with the
/// image side; the 32x32 layout is the reference.
class Layout {
public:
	explicit Layout(int size) : size_(size), unit_(size / 32.0) {
		require(size >= 16 && (size & (size - 1)) == 0, "synthetic images need a power-of-two side >= 16");
		frame_ = std::max(1, static_cast<int>(std::lround(2 * unit_)));
		glyph_radius_ = std::max(1, static_cast<int>(std::floor(3 * unit_)));
		jitter_ = std::max(1, static_cast<int>(std::lround(2 * unit_)));
		stripe_period_ = std::max(4, static_cast<int>(std::lround(4 * unit_)));
		ring_inner_ = 6.5 * unit_;
		ring_outer_ = 8.5 * unit_;
		corner_reach_ = 12.0 * unit_;
	}

	int size() const { return size_; }
	int pixels() const { return size_ * size_; }
	int jitter() const { return jitter_; }
	double center() const { return (size_ - 1) / 2.0; }

	bool in_frame(int x, int y) const {
		return x < frame_ || y < frame_ || x >= size_ - frame_ || y >= size_ - frame_;
	}
	bool in_ring(int x, int y) const {
		const double r = std::hypot(x - center(), y - center());
		return r >= ring_inner_ && r <= ring_outer_;
	}
	bool in_stripe_region(int x, int y) const {
		if (in_frame(x, y))
			return false;
		const int far = 2 * (size_ - 1);
		return x + y <= corner_reach_ || far - x - y <= corner_reach_;
	}
	/// Painted pixels inside the stripe region: "\" diagonals, half the period wide.
	bool on_stripe(int x, int y) const {
		const int phase = ((x - y) % stripe_period_ + stripe_period_) % stripe_period_;
		return in_stripe_region(x, y) && phase < stripe_period_ / 2;
	}
	/// Glyph centre for a jitter offset.
	std::pair<int, int> glyph_center(int jx, int jy) const { return {size_ / 2 + jx, size_ / 2 + jy}; }
	bool in_glyph(int x, int y, int jx, int jy) const {
		const auto [gx, gy] = glyph_center(jx, jy);
		return std::abs(x - gx) + std::abs(y - gy) <= glyph_radius_;
	}
	bool in_any_glyph(int x, int y) const {
		for (int jy = -jitter_; jy <= jitter_; ++jy)
			for (int jx = -jitter_; jx <= jitter_; ++jx)
				if (in_glyph(x, y, jx, jy))
					return true;
		return false;
	}

	/// Pixels an attribute may paint. The glyph region depends on the jitter.
	bool in_attribute_region(int attribute, int x, int y, int jx, int jy) const {
		switch (attribute) {
			case ring: return in_ring(x, y);
			case stripes: return in_stripe_region(x, y);
			case glyph_hue: return in_glyph(x, y, jx, jy);
			case frame: return in_frame(x, y);
			default: throw ContractError("unknown attribute " + std::to_string(attribute));
		}
	}

	nlohmann::json describe() const {
		return {{"ring", "white annulus, radius " + fmt(ring_inner_) + ".." + fmt(ring_outer_) + " around the centre"},
				{"stripes", "yellow '\\' stripes, period " + std::to_string(stripe_period_)
						+ ", in the two corner triangles with x+y <= " + fmt(corner_reach_) + " from the corner"},
				{"glyph_hue", "central diamond glyph of radius " + std::to_string(glyph_radius_)
						+ " rotated by 180 degrees of hue"},
				{"frame", "green border " + std::to_string(frame_) + " px wide"},
				{"background", "seeded two-colour linear gradient; glyph jitter +-" + std::to_string(jitter_) + " px"}};
	}

private:
	static std::string fmt(double v) {
		std::ostringstream os;
		os << v;
		return os.str();
	}

	int size_;
	double unit_;
	int frame_, glyph_radius_, jitter_, stripe_period_;
	double ring_inner_, ring_outer_, corner_reach_;
};

/// Seed-derived nuisance factors of one sample.
struct Background {
	std::array<double, 3> from{};
	std::array<double, 3> to{};
	double angle = 0;
	double glyph_hue = 0; // degrees, [0, 30)
	int jitter_x = 0;
	int jitter_y = 0;

	static Background from_seed(std::uint64_t seed_id, const Layout& layout) {
		Rng rng(mix64(seed_id) ^ 0xB4C7A1D2E3F40516ull);
		Background b;
		for (int c = 0; c < 3; ++c)
			b.from[c] = rng.uniform(-0.8, 0.2);
		for (int c = 0; c < 3; ++c)
			b.to[c] = rng.uniform(-0.8, 0.2);
		b.angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
		b.glyph_hue = rng.uniform(0.0, 30.0);
		const int span = 2 * layout.jitter() + 1;
		b.jitter_x = static_cast<int>(rng.below(span)) - layout.jitter();
		b.jitter_y = static_cast<int>(rng.below(span)) - layout.jitter();
		return b;
	}
};

/// Label attached to a dataset seed: four fair coin flips.
inline AttributeLabel label_for_seed(std::uint64_t seed_id) {
	Rng rng(mix64(seed_id) ^ 0x5A17C0DE00000000ull);
	return AttributeLabel::from_code(static_cast<unsigned>(rng.below(1u << kNumAttributes)), kNumAttributes);
}

struct SyntheticSample {
	Rgb8Image pixels;
	Tensor<float> image; // (1, H, W, 3) in [-1, 1]
	AttributeLabel label;
	std::vector<std::uint8_t> background_mask; // row-major, 1 where no attribute can paint
	std::uint64_t seed_id = 0;
	int jitter_x = 0;
	int jitter_y = 0;
};

/// HSV with full saturation and value; hue in degrees. Components in [0, 1].
inline std::array<double, 3> hue_to_rgb(double hue) {
	hue = std::fmod(hue, 360.0);
	if (hue < 0)
		hue += 360.0;
	const double h = hue / 60.0;
	const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
	switch (static_cast<int>(h)) {
		case 0: return {1, x, 0};
		case 1: return {x, 1, 0};
		case 2: return {0, 1, x};
		case 3: return {0, x, 1};
		case 4: return {x, 0, 1};
		default: return {1, 0, x};
	}
}

/// Deterministic render of (seed_id, label) at the given side.
inline SyntheticSample render(std::uint64_t seed_id, const AttributeLabel& label, int size = 32) {
	if (label.size() != kNumAttributes)
		throw ContractError("synthetic labels carry " + std::to_string(kNumAttributes) + " attributes, got "
				+ std::to_string(label.size()));
	const Layout layout(size);
	const Background bg = Background::from_seed(seed_id, layout);
	const double c = layout.center();
	const double reach = c * std::sqrt(2.0);
	const double ux = std::cos(bg.angle), uy = std::sin(bg.angle);
	const auto glyph01 = hue_to_rgb(bg.glyph_hue + (label[glyph_hue] ? 180.0 : 0.0));

	SyntheticSample s;
	s.seed_id = seed_id;
	s.label = label;
	s.jitter_x = bg.jitter_x;
	s.jitter_y = bg.jitter_y;
	s.pixels = Rgb8Image{size, size, std::vector<std::uint8_t>(static_cast<std::size_t>(size) * size * 3)};
	s.background_mask.assign(static_cast<std::size_t>(size) * size, 0);
	for (int y = 0; y < size; ++y)
		for (int x = 0; x < size; ++x) {
			const double t = 0.5 + ((x - c) * ux + (y - c) * uy) / (2.0 * reach);
			std::array<double, 3> rgb;
			for (int k = 0; k < 3; ++k)
				rgb[k] = bg.from[k] + (bg.to[k] - bg.from[k]) * t;
			if (layout.in_glyph(x, y, bg.jitter_x, bg.jitter_y))
				for (int k = 0; k < 3; ++k)
					rgb[k] = 2.0 * glyph01[k] - 1.0;
			if (label[ring] && layout.in_ring(x, y))
				rgb = {1.0, 1.0, 1.0};
			if (label[stripes] && layout.on_stripe(x, y))
				rgb = {1.0, 1.0, -1.0};
			if (label[frame] && layout.in_frame(x, y))
				rgb = {-1.0, 1.0, -1.0};
			const std::size_t p = static_cast<std::size_t>(y) * size + x;
			for (int k = 0; k < 3; ++k)
				s.pixels.pixels[p * 3 + k] = quantize(rgb[k]);
			bool background = true;
			for (int a = 0; a < kNumAttributes; ++a)
				background = background && !layout.in_attribute_region(a, x, y, bg.jitter_x, bg.jitter_y);
			s.background_mask[p] = background ? 1 : 0;
		}
	s.image = from_rgb8(s.pixels);
	return s;
}

/// Dataset sample: label drawn from the seed.
inline SyntheticSample render(std::uint64_t seed_id, int size = 32) {
	return render(seed_id, label_for_seed(seed_id), size);
}

struct OracleResult {
	AttributeLabel label;
	std::array<double, kNumAttributes> presence{};   // P(attribute on)
	std::array<double, kNumAttributes> confidence{}; // certainty of the decision, [0.5, 1]
	std::array<double, kNumAttributes> signature{};  // raw score, ~0 when absent, ~1 when present
	double plausibility = 0;                          // strength of the glyph, [0, 1]
};

namespace detail {

inline double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }

/// Least-squares plane a + b*x + c*y per channel over the given pixels.
inline std::array<std::array<double, 3>, 3> fit_planes(const Tensor<float>& img, int size,
		const std::vector<std::uint8_t>& use) {
	double sxx[3][3] = {};
	double sxy[3][3] = {};
	for (int y = 0; y < size; ++y)
		for (int x = 0; x < size; ++x) {
			if (!use[static_cast<std::size_t>(y) * size + x])
				continue;
			const double f[3] = {1.0, static_cast<double>(x), static_cast<double>(y)};
			for (int i = 0; i < 3; ++i) {
				for (int j = 0; j < 3; ++j)
					sxx[i][j] += f[i] * f[j];
				for (int k = 0; k < 3; ++k)
					sxy[i][k] += f[i] * img.at(0, y, x, k);
			}
		}
	// 3x3 solve by Cramer's rule.
	auto det3 = [](const double m[3][3]) {
		return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
				+ m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
	};
	const double d = det3(sxx);
	std::array<std::array<double, 3>, 3> coef{};
	for (int k = 0; k < 3; ++k)
		for (int i = 0; i < 3; ++i) {
			double m[3][3];
			for (int r = 0; r < 3; ++r)
				for (int col = 0; col < 3; ++col)
					m[r][col] = col == i ? sxy[r][k] : sxx[r][col];
			coef[k][i] = det3(m) / d;
		}
	return coef;
}

} // namespace detail

/// Analytic attribute detector. A plane fitted to the always-background pixels
/// predicts the gradient everywhere; each attribute's signature is the
/// residual over its region, normalized so a clean render scores 1.
inline OracleResult oracle_classify(const Tensor<float>& image) {
	const Shape s = image.shape();
	require(s.n == 1 && s.h == s.w && s.c == 3, "oracle_classify needs a single square RGB image");
	const int size = s.h;
	const Layout layout(size);

	std::vector<std::uint8_t> fit(static_cast<std::size_t>(size) * size, 0);
	for (int y = 0; y < size; ++y)
		for (int x = 0; x < size; ++x)
			fit[static_cast<std::size_t>(y) * size + x] = !layout.in_frame(x, y) && !layout.in_ring(x, y)
					&& !layout.in_stripe_region(x, y) && !layout.in_any_glyph(x, y);
	const auto plane = detail::fit_planes(image, size, fit);
	auto residual = [&](int x, int y, int k) {
		return image.at(0, y, x, k) - (plane[k][0] + plane[k][1] * x + plane[k][2] * y);
	};

	double ring_sum = 0, stripe_sum = 0, frame_sum = 0;
	int ring_n = 0, stripe_n = 0, frame_n = 0;
	for (int y = 0; y < size; ++y)
		for (int x = 0; x < size; ++x) {
			if (layout.in_ring(x, y)) {
				ring_sum += (residual(x, y, 0) + residual(x, y, 1) + residual(x, y, 2)) / 3.0;
				++ring_n;
			}
			if (layout.on_stripe(x, y)) {
				stripe_sum += (residual(x, y, 0) + residual(x, y, 1)) / 2.0;
				++stripe_n;
			}
			if (layout.in_frame(x, y)) {
				frame_sum += residual(x, y, 1);
				++frame_n;
			}
		}

	// Glyph: strongest residual over the jitter candidates.
	double best = -1;
	int best_jx = 0, best_jy = 0;
	for (int jy = -layout.jitter(); jy <= layout.jitter(); ++jy)
		for (int jx = -layout.jitter(); jx <= layout.jitter(); ++jx) {
			double total = 0;
			int n = 0;
			for (int y = 0; y < size; ++y)
				for (int x = 0; x < size; ++x)
					if (layout.in_glyph(x, y, jx, jy)) {
						total += std::abs(residual(x, y, 0)) + std::abs(residual(x, y, 1)) + std::abs(residual(x, y, 2));
						++n;
					}
			if (total / n > best) {
				best = total / n;
				best_jx = jx;
				best_jy = jy;
			}
		}
	double hue_sum = 0;
	int hue_n = 0;
	for (int y = 0; y < size; ++y)
		for (int x = 0; x < size; ++x)
			if (layout.in_glyph(x, y, best_jx, best_jy)) {
				hue_sum += image.at(0, y, x, 2) - image.at(0, y, x, 0);
				++hue_n;
			}

	// Clean renders put every present attribute at least 0.8 above the
	// background in its signature channel; the glyph's blue-red gap is +-2.
	OracleResult r;
	r.signature[ring] = ring_sum / ring_n / 0.8;
	r.signature[stripes] = stripe_sum / stripe_n / 0.8;
	r.signature[frame] = frame_sum / frame_n / 0.8;
	r.signature[glyph_hue] = (hue_sum / hue_n + 2.0) / 4.0;
	r.plausibility = std::clamp(best, 0.0, 1.0);
	std::vector<int> bits(kNumAttributes);
	for (int a = 0; a < kNumAttributes; ++a) {
		const double p = detail::logistic(12.0 * (r.signature[a] - 0.5));
		r.presence[a] = p;
		bits[a] = p > 0.5 ? 1 : 0;
		r.confidence[a] = 0.5 + (std::max(p, 1.0 - p) - 0.5) * r.plausibility;
	}
	r.label = AttributeLabel(std::move(bits));
	return r;
}

/// Mean absolute difference over the original's background mask. When
/// `target_attribute` is given its render region is excluded as well.
inline double background_error(const SyntheticSample& original, const Tensor<float>& transferred,
		int target_attribute = -1) {
	const Shape s = transferred.shape();
	const int size = original.pixels.width;
	require(s.n == 1 && s.h == size && s.w == size && s.c == 3, "background_error: geometry mismatch");
	const Layout layout(size);
	double total = 0;
	std::size_t count = 0;
	for (int y = 0; y < size; ++y)
		for (int x = 0; x < size; ++x) {
			if (!original.background_mask[static_cast<std::size_t>(y) * size + x])
				continue;
			if (target_attribute >= 0
					&& layout.in_attribute_region(target_attribute, x, y, original.jitter_x, original.jitter_y))
				continue;
			for (int k = 0; k < 3; ++k)
				total += std::abs(static_cast<double>(transferred.at(0, y, x, k)) - original.image.at(0, y, x, k));
			count += 3;
		}
	if (count == 0)
		throw MetricError("background mask is empty");
	return total / static_cast<double>(count);
}

// Dataset directory -----------------------------------------------------------------

struct DatasetManifest {
	std::string generator_version = kGeneratorVersion;
	int num_attributes = kNumAttributes;
	int height = 32;
	int width = 32;
	std::uint64_t count = 0;
	std::uint64_t seed = 0; // sample i has seed_id = seed + i
	nlohmann::json render_rules;

	nlohmann::json to_json() const {
		nlohmann::json names = nlohmann::json::array();
		for (const char* n : kAttributeNames)
			names.push_back(n);
		return {{"generator_version", generator_version}, {"num_attributes", num_attributes}, {"height", height},
				{"width", width}, {"count", count}, {"seed", seed}, {"attribute_names", names},
				{"render_rules", render_rules}, {"labels", "labels.csv"}, {"images", "images/<seed_id>.png"}};
	}

	static DatasetManifest from_json(const nlohmann::json& j) {
		DatasetManifest m;
		m.generator_version = j.at("generator_version").get<std::string>();
		m.num_attributes = j.at("num_attributes").get<int>();
		m.height = j.at("height").get<int>();
		m.width = j.at("width").get<int>();
		m.count = j.at("count").get<std::uint64_t>();
		m.seed = j.at("seed").get<std::uint64_t>();
		m.render_rules = j.value("render_rules", nlohmann::json::object());
		return m;
	}
};

/// Writes manifest.json, labels.csv and images/<seed_id>.png.
inline DatasetManifest write_dataset(const std::filesystem::path& dir, std::uint64_t count, std::uint64_t seed,
		int size) {
	namespace fs = std::filesystem;
	fs::create_directories(dir / "images");
	DatasetManifest m;
	m.height = m.width = size;
	m.count = count;
	m.seed = seed;
	m.render_rules = Layout(size).describe();
	std::ofstream labels(dir / "labels.csv", std::ios::trunc);
	if (!labels)
		throw IoError("cannot write " + (dir / "labels.csv").string());
	labels << "seed_id,b0,b1,b2,b3\n";
	for (std::uint64_t i = 0; i < count; ++i) {
		const auto sample = render(seed + i, size);
		write_png((dir / "images" / (std::to_string(sample.seed_id) + ".png")).string(), sample.pixels);
		labels << sample.seed_id;
		for (int b : sample.label.bits())
			labels << ',' << b;
		labels << '\n';
	}
	std::ofstream manifest(dir / "manifest.json", std::ios::trunc);
	if (!manifest)
		throw IoError("cannot write manifest");
	manifest << m.to_json().dump(2) << '\n';
	return m;
}

struct DatasetEntry {
	std::uint64_t seed_id = 0;
	AttributeLabel label;
};

struct Dataset {
	DatasetManifest manifest;
	std::vector<DatasetEntry> entries;
};

/// Reads manifest.json and labels.csv. Images are re-rendered on demand (the
/// manifest fixes them bit-exactly); `verify_images` checks the stored files.
inline Dataset read_dataset(const std::filesystem::path& dir, bool verify_images = false) {
	std::ifstream mf(dir / "manifest.json");
	if (!mf)
		throw IoError("missing " + (dir / "manifest.json").string());
	Dataset ds;
	try {
		ds.manifest = DatasetManifest::from_json(nlohmann::json::parse(mf));
	} catch (const nlohmann::json::exception& e) {
		throw IoError(std::string("malformed manifest: ") + e.what());
	}
	if (ds.manifest.generator_version != kGeneratorVersion)
		throw IoError("dataset generator version " + ds.manifest.generator_version + " unsupported");
	std::ifstream lf(dir / "labels.csv");
	if (!lf)
		throw IoError("missing labels.csv");
	std::string line;
	std::getline(lf, line);
	while (std::getline(lf, line)) {
		if (line.empty())
			continue;
		std::stringstream ss(line);
		std::string field;
		std::getline(ss, field, ',');
		DatasetEntry e;
		e.seed_id = std::stoull(field);
		std::vector<int> bits;
		while (std::getline(ss, field, ','))
			bits.push_back(std::stoi(field));
		e.label = AttributeLabel(std::move(bits));
		ds.entries.push_back(std::move(e));
	}
	if (ds.entries.size() != ds.manifest.count)
		throw IoError("labels.csv has " + std::to_string(ds.entries.size()) + " rows, manifest says "
				+ std::to_string(ds.manifest.count));
	if (verify_images)
		for (const auto& e : ds.entries) {
			const auto stored = read_png((dir / "images" / (std::to_string(e.seed_id) + ".png")).string());
			if (!(stored == render(e.seed_id, e.label, ds.manifest.width).pixels))
				throw IoError("image for seed " + std::to_string(e.seed_id) + " does not match its render");
		}
	return ds;
}

} // namespace amegan::synth

#endif // AMEGAN_SYNTHETIC_HPP_
