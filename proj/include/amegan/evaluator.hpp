#ifndef AMEGAN_EVALUATOR_HPP_
#define AMEGAN_EVALUATOR_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <filesystem>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "image_io.hpp"
#include "modulation.hpp"
#include "synthetic.hpp"

namespace amegan {

/// Anything that edits image batches and exposes its latents.
template<typename M>
concept TransferModel = requires(const M& m, const Tensor<float>& images, const std::vector<AttributeLabel>& labels,
		double theta) {
	{ m.transfer(images, labels, theta) } -> std::same_as<Tensor<float>>;
	{ m.latents(images) } -> std::same_as<std::pair<Tensor<float>, Tensor<float>>>;
};

/// Evaluation view over a trained network.
class ModelAdapter {
public:
	explicit ModelAdapter(const Model<float>& model) : model_(&model) { }

	Tensor<float> transfer(const Tensor<float>& images, const std::vector<AttributeLabel>& labels, double theta) const {
		return amegan::transfer(*model_, images, labels, TransferControl(theta));
	}
	std::pair<Tensor<float>, Tensor<float>> latents(const Tensor<float>& images) const {
		NoGradGuard no_grad;
		const auto l = encode(*model_, images, Mode::infer);
		return {l.attr->value, l.background->value};
	}

private:
	const Model<float>* model_;
};

static_assert(TransferModel<ModelAdapter>);

/// Held-out samples; seeds must come from the evaluation range.
struct EvalSet {
	std::vector<synth::SyntheticSample> samples;

	static EvalSet from_seeds(const std::vector<std::uint64_t>& seeds, int size) {
		EvalSet set;
		for (auto seed : seeds) {
			if (seed < synth::kEvalSeedBegin || seed >= synth::kEvalSeedEnd)
				throw ContractError("seed " + std::to_string(seed) + " is outside the evaluation range");
			set.samples.push_back(synth::render(seed, size));
		}
		return set;
	}
	static EvalSet range(std::uint64_t begin, std::size_t count, int size) {
		std::vector<std::uint64_t> seeds(count);
		std::iota(seeds.begin(), seeds.end(), begin);
		return from_seeds(seeds, size);
	}
	static EvalSet from_dataset(const synth::Dataset& ds) {
		std::vector<std::uint64_t> seeds;
		for (const auto& e : ds.entries)
			seeds.push_back(e.seed_id);
		return from_seeds(seeds, ds.manifest.width);
	}

	std::size_t size() const { return samples.size(); }
	void require_nonempty() const {
		if (samples.empty())
			throw MetricError("empty evaluation set");
	}
};

struct AttributeAccuracy {
	double accuracy = 0;        // target bit reached and every other bit kept
	double target_accuracy = 0; // target bit reached
	double preserved = 0;       // every other bit kept
	double background_error = 0;
};

struct LatentStats {
	double attr_mean = 0;
	double attr_variance = 0;
	double background_min = 0;
	double background_max = 0;
	std::array<double, 10> background_bins{}; // occupancy of 10 equal bins over (-1, 1)
};

struct ThetaSweep {
	std::vector<double> grid;
	std::vector<double> mean_confidence;
	std::optional<double> spearman;
};

struct EvalReport {
	std::vector<AttributeAccuracy> attributes;
	double average_accuracy = 0;
	double average_preserved = 0;
	double background_error = 0;
	double reconstruction_mae = 0;
	LatentStats latents;
	std::vector<ThetaSweep> sweeps;
	double mean_spearman = 0;
	std::size_t eval_count = 0;
	std::uint64_t first_seed = 0;
};

namespace detail {

template<typename F>
void for_chunks(std::size_t n, std::size_t chunk, F&& f) {
	for (std::size_t b = 0; b < n; b += chunk)
		f(b, std::min(chunk, n - b));
}

inline Tensor<float> stack_images(const EvalSet& set, std::size_t begin, std::size_t count) {
	std::vector<Tensor<float>> parts;
	for (std::size_t i = begin; i < begin + count; ++i)
		parts.push_back(set.samples[i].image);
	return concat_batch<float>(parts);
}

inline constexpr std::size_t kChunk = 50;

} // namespace detail

/// Flips bit j of every sample, transfers at theta = 1 and scores the output with the oracle.
template<TransferModel M>
std::vector<AttributeAccuracy> eval_transfer_accuracy(const M& model, const EvalSet& set) {
	set.require_nonempty();
	const int n = synth::kNumAttributes;
	std::vector<AttributeAccuracy> out(n);
	for (int j = 0; j < n; ++j) {
		std::size_t hit = 0, target = 0, kept = 0;
		double bg = 0;
		detail::for_chunks(set.size(), detail::kChunk, [&](std::size_t b, std::size_t count) {
			std::vector<AttributeLabel> labels;
			for (std::size_t i = b; i < b + count; ++i)
				labels.push_back(set.samples[i].label.flipped(j));
			const auto edited = model.transfer(detail::stack_images(set, b, count), labels, 1.0);
			for (std::size_t k = 0; k < count; ++k) {
				const auto img = edited.slice_batch(static_cast<int>(k), 1);
				const auto verdict = synth::oracle_classify(img);
				const bool reached = verdict.label[j] == labels[k][j];
				bool others = true;
				for (int a = 0; a < n; ++a)
					others = others && (a == j || verdict.label[a] == labels[k][a]);
				hit += reached && others;
				target += reached;
				kept += others;
				bg += synth::background_error(set.samples[b + k], img, j);
			}
		});
		const double total = static_cast<double>(set.size());
		out[j] = {hit / total, target / total, kept / total, bg / total};
	}
	return out;
}

/// Mean absolute error of theta = 1 transfers to the source label.
template<TransferModel M>
double eval_reconstruction(const M& model, const EvalSet& set) {
	set.require_nonempty();
	double total = 0;
	std::size_t count_px = 0;
	detail::for_chunks(set.size(), detail::kChunk, [&](std::size_t b, std::size_t count) {
		std::vector<AttributeLabel> labels;
		for (std::size_t i = b; i < b + count; ++i)
			labels.push_back(set.samples[i].label);
		const auto images = detail::stack_images(set, b, count);
		const auto out = model.transfer(images, labels, 1.0);
		for (std::size_t i = 0; i < out.size(); ++i)
			total += std::abs(static_cast<double>(out[i]) - images[i]);
		count_px += out.size();
	});
	return total / static_cast<double>(count_px);
}

/// Pooled statistics of raw latent elements.
inline LatentStats latent_stats(const std::vector<double>& attr, const std::vector<double>& background) {
	if (attr.size() < 2 || background.empty())
		throw MetricError("latent statistics need samples");
	LatentStats s;
	const double n = static_cast<double>(attr.size());
	s.attr_mean = std::accumulate(attr.begin(), attr.end(), 0.0) / n;
	double ss = 0;
	for (double v : attr)
		ss += (v - s.attr_mean) * (v - s.attr_mean);
	s.attr_variance = ss / n;
	s.background_min = *std::min_element(background.begin(), background.end());
	s.background_max = *std::max_element(background.begin(), background.end());
	for (double v : background) {
		const int bin = std::clamp(static_cast<int>(std::floor((v + 1.0) * 5.0)), 0, 9);
		s.background_bins[bin] += 1.0;
	}
	for (auto& b : s.background_bins)
		b /= static_cast<double>(background.size());
	return s;
}

template<TransferModel M>
LatentStats eval_latent_priors(const M& model, const EvalSet& set) {
	set.require_nonempty();
	std::vector<double> attr, background;
	detail::for_chunks(set.size(), detail::kChunk, [&](std::size_t b, std::size_t count) {
		const auto [la, lb] = model.latents(detail::stack_images(set, b, count));
		attr.insert(attr.end(), la.begin(), la.end());
		background.insert(background.end(), lb.begin(), lb.end());
	});
	return latent_stats(attr, background);
}

/// Spearman rank correlation with average ranks for ties; empty when either
/// side is constant.
inline std::optional<double> spearman(const std::vector<double>& a, const std::vector<double>& b) {
	require(a.size() == b.size() && a.size() >= 2, "spearman needs two equal-length series");
	auto ranks = [](const std::vector<double>& v) {
		std::vector<std::size_t> idx(v.size());
		std::iota(idx.begin(), idx.end(), 0);
		std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
		std::vector<double> r(v.size());
		for (std::size_t i = 0; i < idx.size();) {
			std::size_t j = i;
			while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]])
				++j;
			for (std::size_t k = i; k <= j; ++k)
				r[idx[k]] = (i + j) / 2.0 + 1.0;
			i = j + 1;
		}
		return r;
	};
	const auto ra = ranks(a), rb = ranks(b);
	const double n = static_cast<double>(a.size());
	const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
	const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
	double sab = 0, saa = 0, sbb = 0;
	for (std::size_t i = 0; i < ra.size(); ++i) {
		sab += (ra[i] - ma) * (rb[i] - mb);
		saa += (ra[i] - ma) * (ra[i] - ma);
		sbb += (rb[i] - mb) * (rb[i] - mb);
	}
	if (saa == 0 || sbb == 0)
		return std::nullopt;
	return sab / std::sqrt(saa * sbb);
}

inline const std::vector<double>& default_theta_grid() {
	static const std::vector<double> grid{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
	return grid;
}

/// For each attribute j: flip bit j, sweep theta and record the oracle's mean
/// confidence that bit j carries its target value.
template<TransferModel M>
std::vector<ThetaSweep> eval_theta_sweep(const M& model, const EvalSet& set,
		const std::vector<double>& grid = default_theta_grid()) {
	set.require_nonempty();
	std::vector<ThetaSweep> out;
	for (int j = 0; j < synth::kNumAttributes; ++j) {
		ThetaSweep sweep;
		sweep.grid = grid;
		for (double theta : grid) {
			double total = 0;
			detail::for_chunks(set.size(), detail::kChunk, [&](std::size_t b, std::size_t count) {
				std::vector<AttributeLabel> labels;
				for (std::size_t i = b; i < b + count; ++i)
					labels.push_back(set.samples[i].label.flipped(j));
				const auto edited = model.transfer(detail::stack_images(set, b, count), labels, theta);
				for (std::size_t k = 0; k < count; ++k) {
					const auto verdict = synth::oracle_classify(edited.slice_batch(static_cast<int>(k), 1));
					const double p = verdict.presence[j];
					total += labels[k][j] ? p : 1.0 - p;
				}
			});
			sweep.mean_confidence.push_back(total / static_cast<double>(set.size()));
		}
		sweep.spearman = spearman(sweep.grid, sweep.mean_confidence);
		out.push_back(std::move(sweep));
	}
	return out;
}

/// Every metric on one evaluation set. An undefined rank correlation counts as 0 in the mean.
template<TransferModel M>
EvalReport evaluate(const M& model, const EvalSet& set) {
	set.require_nonempty();
	EvalReport r;
	r.eval_count = set.size();
	r.first_seed = set.samples.front().seed_id;
	r.attributes = eval_transfer_accuracy(model, set);
	for (const auto& a : r.attributes) {
		r.average_accuracy += a.accuracy / r.attributes.size();
		r.average_preserved += a.preserved / r.attributes.size();
		r.background_error += a.background_error / r.attributes.size();
	}
	r.reconstruction_mae = eval_reconstruction(model, set);
	r.latents = eval_latent_priors(model, set);
	r.sweeps = eval_theta_sweep(model, set);
	for (const auto& s : r.sweeps)
		r.mean_spearman += s.spearman.value_or(0.0) / r.sweeps.size();
	return r;
}

inline nlohmann::json to_json(const EvalReport& r) {
	nlohmann::json attrs = nlohmann::json::array();
	for (std::size_t j = 0; j < r.attributes.size(); ++j) {
		const auto& a = r.attributes[j];
		attrs.push_back({{"name", synth::kAttributeNames[j]}, {"accuracy", a.accuracy},
				{"target_accuracy", a.target_accuracy}, {"preserved", a.preserved},
				{"background_error", a.background_error}});
	}
	nlohmann::json sweeps = nlohmann::json::array();
	for (std::size_t j = 0; j < r.sweeps.size(); ++j) {
		const auto& s = r.sweeps[j];
		sweeps.push_back({{"name", synth::kAttributeNames[j]}, {"theta", s.grid}, {"mean_confidence", s.mean_confidence},
				{"spearman", s.spearman ? nlohmann::json(*s.spearman) : nlohmann::json(nullptr)}});
	}
	return {{"eval_count", r.eval_count}, {"first_seed", r.first_seed}, {"attributes", attrs},
			{"average_accuracy", r.average_accuracy}, {"average_preserved", r.average_preserved},
			{"background_error", r.background_error}, {"reconstruction_mae", r.reconstruction_mae},
			{"latents", {{"attr_mean", r.latents.attr_mean}, {"attr_variance", r.latents.attr_variance},
					{"background_min", r.latents.background_min}, {"background_max", r.latents.background_max},
					{"background_bins", r.latents.background_bins}}},
			{"theta_sweeps", sweeps}, {"mean_spearman", r.mean_spearman}};
}

/// Per-attribute grid: one row per sample with source, the theta sweep and the
/// clean render of the target label. Cells are separated by a 2-pixel gutter.
template<TransferModel M>
Rgb8Image theta_grid_image(const M& model, const EvalSet& set, int attribute, std::size_t rows,
		const std::vector<double>& grid = default_theta_grid()) {
	set.require_nonempty();
	rows = std::min(rows, set.size());
	const int size = set.samples.front().pixels.width;
	const int gutter = 2;
	const int cols = static_cast<int>(grid.size()) + 2;
	Rgb8Image img{cols * (size + gutter) - gutter, static_cast<int>(rows) * (size + gutter) - gutter, {}};
	img.pixels.assign(static_cast<std::size_t>(img.width) * img.height * 3, 255);
	auto blit = [&](const Rgb8Image& cell, int col, int row) {
		for (int y = 0; y < size; ++y)
			for (int x = 0; x < size; ++x)
				for (int k = 0; k < 3; ++k)
					img.pixels[((static_cast<std::size_t>(row) * (size + gutter) + y) * img.width + col * (size + gutter) + x)
							* 3 + k] = cell.pixels[(static_cast<std::size_t>(y) * size + x) * 3 + k];
	};
	for (std::size_t r = 0; r < rows; ++r) {
		const auto& s = set.samples[r];
		const auto target = s.label.flipped(attribute);
		blit(s.pixels, 0, static_cast<int>(r));
		for (std::size_t t = 0; t < grid.size(); ++t)
			blit(to_rgb8(model.transfer(s.image, {target}, grid[t])), static_cast<int>(t) + 1, static_cast<int>(r));
		blit(synth::render(s.seed_id, target, size).pixels, cols - 1, static_cast<int>(r));
	}
	return img;
}

} // namespace amegan

#endif // AMEGAN_EVALUATOR_HPP_
