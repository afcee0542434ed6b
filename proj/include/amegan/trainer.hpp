#ifndef AMEGAN_TRAINER_HPP_
#define AMEGAN_TRAINER_HPP_

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "adam.hpp"
#include "checkpoint.hpp"
#include "losses.hpp"
#include "modulation.hpp"
#include "synthetic.hpp"

namespace amegan {

struct TrainConfig {
	ModelConfig model;
	long steps = 20000;
	int batch_size = 32;
	double learning_rate = 2e-4;
	double beta1 = 0.5;
	double beta2 = 0.999;
	LossWeights weights;
	std::uint64_t seed = 0;
	long checkpoint_interval = 1000;
	/// Training images are drawn uniformly from the first `train_pool` training seeds.
	std::uint64_t train_pool = synth::kTrainSeedEnd - synth::kTrainSeedBegin;
	double rolling_decay = 0.99;

	AdamConfig adam() const { return {learning_rate, beta1, beta2, 1e-8}; }

	void validate() const {
		model.validate();
		if (steps < 0 || batch_size < 2 || !(learning_rate > 0) || !(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1)
				|| checkpoint_interval <= 0 || train_pool == 0
				|| train_pool > synth::kTrainSeedEnd - synth::kTrainSeedBegin
				|| !(rolling_decay >= 0 && rolling_decay < 1))
			throw ConfigError("training config out of range");
		for (double w : {weights.recon, weights.adv_g, weights.adv_u, weights.adv_a, weights.cls_a})
			if (!(w >= 0))
				throw ConfigError("loss weights must be non-negative");
	}
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
	j = nlohmann::json{{"model", c.model}, {"steps", c.steps}, {"batch_size", c.batch_size},
			{"learning_rate", c.learning_rate}, {"beta1", c.beta1}, {"beta2", c.beta2}, {"weights", c.weights},
			{"seed", c.seed}, {"checkpoint_interval", c.checkpoint_interval}, {"train_pool", c.train_pool},
			{"rolling_decay", c.rolling_decay}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
	static const std::vector<std::string> known{"model", "steps", "batch_size", "learning_rate", "beta1", "beta2",
			"weights", "seed", "checkpoint_interval", "train_pool", "rolling_decay"};
	for (const auto& [key, value] : j.items())
		if (std::find(known.begin(), known.end(), key) == known.end())
			throw ConfigError("unknown training config key '" + key + "'");
	TrainConfig d;
	c.model = j.value("model", d.model);
	c.steps = j.value("steps", d.steps);
	c.batch_size = j.value("batch_size", d.batch_size);
	c.learning_rate = j.value("learning_rate", d.learning_rate);
	c.beta1 = j.value("beta1", d.beta1);
	c.beta2 = j.value("beta2", d.beta2);
	c.weights = j.value("weights", d.weights);
	c.seed = j.value("seed", d.seed);
	c.checkpoint_interval = j.value("checkpoint_interval", d.checkpoint_interval);
	c.train_pool = j.value("train_pool", d.train_pool);
	c.rolling_decay = j.value("rolling_decay", d.rolling_decay);
}

inline TrainConfig load_train_config(const std::filesystem::path& path) {
	std::ifstream f(path);
	if (!f)
		throw IoError("cannot read config " + path.string());
	try {
		TrainConfig c = nlohmann::json::parse(f).get<TrainConfig>();
		c.validate();
		return c;
	} catch (const nlohmann::json::exception& e) {
		throw ConfigError(std::string("malformed config: ") + e.what());
	}
}

/// Exponential moving averages of the loss components.
struct RollingLosses {
	LossReport discriminator;
	LossReport generator;
	bool primed = false;

	void update(const LossReport& d, const LossReport& g, double decay) {
		auto blend = [&](LossReport& acc, const LossReport& x) {
			if (!primed) {
				acc = x;
				return;
			}
			for (auto [a, v] : {std::pair{&acc.recon, x.recon}, {&acc.adv_g, x.adv_g}, {&acc.adv_u, x.adv_u},
						 {&acc.adv_a, x.adv_a}, {&acc.cls_a, x.cls_a}, {&acc.total, x.total}})
				*a = decay * *a + (1.0 - decay) * v;
		};
		blend(discriminator, d);
		blend(generator, g);
		discriminator.role = Role::discriminator_step;
		generator.role = Role::generator_step;
		primed = true;
	}
};

inline nlohmann::json report_json(const LossReport& r) {
	return {{"recon", r.recon}, {"adv_g", r.adv_g}, {"adv_u", r.adv_u}, {"adv_a", r.adv_a}, {"cls_a", r.cls_a},
			{"total", r.total}};
}

inline LossReport report_from_json(const nlohmann::json& j, Role role) {
	LossReport r;
	r.recon = j.at("recon");
	r.adv_g = j.at("adv_g");
	r.adv_u = j.at("adv_u");
	r.adv_a = j.at("adv_a");
	r.cls_a = j.at("cls_a");
	r.total = j.at("total");
	r.role = role;
	return r;
}

template<typename T>
struct TrainState {
	TrainConfig config;
	long step = 0;
	Model<T> model;
	Adam<T> d_opt;
	Adam<T> g_opt;
	Rng rng;
	RollingLosses rolling;

	explicit TrainState(const TrainConfig& cfg) :
			config(validated(cfg)),
			model(cfg.model),
			d_opt(model.discriminator_registries(), cfg.adam()),
			g_opt(model.generator_registries(), cfg.adam()),
			rng(cfg.seed) { }

private:
	static const TrainConfig& validated(const TrainConfig& cfg) {
		cfg.validate();
		return cfg;
	}
};

/// A batch of training images with their labels.
template<typename T>
struct Batch {
	Tensor<T> images; // (B,S,S,3)
	Tensor<T> labels; // (B,1,1,n)
	std::vector<std::uint64_t> seeds;
};

template<typename T>
Batch<T> render_batch(const std::vector<std::uint64_t>& seeds, int size) {
	Batch<T> b;
	b.seeds = seeds;
	std::vector<Tensor<T>> images;
	std::vector<AttributeLabel> labels;
	for (auto seed : seeds) {
		auto s = synth::render(seed, size);
		images.push_back(s.image.template cast<T>());
		labels.push_back(s.label);
	}
	b.images = concat_batch<T>(images);
	b.labels = label_tensor<T>(labels, synth::kNumAttributes);
	return b;
}

/// Draws the next training batch from the state's RNG.
template<typename T>
Batch<T> sample_batch(TrainState<T>& state) {
	std::vector<std::uint64_t> seeds(state.config.batch_size);
	for (auto& s : seeds)
		s = synth::kTrainSeedBegin + state.rng.below(state.config.train_pool);
	return render_batch<T>(seeds, state.config.model.image_size);
}

template<typename T>
Tensor<T> permute_batch(const Tensor<T>& t, const std::vector<int>& perm) {
	const std::size_t per = t.shape().per_sample();
	Tensor<T> out(t.shape());
	for (std::size_t b = 0; b < perm.size(); ++b)
		std::copy_n(t.data() + perm[b] * per, per, out.data() + b * per);
	return out;
}

struct StepReport {
	LossReport discriminator;
	LossReport generator;
};

namespace detail {

template<typename T>
double scalar(const Var<T>& v) {
	return static_cast<double>(v->value[0]);
}

template<typename T>
void set_trainable(const std::vector<ParameterRegistry<T>*>& regs, bool on) {
	for (auto* r : regs)
		r->set_trainable(on);
}

} // namespace detail

/// One discriminator update followed by one generator/encoder/decoder update.
template<typename T>
StepReport train_step(TrainState<T>& state, const Batch<T>& batch) {
	auto& model = state.model;
	const auto& w = state.config.weights;
	const long step = state.step;
	const TransferControl full(1.0);
	const int B = batch.images.shape().n;
	if (B != state.config.batch_size && B < 2)
		throw ContractError("batch needs at least two samples");

	const auto targets = permute_batch(batch.labels, state.rng.permutation(B));
	const auto x = constant(batch.images);
	const auto latent = encode(model, x, Mode::train);
	const auto background = decode_background(model, latent);
	const auto recon = decode_fuse(model, decode_attribute(model, latent.attr, batch.labels, full), background);
	const auto fake = decode_fuse(model, decode_attribute(model, latent.attr, targets, full), background);

	// Discriminator side.
	Tensor<T> prior_g(latent.attr->value.shape());
	for (auto& v : prior_g)
		v = static_cast<T>(state.rng.normal());
	Tensor<T> prior_u(latent.background->value.shape());
	for (auto& v : prior_u)
		v = static_cast<T>(state.rng.uniform_open_pm1());

	state.d_opt.zero_grad();
	const auto d_g = latent_adv_loss(discriminate_latent_gaussian(model, constant(prior_g), Mode::train),
			discriminate_latent_gaussian(model, detach(latent.attr), Mode::train), Side::discriminator);
	const auto d_u = latent_adv_loss(discriminate_latent_uniform(model, constant(prior_u), Mode::train),
			discriminate_latent_uniform(model, detach(latent.background), Mode::train), Side::discriminator);
	const auto real_critique = discriminate_image(model, x, Mode::train);
	const auto fake_critique = discriminate_image(model, detach(fake), Mode::train);
	const auto d_a = multiscale_adv_loss(&real_critique, fake_critique, Side::discriminator);
	const auto d_cls = attribute_cls_loss(real_critique.attributes, batch.labels);
	LossComponents dc;
	dc.adv_g = detail::scalar(d_g);
	dc.adv_u = detail::scalar(d_u);
	dc.adv_a = detail::scalar(d_a);
	dc.cls_a = detail::scalar(d_cls);
	StepReport report;
	report.discriminator = total_loss(dc, w, Role::discriminator_step, step);
	backward(weighted_sum<T>({d_g, d_u, d_a, d_cls},
			{static_cast<T>(w.adv_g), static_cast<T>(w.adv_u), static_cast<T>(w.adv_a), static_cast<T>(w.cls_a)}));
	state.d_opt.step();

	// Generator side, against the updated discriminators.
	const auto d_regs = model.discriminator_registries();
	detail::set_trainable(d_regs, false);
	struct Restore {
		const std::vector<ParameterRegistry<T>*>& regs;
		~Restore() { detail::set_trainable(regs, true); }
	} restore{d_regs};

	state.g_opt.zero_grad();
	const auto g_recon = recon_loss(recon, batch.images);
	const auto g_g = latent_adv_loss<T>(nullptr, discriminate_latent_gaussian(model, latent.attr, Mode::train),
			Side::generator);
	const auto g_u = latent_adv_loss<T>(nullptr, discriminate_latent_uniform(model, latent.background, Mode::train),
			Side::generator);
	const auto critique = discriminate_image(model, fake, Mode::train);
	const auto g_a = multiscale_adv_loss<T>(nullptr, critique, Side::generator);
	const auto g_cls = attribute_cls_loss(critique.attributes, targets);
	LossComponents gc;
	gc.recon = detail::scalar(g_recon);
	gc.adv_g = detail::scalar(g_g);
	gc.adv_u = detail::scalar(g_u);
	gc.adv_a = detail::scalar(g_a);
	gc.cls_a = detail::scalar(g_cls);
	report.generator = total_loss(gc, w, Role::generator_step, step);
	backward(weighted_sum<T>({g_recon, g_g, g_u, g_a, g_cls},
			{static_cast<T>(w.recon), static_cast<T>(w.adv_g), static_cast<T>(w.adv_u), static_cast<T>(w.adv_a),
					static_cast<T>(w.cls_a)}));
	state.g_opt.step();

	++state.step;
	state.rolling.update(report.discriminator, report.generator, state.config.rolling_decay);
	return report;
}

// Persistence ----------------------------------------------------------------------

template<typename T>
void save_checkpoint(const TrainState<T>& state, const std::filesystem::path& path) {
	CheckpointArchive a;
	a.config = {{"model", state.config.model}, {"train", state.config}};
	append_model(a, state.model);
	for (const auto* opt : {&state.d_opt, &state.g_opt})
		for (const auto& s : opt->slots()) {
			a.tensors.emplace_back("opt." + s.name + ".m", s.m.template cast<float>());
			a.tensors.emplace_back("opt." + s.name + ".v", s.v.template cast<float>());
		}
	a.state = {{"step", state.step}, {"rng", state.rng.serialize()}, {"d_opt_steps", state.d_opt.steps()},
			{"g_opt_steps", state.g_opt.steps()}, {"rolling_primed", state.rolling.primed},
			{"rolling_d", report_json(state.rolling.discriminator)}, {"rolling_g", report_json(state.rolling.generator)}};
	write_archive(path, a);
}

/// Restores a full training state. Inference-only checkpoints are rejected.
template<typename T>
TrainState<T> load_checkpoint(const std::filesystem::path& path) {
	const auto a = read_archive(path);
	if (!a.config.contains("train") || !a.state.contains("step"))
		throw CheckpointError(path.string() + " holds no training state");
	TrainConfig cfg;
	try {
		cfg = a.config.at("train").get<TrainConfig>();
	} catch (const std::exception& e) {
		throw CheckpointError(std::string("checkpoint training config unreadable: ") + e.what());
	}
	TrainState<T> state(cfg);
	restore_model(state.model, a, {"opt."});
	std::vector<std::pair<Tensor<T>*, const Tensor<float>*>> moments;
	std::size_t expected = 0;
	for (auto* opt : {&state.d_opt, &state.g_opt})
		for (auto& s : opt->slots()) {
			for (auto [suffix, dst] : {std::pair{".m", &s.m}, {".v", &s.v}}) {
				const auto* src = a.find("opt." + s.name + suffix);
				if (src == nullptr || src->shape() != dst->shape())
					throw CheckpointError("optimizer state for " + s.name + " missing or mis-shaped");
				moments.emplace_back(dst, src);
				++expected;
			}
		}
	std::size_t stored = 0;
	for (const auto& [name, t] : a.tensors)
		stored += name.rfind("opt.", 0) == 0;
	if (stored != expected)
		throw CheckpointError("checkpoint has unexpected optimizer tensors");
	try {
		const auto& st = a.state;
		state.step = st.at("step").get<long>();
		state.rng = Rng::deserialize(st.at("rng").get<std::string>());
		state.d_opt.set_steps(st.at("d_opt_steps").get<long>());
		state.g_opt.set_steps(st.at("g_opt_steps").get<long>());
		state.rolling.primed = st.at("rolling_primed").get<bool>();
		state.rolling.discriminator = report_from_json(st.at("rolling_d"), Role::discriminator_step);
		state.rolling.generator = report_from_json(st.at("rolling_g"), Role::generator_step);
	} catch (const nlohmann::json::exception& e) {
		throw CheckpointError(std::string("checkpoint state unreadable: ") + e.what());
	}
	for (auto [dst, src] : moments)
		*dst = src->template cast<T>();
	return state;
}

// Training loop --------------------------------------------------------------------

inline std::string csv_header() {
	return "step,d_adv_g,d_adv_u,d_adv_a,d_cls_a,d_total,g_recon,g_adv_g,g_adv_u,g_adv_a,g_cls_a,g_total,wall_seconds";
}

inline std::string csv_row(long step, const StepReport& r, double wall) {
	char buf[512];
	const auto& d = r.discriminator;
	const auto& g = r.generator;
	std::snprintf(buf, sizeof buf, "%ld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.3f", step, d.adv_g,
			d.adv_u, d.adv_a, d.cls_a, d.total, g.recon, g.adv_g, g.adv_u, g.adv_a, g.cls_a, g.total, wall);
	return buf;
}

struct TrainOptions {
	std::filesystem::path out_dir;
	/// Called after every step; returning false stops training early.
	std::function<bool(long, const StepReport&)> on_step;
};

/// Runs until `state.config.steps`, logging to out_dir/train_log.csv and
/// writing out_dir/checkpoint.ckpt every interval plus at the end.
template<typename T>
void train(TrainState<T>& state, const TrainOptions& opts) {
	namespace fs = std::filesystem;
	std::ofstream log;
	if (!opts.out_dir.empty()) {
		fs::create_directories(opts.out_dir);
		const auto log_path = opts.out_dir / "train_log.csv";
		const bool fresh = state.step == 0 || !fs::exists(log_path);
		log.open(log_path, fresh ? std::ios::trunc : std::ios::app);
		if (!log)
			throw IoError("cannot write " + log_path.string());
		if (fresh)
			log << csv_header() << '\n';
		std::ofstream(opts.out_dir / "config.json") << nlohmann::json(state.config).dump(2) << '\n';
	}
	const auto start = std::chrono::steady_clock::now();
	while (state.step < state.config.steps) {
		const auto batch = sample_batch(state);
		const auto report = train_step(state, batch);
		const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
		if (log.is_open())
			log << csv_row(state.step, report, wall) << '\n';
		const bool keep_going = !opts.on_step || opts.on_step(state.step, report);
		if (!opts.out_dir.empty() && (state.step % state.config.checkpoint_interval == 0 || !keep_going
				|| state.step == state.config.steps)) {
			log.flush();
			save_checkpoint(state, opts.out_dir / "checkpoint.ckpt");
		}
		if (!keep_going)
			break;
	}
}

} // namespace amegan

#endif // AMEGAN_TRAINER_HPP_
