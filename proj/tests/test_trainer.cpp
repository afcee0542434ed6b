#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "support.hpp"

using namespace amegan;
using amegan::testing::tiny_train_config;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
	auto p = std::filesystem::temp_directory_path() / ("amegan_" + std::to_string(::getpid()) + "_" + name);
	std::filesystem::remove_all(p);
	return p;
}

std::vector<StepReport> run(TrainState<float>& state, int steps) {
	std::vector<StepReport> out;
	for (int i = 0; i < steps; ++i)
		out.push_back(train_step(state, sample_batch(state)));
	return out;
}

bool same_reports(const std::vector<StepReport>& a, const std::vector<StepReport>& b) {
	if (a.size() != b.size())
		return false;
	for (std::size_t i = 0; i < a.size(); ++i)
		if (csv_row(0, a[i], 0) != csv_row(0, b[i], 0))
			return false;
	return true;
}

} // namespace

TEST(Adam, MatchesHandWrittenUpdate) {
	ParameterRegistry<double> reg{"p."};
	auto w = reg.add("w", Tensor<double>(Shape{1, 1, 1, 3}));
	const std::array<long double, 3> target{1.5L, -2.0L, 0.25L};
	std::array<long double, 3> x{}, m{}, v{};
	Adam<double> opt({&reg}, {0.1, 0.5, 0.999, 1e-8});
	for (int t = 1; t <= 25; ++t) {
		opt.zero_grad();
		Tensor<double> g_target(Shape{1, 1, 1, 3});
		for (int i = 0; i < 3; ++i)
			g_target[i] = -static_cast<double>(target[i]);
		const auto d = add(w, constant(g_target));
		backward(sum(mul(d, d)));
		opt.step();
		for (int i = 0; i < 3; ++i) {
			const long double g = 2 * (x[i] - target[i]);
			m[i] = 0.5L * m[i] + 0.5L * g;
			v[i] = 0.999L * v[i] + 0.001L * g * g;
			const long double mh = m[i] / (1 - std::pow(0.5L, t));
			const long double vh = v[i] / (1 - std::pow(0.999L, t));
			x[i] -= 0.1L * mh / (std::sqrt(vh) + 1e-8L);
			EXPECT_NEAR(w->value[i], static_cast<double>(x[i]), 1e-9) << t;
		}
	}
}

TEST(Adam, FrozenParametersDoNotMove) {
	ParameterRegistry<double> reg{"p."};
	auto w = reg.add("w", Tensor<double>(Shape{1, 1, 1, 2}));
	Adam<double> opt({&reg}, {});
	reg.set_trainable(false);
	opt.zero_grad();
	backward(sum(mul(w, w)));
	opt.step();
	EXPECT_EQ(w->value[0], 0.0);
}

TEST(Trainer, ConfigParsingRejectsUnknownKeys) {
	EXPECT_THROW(nlohmann::json({{"stepz", 3}}).get<TrainConfig>(), ConfigError);
	const auto c = nlohmann::json({{"steps", 3}, {"weights", {{"recon", 5.0}}}}).get<TrainConfig>();
	EXPECT_EQ(c.steps, 3);
	EXPECT_EQ(c.weights.recon, 5.0);
	EXPECT_EQ(c.weights.cls_a, 1.0);
	auto bad = tiny_train_config();
	bad.batch_size = 1;
	EXPECT_THROW(bad.validate(), ConfigError);
	EXPECT_EQ(nlohmann::json(tiny_train_config()).get<TrainConfig>().model, tiny_train_config().model);
}

TEST(Trainer, StepsAreDeterministic) {
	TrainState<float> a(tiny_train_config()), b(tiny_train_config());
	EXPECT_TRUE(same_reports(run(a, 5), run(b, 5)));
	const auto pa = a.model.parameters(), pb = b.model.parameters();
	for (std::size_t i = 0; i < pa.size(); ++i)
		EXPECT_EQ(pa[i].var->value, pb[i].var->value);
}

TEST(Trainer, DifferentSeedsGiveDifferentTrajectories) {
	auto cfg = tiny_train_config();
	TrainState<float> a(cfg);
	cfg.seed = 8;
	TrainState<float> b(cfg);
	EXPECT_FALSE(same_reports(run(a, 2), run(b, 2)));
}

TEST(Trainer, EveryNetworkReceivesUpdates) {
	TrainState<float> state(tiny_train_config());
	std::vector<Tensor<float>> before;
	for (const auto& p : state.model.parameters())
		before.push_back(p.var->value);
	const auto reports = run(state, 2);
	std::map<std::string, bool> moved;
	const auto params = state.model.parameters();
	for (std::size_t i = 0; i < params.size(); ++i) {
		const auto prefix = params[i].name.substr(0, params[i].name.find('.'));
		moved[prefix] = moved[prefix] || !(params[i].var->value == before[i]);
	}
	for (const char* net : {"enc", "dec_a", "dec_b", "dec_f", "d_g", "d_u", "d_a"})
		EXPECT_TRUE(moved[net]) << net;
	for (const auto& r : reports) {
		EXPECT_EQ(r.discriminator.recon, 0.0);
		EXPECT_GT(r.generator.recon, 0.0);
		EXPECT_TRUE(std::isfinite(r.generator.total));
	}
}

TEST(Trainer, ReconstructionImprovesOnAFixedBatch) {
	auto cfg = tiny_train_config();
	cfg.model.init_std = 0.02;
	cfg.learning_rate = 1e-3;
	cfg.weights = {1.0, 0.0, 0.0, 0.0, 0.0};
	TrainState<float> state(cfg);
	const auto batch = render_batch<float>({1, 2, 3, 4}, 16);
	const double first = train_step(state, batch).generator.recon;
	double last = first;
	for (int i = 0; i < 100; ++i)
		last = train_step(state, batch).generator.recon;
	EXPECT_LT(last, 0.7 * first);
}

TEST(Trainer, DivergenceNamesComponentAndStep) {
	TrainState<float> state(tiny_train_config());
	run(state, 2);
	state.model.dec_f.registry.parameters().back().var->value[0] = std::numeric_limits<float>::quiet_NaN();
	try {
		run(state, 1);
		FAIL() << "expected DivergenceError";
	} catch (const DivergenceError& e) {
		EXPECT_EQ(e.step(), 2);
		EXPECT_FALSE(e.component().empty());
	}
}

TEST(Trainer, ResumeContinuesTheSameTrajectory) {
	const auto dir = temp_dir("resume");
	auto cfg = tiny_train_config(6);
	cfg.checkpoint_interval = 3;
	TrainState<float> straight(cfg);
	const auto reference = run(straight, 6);

	TrainState<float> first(cfg);
	train(first, {dir, [](long step, const StepReport&) { return step < 3; }});
	ASSERT_EQ(first.step, 3);
	auto resumed = load_checkpoint<float>(dir / "checkpoint.ckpt");
	const auto tail = run(resumed, 3);
	EXPECT_TRUE(same_reports(tail, std::vector<StepReport>(reference.begin() + 3, reference.end())));
	const auto pa = straight.model.parameters(), pb = resumed.model.parameters();
	for (std::size_t i = 0; i < pa.size(); ++i)
		EXPECT_EQ(pa[i].var->value, pb[i].var->value);
	std::filesystem::remove_all(dir);
}

TEST(Trainer, TrainWritesLogConfigAndCheckpoint) {
	const auto dir = temp_dir("train");
	TrainState<float> state(tiny_train_config(4));
	train(state, {dir, {}});
	EXPECT_EQ(state.step, 4);
	std::ifstream log(dir / "train_log.csv");
	std::string line;
	int rows = -1;
	while (std::getline(log, line))
		++rows;
	EXPECT_EQ(rows, 4);
	EXPECT_TRUE(std::filesystem::exists(dir / "config.json"));
	EXPECT_EQ(load_checkpoint<float>(dir / "checkpoint.ckpt").step, 4);
	std::filesystem::remove_all(dir);
}

TEST(Trainer, BatchesComeFromTheTrainingPool) {
	auto cfg = tiny_train_config();
	cfg.train_pool = 10;
	TrainState<float> state(cfg);
	for (int i = 0; i < 5; ++i)
		for (auto s : sample_batch(state).seeds)
			EXPECT_LT(s, 10u);
	const auto perm = std::vector<int>{2, 0, 1};
	Tensor<float> t(Shape{3, 1, 1, 2});
	for (std::size_t i = 0; i < t.size(); ++i)
		t[i] = static_cast<float>(i);
	const auto p = permute_batch(t, perm);
	EXPECT_EQ(p.at(0, 0, 0, 0), 4.f);
	EXPECT_EQ(p.at(1, 0, 0, 1), 1.f);
}

TEST(Trainer, AppliedUpdateEqualsIndependentAdamArithmetic) {
	TrainState<double> state(tiny_train_config());
	train_step(state, sample_batch(state));
	struct Snapshot {
		Tensor<double> value, m, v;
	};
	std::vector<Snapshot> before;
	for (const auto* opt : {&state.d_opt, &state.g_opt})
		for (const auto& s : opt->slots())
			before.push_back({s.param->value, s.m, s.v});
	train_step(state, sample_batch(state));
	const long double lr = 2e-4L, b1 = 0.5L, b2 = 0.999L;
	std::size_t k = 0;
	double worst = 0;
	for (const auto* opt : {&state.d_opt, &state.g_opt}) {
		ASSERT_EQ(opt->steps(), 2);
		for (const auto& s : opt->slots()) {
			const auto& snap = before[k++];
			for (std::size_t i = 0; i < snap.value.size(); ++i) {
				const long double g = s.param->grad.empty() ? 0.0L : s.param->grad[i];
				const long double m = b1 * snap.m[i] + (1 - b1) * g;
				const long double v = b2 * snap.v[i] + (1 - b2) * g * g;
				const long double update = lr * (m / (1 - b1 * b1)) / (std::sqrt(v / (1 - b2 * b2)) + 1e-8L);
				const long double expected = snap.value[i] - update;
				worst = std::max(worst, static_cast<double>(std::abs(expected - s.param->value[i])));
			}
		}
	}
	EXPECT_LT(worst, 1e-12);
}

TEST(Trainer, ReferenceRunReconstructionTrendsDown) {
	std::ifstream log(std::filesystem::path(AMEGAN_TEST_DATA) / "reference" / "train_log.csv");
	ASSERT_TRUE(log) << "missing reference train_log.csv";
	std::string line;
	std::getline(log, line);
	std::vector<double> recon;
	while (std::getline(log, line) && recon.size() < 2000) {
		std::istringstream row(line);
		std::string cell;
		for (int col = 0; col <= 6; ++col)
			std::getline(row, cell, ',');
		recon.push_back(std::stod(cell));
	}
	ASSERT_EQ(recon.size(), 2000u);
	const auto window = [&](std::size_t begin) {
		double sum = 0;
		for (std::size_t i = begin; i < begin + 100; ++i)
			sum += recon[i];
		return sum / 100;
	};
	EXPECT_LT(window(1900), 0.5 * window(0));
}
