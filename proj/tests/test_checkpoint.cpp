#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "support.hpp"

using namespace amegan;
using amegan::testing::tiny_config;
using amegan::testing::tiny_train_config;

namespace {

std::filesystem::path temp_path(const std::string& name) {
	return std::filesystem::temp_directory_path() / ("amegan_" + std::to_string(::getpid()) + "_" + name);
}

std::vector<char> bytes_of(const std::filesystem::path& p) {
	std::ifstream in(p, std::ios::binary);
	return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& p, const std::vector<char>& b) {
	std::ofstream out(p, std::ios::binary | std::ios::trunc);
	out.write(b.data(), static_cast<std::streamsize>(b.size()));
}

} // namespace

TEST(Checkpoint, ArchiveRoundTripsExactly) {
	CheckpointArchive a;
	a.config = {{"k", 1}};
	a.state = {{"x", 0.1}};
	Tensor<float> t(Shape{1, 2, 2, 3});
	for (std::size_t i = 0; i < t.size(); ++i)
		t[i] = static_cast<float>(i) * 0.37f - 1.0f;
	t[5] = -0.0f;
	a.tensors.emplace_back("w", t);
	const auto b = parse_archive(serialize_archive(a));
	EXPECT_EQ(b.config, a.config);
	EXPECT_EQ(b.state, a.state);
	ASSERT_EQ(b.tensors.size(), 1u);
	EXPECT_EQ(b.tensors[0].first, "w");
	EXPECT_EQ(std::memcmp(b.tensors[0].second.data(), t.data(), t.size() * sizeof(float)), 0);
}

TEST(Checkpoint, ModelRoundTripIsBitIdentical) {
	const auto path = temp_path("model.ckpt");
	Model<float> model(tiny_config());
	save_model(path, model);
	const auto loaded = load_model<float>(path);
	EXPECT_EQ(loaded.config(), model.config());
	const auto pa = model.parameters(), pb = loaded.parameters();
	ASSERT_EQ(pa.size(), pb.size());
	for (std::size_t i = 0; i < pa.size(); ++i)
		EXPECT_EQ(pa[i].var->value, pb[i].var->value) << pa[i].name;
	const auto batch = amegan::testing::eval_batch<float>(2, 16);
	const auto target = label_tensor<float>({AttributeLabel::parse("1100"), AttributeLabel::parse("0011")}, 4);
	EXPECT_EQ(transfer(model, batch.images, target, TransferControl(0.7)),
			transfer(loaded, batch.images, target, TransferControl(0.7)));
	std::filesystem::remove(path);
}

TEST(Checkpoint, EveryTruncationIsRejected) {
	const auto path = temp_path("trunc.ckpt");
	save_model(path, Model<float>(tiny_config()));
	const auto full = bytes_of(path);
	for (std::size_t cut : {std::size_t{0}, std::size_t{4}, std::size_t{20}, full.size() / 2, full.size() - 1}) {
		write_bytes(path, std::vector<char>(full.begin(), full.begin() + static_cast<long>(cut)));
		EXPECT_THROW(load_model<float>(path), CheckpointError) << cut;
	}
	auto extra = full;
	extra.push_back('x');
	write_bytes(path, extra);
	EXPECT_THROW(load_model<float>(path), CheckpointError);
	std::filesystem::remove(path);
	EXPECT_THROW(load_model<float>(path), IoError);
}

TEST(Checkpoint, MismatchesAreRejected) {
	Model<float> model(tiny_config());
	CheckpointArchive a;
	a.config = {{"model", model.config()}};
	append_model(a, model);

	auto wrong_format = a;
	wrong_format.format = "amegan-checkpoint-0";
	EXPECT_THROW(parse_archive(serialize_archive(wrong_format)), CheckpointError);

	auto wrong_shape = a;
	wrong_shape.tensors[0].second = Tensor<float>(Shape{1, 1, 1, 1});
	EXPECT_THROW(model_from_archive<float>(wrong_shape), CheckpointError);

	auto missing = a;
	missing.tensors.pop_back();
	EXPECT_THROW(model_from_archive<float>(missing), CheckpointError);

	auto unexpected = a;
	unexpected.tensors.emplace_back("enc.bogus", Tensor<float>(Shape{1, 1, 1, 1}));
	EXPECT_THROW(model_from_archive<float>(unexpected), CheckpointError);

	auto other_config = a;
	auto cfg = model.config();
	cfg.base_width = 8;
	other_config.config = {{"model", cfg}};
	EXPECT_THROW(model_from_archive<float>(other_config), CheckpointError);

	auto bad_config = a;
	bad_config.config = {{"model", {{"image_size", 20}}}};
	EXPECT_THROW(model_from_archive<float>(bad_config), CheckpointError);
}

TEST(Checkpoint, TrainingStateRoundTripIsBitIdentical) {
	const auto path = temp_path("state.ckpt");
	TrainState<float> state(tiny_train_config());
	for (int i = 0; i < 3; ++i)
		train_step(state, sample_batch(state));
	save_checkpoint(state, path);
	auto restored = load_checkpoint<float>(path);
	EXPECT_EQ(restored.step, 3);
	EXPECT_EQ(restored.rng.serialize(), state.rng.serialize());
	EXPECT_EQ(restored.d_opt.steps(), state.d_opt.steps());
	const auto pa = state.model.parameters(), pb = restored.model.parameters();
	for (std::size_t i = 0; i < pa.size(); ++i)
		EXPECT_EQ(pa[i].var->value, pb[i].var->value);
	for (std::size_t i = 0; i < state.g_opt.slots().size(); ++i) {
		EXPECT_EQ(state.g_opt.slots()[i].m, restored.g_opt.slots()[i].m);
		EXPECT_EQ(state.g_opt.slots()[i].v, restored.g_opt.slots()[i].v);
	}
	EXPECT_EQ(restored.rolling.generator.recon, state.rolling.generator.recon);

	save_model(path, state.model);
	EXPECT_THROW(load_checkpoint<float>(path), CheckpointError);
	std::filesystem::remove(path);
}
