#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "amegan/amegan.hpp"

namespace fs = std::filesystem;
using namespace amegan;

namespace {

enum ExitCode : int { ok = 0, usage = 2, io = 3, checkpoint_mismatch = 4, numeric_divergence = 5 };

int fail(const std::string& category, const std::string& message, int code) {
	std::cerr << "error: " << category << ": " << message << '\n';
	return code;
}

int exit_code(const Error& e) {
	switch (e.category()) {
		case ErrorCategory::io: return io;
		case ErrorCategory::checkpoint_mismatch: return checkpoint_mismatch;
		case ErrorCategory::numeric_divergence: return numeric_divergence;
		default: return usage;
	}
}

std::string category_name(const Error& e) {
	switch (e.category()) {
		case ErrorCategory::contract:
		case ErrorCategory::configuration: return "usage";
		default: return to_string(e.category());
	}
}

struct DatagenArgs {
	std::string out;
	std::uint64_t count = 2000;
	std::uint64_t seed = synth::kEvalSeedBegin;
	int size = 32;
	bool force = false;
};

int run_datagen(const DatagenArgs& a) {
	const fs::path dir(a.out);
	if (fs::exists(dir) && !fs::is_empty(dir)) {
		if (!a.force)
			return fail("io", dir.string() + " exists and is not empty (use --force)", io);
		fs::remove_all(dir);
	}
	if (a.seed + a.count > synth::kEvalSeedEnd)
		return fail("usage", "seed range exceeds the synthetic seed space", usage);
	const auto manifest = synth::write_dataset(dir, a.count, a.seed, a.size);
	std::uint64_t agree = 0;
	for (std::uint64_t i = 0; i < a.count; ++i) {
		const auto s = synth::render(a.seed + i, a.size);
		agree += synth::oracle_classify(s.image).label == s.label;
	}
	std::cout << "wrote " << manifest.count << " samples to " << dir.string() << "; oracle agreement " << agree << '/'
			  << a.count << '\n';
	return agree == a.count ? ok : fail("numeric-divergence", "oracle disagrees with the generator", numeric_divergence);
}

struct TrainArgs {
	std::string config;
	std::string out;
	std::string resume;
};

int run_train(const TrainArgs& a) {
	std::optional<TrainState<float>> state;
	if (!a.resume.empty())
		state.emplace(load_checkpoint<float>(a.resume));
	else
		state.emplace(load_train_config(a.config));
	TrainOptions opts;
	opts.out_dir = a.out;
	opts.on_step = [&](long step, const StepReport&) {
		if (step % 100 == 0) {
			const auto& g = state->rolling.generator;
			const auto& d = state->rolling.discriminator;
			std::cout << "step " << step << " recon " << g.recon << " g_total " << g.total << " d_total " << d.total
					  << std::endl;
		}
		return true;
	};
	train(*state, opts);
	save_model(fs::path(a.out) / "model.ckpt", state->model);
	std::cout << "finished at step " << state->step << "; model written to " << (fs::path(a.out) / "model.ckpt").string()
			  << '\n';
	return ok;
}

struct EvalArgs {
	std::string ckpt;
	std::string data;
	std::string report;
	std::string grids;
};

int run_eval(const EvalArgs& a) {
	const auto model = load_model<float>(a.ckpt);
	const auto ds = synth::read_dataset(a.data);
	if (ds.manifest.width != model.config().image_size)
		return fail("usage", "dataset image size does not match the checkpoint", usage);
	const auto set = EvalSet::from_dataset(ds);
	const ModelAdapter adapter(model);
	const auto report = evaluate(adapter, set);
	const auto j = to_json(report);
	std::ofstream out(a.report, std::ios::trunc);
	if (!out)
		return fail("io", "cannot write " + a.report, io);
	out << j.dump(2) << '\n';
	if (!a.grids.empty()) {
		fs::create_directories(a.grids);
		for (int attr = 0; attr < synth::kNumAttributes; ++attr)
			write_png((fs::path(a.grids) / (std::string("theta_") + synth::kAttributeNames[attr] + ".png")).string(),
					theta_grid_image(adapter, set, attr, 8));
	}
	std::cout << j.dump(2) << '\n';
	return ok;
}

struct TransferArgs {
	std::string ckpt;
	std::string input;
	std::string attrs;
	double theta = 1.0;
	std::string out;
};

int run_transfer(const TransferArgs& a) {
	if (!(a.theta >= 0.0 && a.theta <= 1.0))
		return fail("usage", "theta must lie in [0, 1]", usage);
	const auto model = load_model<float>(a.ckpt);
	const auto target = AttributeLabel::parse(a.attrs);
	if (target.size() != model.config().num_attributes)
		return fail("usage",
				"bitstring '" + a.attrs + "' has " + std::to_string(target.size()) + " bits, checkpoint expects "
						+ std::to_string(model.config().num_attributes),
				usage);
	const auto img = read_png(a.input);
	if (img.width != model.config().image_size || img.height != model.config().image_size)
		return fail("usage", "input image must be " + std::to_string(model.config().image_size) + " pixels square", usage);
	const auto out = transfer(model, from_rgb8(img), std::vector<AttributeLabel>{target}, TransferControl(a.theta));
	if (!out.all_finite())
		return fail("numeric-divergence", "transfer produced non-finite pixels", numeric_divergence);
	write_png(a.out, to_rgb8(out));
	return ok;
}

struct ServeArgs {
	std::string ckpt;
	std::string data;
	std::string host = "127.0.0.1";
	int port = 8080;
};

int run_serve(const ServeArgs& a) {
	std::optional<synth::Dataset> ds;
	if (!a.data.empty())
		ds = synth::read_dataset(a.data);
	const auto service = InferenceService::from_checkpoint(a.ckpt, std::move(ds));
	httplib::Server server;
	service.mount(server);
	std::cout << "serving " << a.ckpt << " on http://" << a.host << ':' << a.port << std::endl;
	if (!server.listen(a.host, a.port))
		return fail("io", "cannot listen on " + a.host + ":" + std::to_string(a.port), io);
	return ok;
}

} // namespace

int main(int argc, char** argv) {
	CLI::App app{"amegan: attribute manifold encoding GAN on synthetic images"};
	app.require_subcommand(1);

	DatagenArgs dg;
	auto* datagen = app.add_subcommand("datagen", "Render a synthetic dataset directory");
	datagen->add_option("--out", dg.out, "Output directory")->required();
	datagen->add_option("--count", dg.count, "Number of samples")->capture_default_str();
	datagen->add_option("--seed", dg.seed, "First seed_id (evaluation seeds start at 1000000)")->capture_default_str();
	datagen->add_option("--size", dg.size, "Image side")->check(CLI::IsMember({16, 32, 64}))->capture_default_str();
	datagen->add_flag("--force", dg.force, "Replace an existing non-empty directory");

	TrainArgs tr;
	auto* train_cmd = app.add_subcommand("train", "Train from a JSON config");
	auto* config_opt = train_cmd->add_option("--config", tr.config, "Training config (JSON)");
	train_cmd->add_option("--out", tr.out, "Output directory for log and checkpoints")->required();
	train_cmd->add_option("--resume", tr.resume, "Resume from a training checkpoint")->excludes(config_opt);

	EvalArgs ev;
	auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a held-out dataset");
	eval_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
	eval_cmd->add_option("--data", ev.data, "Dataset directory with evaluation seeds")->required();
	eval_cmd->add_option("--report", ev.report, "Report path (JSON)")->required();
	eval_cmd->add_option("--grids", ev.grids, "Directory for per-attribute theta grids (PNG)");

	TransferArgs tf;
	auto* transfer_cmd = app.add_subcommand("transfer", "Edit one image");
	transfer_cmd->add_option("--ckpt", tf.ckpt, "Checkpoint")->required();
	transfer_cmd->add_option("--input", tf.input, "Input PNG")->required();
	transfer_cmd->add_option("--attrs", tf.attrs, "Target attribute bitstring, e.g. 1010")->required();
	transfer_cmd->add_option("--theta", tf.theta, "Transfer intensity in [0, 1]")->capture_default_str();
	transfer_cmd->add_option("--out", tf.out, "Output PNG")->required();

	ServeArgs sv;
	auto* serve_cmd = app.add_subcommand("serve", "Serve a checkpoint over HTTP");
	serve_cmd->add_option("--ckpt", sv.ckpt, "Checkpoint")->required();
	serve_cmd->add_option("--port", sv.port, "TCP port")->capture_default_str();
	serve_cmd->add_option("--data", sv.data, "Dataset directory whose seeds /sample may serve");
	serve_cmd->add_option("--host", sv.host, "Bind address")->capture_default_str();

	try {
		app.parse(argc, argv);
	} catch (const CLI::CallForHelp& e) {
		return app.exit(e);
	} catch (const CLI::CallForAllHelp& e) {
		return app.exit(e);
	} catch (const CLI::ParseError& e) {
		std::cerr << "error: usage: " << e.what() << '\n';
		return usage;
	}

	try {
		if (*datagen)
			return run_datagen(dg);
		if (*train_cmd) {
			if (tr.config.empty() && tr.resume.empty())
				return fail("usage", "train needs --config or --resume", usage);
			return run_train(tr);
		}
		if (*eval_cmd)
			return run_eval(ev);
		if (*transfer_cmd)
			return run_transfer(tf);
		if (*serve_cmd)
			return run_serve(sv);
	} catch (const Error& e) {
		return fail(category_name(e), e.what(), exit_code(e));
	} catch (const std::exception& e) {
		return fail("io", e.what(), io);
	}
	return usage;
}
