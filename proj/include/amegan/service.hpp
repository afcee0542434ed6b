#ifndef AMEGAN_SERVICE_HPP_
#define AMEGAN_SERVICE_HPP_

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "checkpoint.hpp"
#include "image_io.hpp"
#include "modulation.hpp"
#include "synthetic.hpp"

// After Eigen: <resolv.h>, pulled in by httplib, defines a _res macro.
#include <httplib.h>

namespace amegan {

/// Lower-case hex SHA-256 of a file's bytes.
inline std::string sha256_file(const std::filesystem::path& path) {
	const auto bytes = read_file(path.string());
	unsigned char digest[EVP_MAX_MD_SIZE];
	unsigned int len = 0;
	if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
		throw IoError("sha256 failed");
	std::ostringstream os;
	for (unsigned int i = 0; i < len; ++i)
		os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
	return os.str();
}

struct HttpReply {
	int status = 200;
	std::string content_type = "application/json";
	std::string body;

	static HttpReply json(int status, const nlohmann::json& j) { return {status, "application/json", j.dump()}; }
	static HttpReply error(int status, const std::string& message) {
		return json(status, {{"error", message}});
	}
};

/// Read-only HTTP facade over one loaded model. Handlers are pure functions of
/// the request, so they are callable without a socket.
class InferenceService {
public:
	InferenceService(Model<float> model, std::string checkpoint_id, std::optional<synth::Dataset> dataset = {}) :
			model_(std::move(model)),
			checkpoint_id_(std::move(checkpoint_id)),
			dataset_(std::move(dataset)) {
		if (model_.config().num_attributes != synth::kNumAttributes)
			throw CheckpointError("served checkpoints must carry " + std::to_string(synth::kNumAttributes)
					+ " attributes");
		if (dataset_) {
			if (dataset_->manifest.width != model_.config().image_size)
				throw CheckpointError("dataset image size does not match the checkpoint");
			for (const auto& e : dataset_->entries)
				labels_.emplace(e.seed_id, e.label);
		}
	}

	static InferenceService from_checkpoint(const std::filesystem::path& ckpt,
			std::optional<synth::Dataset> dataset = {}) {
		return InferenceService(load_model<float>(ckpt), sha256_file(ckpt), std::move(dataset));
	}

	const Model<float>& model() const { return model_; }

	HttpReply meta() const {
		nlohmann::json names = nlohmann::json::array();
		for (const char* n : synth::kAttributeNames)
			names.push_back(n);
		return HttpReply::json(200, {{"n", model_.config().num_attributes}, {"attribute_names", names},
				{"image_size", model_.config().image_size}, {"checkpoint_id", checkpoint_id_}});
	}

	HttpReply sample(const std::string& seed_text, const std::optional<std::string>& bits) const {
		std::uint64_t seed = 0;
		const auto [end, ec] = std::from_chars(seed_text.data(), seed_text.data() + seed_text.size(), seed);
		if (ec != std::errc() || end != seed_text.data() + seed_text.size())
			return HttpReply::error(400, "seed_id must be a non-negative integer");
		const auto label = source_label(seed);
		if (!label)
			return HttpReply::error(404, "unknown seed_id " + seed_text);
		AttributeLabel chosen = *label;
		if (bits) {
			auto parsed = parse_bits(*bits);
			if (!parsed)
				return HttpReply::error(400, "bits must be a " + std::to_string(synth::kNumAttributes)
						+ "-character 0/1 string");
			chosen = *parsed;
		}
		const auto png = encode_png(synth::render(seed, chosen, model_.config().image_size).pixels);
		return {200, "image/png", std::string(png.begin(), png.end())};
	}

	HttpReply transfer(const std::string& body) const {
		nlohmann::json req;
		try {
			req = nlohmann::json::parse(body);
		} catch (const nlohmann::json::parse_error&) {
			return HttpReply::error(400, "body is not JSON");
		}
		if (!req.is_object())
			return HttpReply::error(400, "body must be a JSON object");
		const bool has_id = req.contains("sample_id"), has_image = req.contains("image");
		if (has_id == has_image)
			return HttpReply::error(400, "exactly one of sample_id or image is required");
		if (!req.contains("target_bits") || !req["target_bits"].is_string())
			return HttpReply::error(400, "target_bits must be a string");
		const auto target = parse_bits(req["target_bits"].get<std::string>());
		if (!target)
			return HttpReply::error(400, "target_bits must be a " + std::to_string(synth::kNumAttributes)
					+ "-character 0/1 string");
		if (!req.contains("theta") || !req["theta"].is_number())
			return HttpReply::error(400, "theta must be a number");
		const double theta = req["theta"].get<double>();
		if (!(theta >= 0.0 && theta <= 1.0))
			return HttpReply::error(400, "theta must lie in [0, 1]");

		const int size = model_.config().image_size;
		Tensor<float> source;
		if (has_id) {
			if (!req["sample_id"].is_number_unsigned())
				return HttpReply::error(400, "sample_id must be a non-negative integer");
			const auto seed = req["sample_id"].get<std::uint64_t>();
			const auto label = source_label(seed);
			if (!label)
				return HttpReply::error(400, "unknown sample_id");
			source = synth::render(seed, *label, size).image;
		} else {
			if (!req["image"].is_string())
				return HttpReply::error(400, "image must be base64 PNG text");
			try {
				const auto img = decode_png(base64_decode(req["image"].get<std::string>()));
				if (img.width != size || img.height != size)
					return HttpReply::error(400, "image must be " + std::to_string(size) + "x" + std::to_string(size));
				source = from_rgb8(img);
			} catch (const Error& e) {
				return HttpReply::error(400, std::string("image unreadable: ") + e.what());
			}
		}

		const auto out = amegan::transfer(model_, source, std::vector<AttributeLabel>{*target}, TransferControl(theta));
		if (!out.all_finite())
			return HttpReply::error(422, "model produced non-finite output");
		const auto pixels = to_rgb8(out);
		const auto verdict = synth::oracle_classify(from_rgb8(pixels));
		nlohmann::json echoed = {{"target_bits", target->to_string()}, {"theta", theta}};
		if (has_id)
			echoed["sample_id"] = req["sample_id"];
		else
			echoed["image"] = req["image"];
		return HttpReply::json(200, {{"image", base64_encode(encode_png(pixels))}, {"request", echoed},
				{"confidence", verdict.confidence}, {"presence", verdict.presence},
				{"bits", verdict.label.to_string()}});
	}

	/// Registers the endpoints and permissive CORS headers on `server`.
	void mount(httplib::Server& server) const {
		server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
				{"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
				{"Access-Control-Allow-Headers", "Content-Type"}});
		auto send = [](httplib::Response& res, const HttpReply& r) {
			res.status = r.status;
			res.set_content(r.body, r.content_type);
		};
		server.Get("/meta", [this, send](const httplib::Request&, httplib::Response& res) { send(res, meta()); });
		server.Get(R"(/sample/([^/]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
			std::optional<std::string> bits;
			if (req.has_param("bits"))
				bits = req.get_param_value("bits");
			send(res, sample(req.matches[1], bits));
		});
		server.Post("/transfer", [this, send](const httplib::Request& req, httplib::Response& res) {
			send(res, transfer(req.body));
		});
		server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
	}

private:
	static std::optional<AttributeLabel> parse_bits(const std::string& text) {
		if (static_cast<int>(text.size()) != synth::kNumAttributes)
			return std::nullopt;
		try {
			return AttributeLabel::parse(text);
		} catch (const ContractError&) {
			return std::nullopt;
		}
	}

	/// Label of a browsable seed: the served dataset when present, otherwise
	/// any training or evaluation seed.
	std::optional<AttributeLabel> source_label(std::uint64_t seed) const {
		if (dataset_) {
			const auto it = labels_.find(seed);
			if (it == labels_.end())
				return std::nullopt;
			return it->second;
		}
		if (seed >= synth::kEvalSeedEnd)
			return std::nullopt;
		return synth::label_for_seed(seed);
	}

	Model<float> model_;
	std::string checkpoint_id_;
	std::optional<synth::Dataset> dataset_;
	std::map<std::uint64_t, AttributeLabel> labels_;
};

} // namespace amegan

#endif // AMEGAN_SERVICE_HPP_
