#ifndef AMEGAN_CHECKPOINT_HPP_
#define AMEGAN_CHECKPOINT_HPP_

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "networks.hpp"

namespace amegan {

inline constexpr const char* kCheckpointFormat = "amegan-checkpoint-1";

/// Everything a checkpoint file holds, fully parsed.
struct CheckpointArchive {
	std::string format = kCheckpointFormat;
	nlohmann::json config = nlohmann::json::object();
	nlohmann::json state = nlohmann::json::object();
	std::vector<std::pair<std::string, Tensor<float>>> tensors;

	const Tensor<float>* find(const std::string& name) const {
		for (const auto& [n, t] : tensors)
			if (n == name)
				return &t;
		return nullptr;
	}
};

namespace detail {

inline constexpr char kMagic[8] = {'A', 'M', 'E', 'G', 'A', 'N', 'C', 'K'};
inline constexpr char kTrailer[4] = {'D', 'O', 'N', 'E'};

inline void put_u32(std::vector<char>& out, std::uint32_t v) {
	for (int i = 0; i < 4; ++i)
		out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline void put_string(std::vector<char>& out, const std::string& s) {
	put_u32(out, static_cast<std::uint32_t>(s.size()));
	out.insert(out.end(), s.begin(), s.end());
}

class Reader {
public:
	explicit Reader(const std::vector<char>& bytes) : bytes_(bytes) { }

	void raw(char* dst, std::size_t n) {
		if (n > bytes_.size() - pos_)
			throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
		std::memcpy(dst, bytes_.data() + pos_, n);
		pos_ += n;
	}
	std::uint32_t u32() {
		unsigned char b[4];
		raw(reinterpret_cast<char*>(b), 4);
		return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8
				| static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
	}
	std::string string() {
		const std::uint32_t n = u32();
		std::string s(n, '\0');
		raw(s.data(), n);
		return s;
	}
	bool at_end() const { return pos_ == bytes_.size(); }

private:
	const std::vector<char>& bytes_;
	std::size_t pos_ = 0;
};

} // namespace detail

inline std::vector<char> serialize_archive(const CheckpointArchive& a) {
	std::vector<char> out(std::begin(detail::kMagic), std::end(detail::kMagic));
	detail::put_string(out, a.format);
	detail::put_string(out, a.config.dump());
	detail::put_string(out, a.state.dump());
	detail::put_u32(out, static_cast<std::uint32_t>(a.tensors.size()));
	for (const auto& [name, t] : a.tensors) {
		detail::put_string(out, name);
		const Shape s = t.shape();
		for (int d : {s.n, s.h, s.w, s.c})
			detail::put_u32(out, static_cast<std::uint32_t>(d));
		for (float v : t)
			detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
	}
	out.insert(out.end(), std::begin(detail::kTrailer), std::end(detail::kTrailer));
	return out;
}

/// Parses a whole archive; nothing is returned unless every byte checks out.
inline CheckpointArchive parse_archive(const std::vector<char>& bytes) {
	detail::Reader in(bytes);
	char magic[8];
	in.raw(magic, 8);
	if (std::memcmp(magic, detail::kMagic, 8) != 0)
		throw CheckpointError("not an amegan checkpoint");
	CheckpointArchive a;
	a.format = in.string();
	if (a.format != kCheckpointFormat)
		throw CheckpointError("checkpoint format '" + a.format + "' unsupported, expected " + kCheckpointFormat);
	try {
		a.config = nlohmann::json::parse(in.string());
		a.state = nlohmann::json::parse(in.string());
	} catch (const nlohmann::json::parse_error& e) {
		throw CheckpointError(std::string("checkpoint metadata unreadable: ") + e.what());
	}
	const std::uint32_t count = in.u32();
	for (std::uint32_t i = 0; i < count; ++i) {
		std::string name = in.string();
		Shape s;
		s.n = static_cast<int>(in.u32());
		s.h = static_cast<int>(in.u32());
		s.w = static_cast<int>(in.u32());
		s.c = static_cast<int>(in.u32());
		if (s.n <= 0 || s.h <= 0 || s.w <= 0 || s.c <= 0 || s.size() > (std::size_t{1} << 30))
			throw CheckpointError("tensor " + name + " has invalid shape " + s.to_string());
		Tensor<float> t(s);
		for (auto& v : t)
			v = std::bit_cast<float>(in.u32());
		a.tensors.emplace_back(std::move(name), std::move(t));
	}
	char trailer[4];
	in.raw(trailer, 4);
	if (std::memcmp(trailer, detail::kTrailer, 4) != 0 || !in.at_end())
		throw CheckpointError("checkpoint trailer missing or trailing bytes present");
	return a;
}

/// Writes via a temporary file and rename, so readers never see a partial file.
inline void write_archive(const std::filesystem::path& path, const CheckpointArchive& a) {
	const auto bytes = serialize_archive(a);
	auto tmp = path;
	tmp += ".tmp";
	{
		std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
		if (!f)
			throw IoError("cannot write checkpoint " + tmp.string());
		f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
		if (!f)
			throw IoError("short write to " + tmp.string());
	}
	std::error_code ec;
	std::filesystem::rename(tmp, path, ec);
	if (ec)
		throw IoError("cannot move checkpoint into place: " + ec.message());
}

inline CheckpointArchive read_archive(const std::filesystem::path& path) {
	std::ifstream f(path, std::ios::binary);
	if (!f)
		throw IoError("cannot open checkpoint " + path.string());
	std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
	return parse_archive(bytes);
}

// Model <-> archive ----------------------------------------------------------------

template<typename T>
void append_model(CheckpointArchive& a, const Model<T>& model) {
	for (const auto& p : model.parameters())
		a.tensors.emplace_back(p.name, p.var->value.template cast<float>());
	for (const auto& b : model.buffers())
		a.tensors.emplace_back(b.name, b.tensor->template cast<float>());
}

/// Copies the archive's model tensors into `model`. The set of names and
/// every shape must match exactly; other prefixes listed in `ignore` are skipped.
template<typename T>
void restore_model(Model<T>& model, const CheckpointArchive& a, const std::vector<std::string>& ignore = {}) {
	std::map<std::string, const Tensor<float>*> stored;
	for (const auto& [name, t] : a.tensors) {
		bool skip = false;
		for (const auto& prefix : ignore)
			skip = skip || name.rfind(prefix, 0) == 0;
		if (!skip && !stored.emplace(name, &t).second)
			throw CheckpointError("duplicate tensor " + name);
	}
	std::vector<std::pair<Tensor<T>*, const Tensor<float>*>> plan;
	auto match = [&](const std::string& name, Tensor<T>& dst) {
		auto it = stored.find(name);
		if (it == stored.end())
			throw CheckpointError("checkpoint lacks tensor " + name);
		if (it->second->shape() != dst.shape())
			throw CheckpointError("tensor " + name + " has shape " + it->second->shape().to_string() + ", model expects "
					+ dst.shape().to_string());
		plan.emplace_back(&dst, it->second);
		stored.erase(it);
	};
	for (const auto& p : model.parameters())
		match(p.name, p.var->value);
	for (const auto& b : model.buffers())
		match(b.name, *b.tensor);
	if (!stored.empty())
		throw CheckpointError("checkpoint has unexpected tensor " + stored.begin()->first);
	for (auto [dst, src] : plan)
		*dst = src->template cast<T>();
}

/// Inference-only checkpoint: config plus model tensors.
template<typename T>
void save_model(const std::filesystem::path& path, const Model<T>& model) {
	CheckpointArchive a;
	a.config = {{"model", model.config()}};
	append_model(a, model);
	write_archive(path, a);
}

inline ModelConfig model_config_of(const CheckpointArchive& a) {
	try {
		ModelConfig cfg = a.config.at("model").get<ModelConfig>();
		cfg.validate();
		return cfg;
	} catch (const nlohmann::json::exception& e) {
		throw CheckpointError(std::string("checkpoint config unreadable: ") + e.what());
	} catch (const ConfigError& e) {
		throw CheckpointError(std::string("checkpoint config invalid: ") + e.what());
	}
}

/// Builds the model described by an archive and loads its tensors. Optimizer
/// and other non-model tensors (prefix "opt.") are ignored.
template<typename T>
Model<T> model_from_archive(const CheckpointArchive& a) {
	Model<T> model(model_config_of(a));
	restore_model(model, a, {"opt."});
	return model;
}

template<typename T>
Model<T> load_model(const std::filesystem::path& path) {
	return model_from_archive<T>(read_archive(path));
}

} // namespace amegan

#endif // AMEGAN_CHECKPOINT_HPP_
