#ifndef AMEGAN_ERRORS_HPP_
#define AMEGAN_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace amegan {

/// Broad failure classes. The CLI maps each onto a distinct exit code.
enum class ErrorCategory {
	contract,            // caller broke a documented precondition
	configuration,       // inconsistent model or training configuration
	io,                  // file or network I/O failure
	checkpoint_mismatch, // version, name or shape mismatch while loading
	numeric_divergence,  // non-finite value during training or inference
	undefined_metric     // metric with an empty domain
};

inline const char* to_string(ErrorCategory category) {
	switch (category) {
		case ErrorCategory::contract: return "contract";
		case ErrorCategory::configuration: return "configuration";
		case ErrorCategory::io: return "io";
		case ErrorCategory::checkpoint_mismatch: return "checkpoint-mismatch";
		case ErrorCategory::numeric_divergence: return "numeric-divergence";
		case ErrorCategory::undefined_metric: return "undefined-metric";
	}
	return "unknown";
}

class Error : public std::runtime_error {
public:
	Error(ErrorCategory category, const std::string& message) :
			std::runtime_error(message),
			category_(category) { }
	ErrorCategory category() const noexcept { return category_; }
private:
	ErrorCategory category_;
};

class ContractError : public Error {
public:
	explicit ContractError(const std::string& message) : Error(ErrorCategory::contract, message) { }
};

class ConfigError : public Error {
public:
	explicit ConfigError(const std::string& message) : Error(ErrorCategory::configuration, message) { }
};

class IoError : public Error {
public:
	explicit IoError(const std::string& message) : Error(ErrorCategory::io, message) { }
};

class CheckpointError : public Error {
public:
	explicit CheckpointError(const std::string& message) : Error(ErrorCategory::checkpoint_mismatch, message) { }
};

/// Raised when a loss or activation turns non-finite. Carries the component name
/// and, when known, the training step.
class DivergenceError : public Error {
public:
	DivergenceError(std::string component, long step, const std::string& message) :
			Error(ErrorCategory::numeric_divergence, message),
			component_(std::move(component)),
			step_(step) { }
	const std::string& component() const noexcept { return component_; }
	long step() const noexcept { return step_; }
private:
	std::string component_;
	long step_;
};

class MetricError : public Error {
public:
	explicit MetricError(const std::string& message) : Error(ErrorCategory::undefined_metric, message) { }
};

inline void require(bool condition, const std::string& message) {
	if (!condition)
		throw ContractError(message);
}

} // namespace amegan

#endif // AMEGAN_ERRORS_HPP_
