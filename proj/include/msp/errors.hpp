#ifndef __MSP_ERRORS_HPP__
#define __MSP_ERRORS_HPP__

#include <stdexcept>
#include <string>

namespace msp {

// A configured client (describer, segmenter, ...) could not be reached or failed.
class TransportError : public std::runtime_error {
public:
    explicit TransportError(const std::string& what)
        : std::runtime_error(what) {}
};

// The backend lacks a required capability (e.g. attention taps).
class CapabilityError : public std::runtime_error {
public:
    explicit CapabilityError(const std::string& what)
        : std::runtime_error(what) {}
};

// A caller violated an interface contract (e.g. passed a non-frozen class branch).
class ContractViolation : public std::logic_error {
public:
    explicit ContractViolation(const std::string& what)
        : std::logic_error(what) {}
};

// Optimization failed (non-finite loss, divergence).
class TrainingError : public std::runtime_error {
public:
    explicit TrainingError(const std::string& what)
        : std::runtime_error(what) {}
};

class PipelineError : public std::runtime_error {
public:
    explicit PipelineError(const std::string& what)
        : std::runtime_error(what) {}
};

class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what)
        : std::runtime_error(what) {}
};

}  // namespace msp

#endif  // __MSP_ERRORS_HPP__
