#pragma once

#include <stdexcept>
#include <string>

namespace obf {

// Base class for every error the library raises. `name()` is the stable
// machine-readable identifier the CLI prints on pipeline failures.
class Error : public std::runtime_error {
public:
    Error(std::string name, const std::string& message)
        : std::runtime_error(name + ": " + message), name_(std::move(name)) {}

    const std::string& name() const noexcept { return name_; }

private:
    std::string name_;
};

#define OBF_DEFINE_ERROR(TYPE)                                  \
    class TYPE : public Error {                                 \
    public:                                                     \
        explicit TYPE(const std::string& message)               \
            : Error(#TYPE, message) {}                          \
    }

// data-io
OBF_DEFINE_ERROR(WrongMagic);
OBF_DEFINE_ERROR(CountMismatch);
OBF_DEFINE_ERROR(TruncatedFile);
OBF_DEFINE_ERROR(BadRecordLength);
OBF_DEFINE_ERROR(LabelOutOfRange);
OBF_DEFINE_ERROR(EmptyDataset);

// sampler
OBF_DEFINE_ERROR(DegenerateSpec);
OBF_DEFINE_ERROR(InfeasibleOverlap);
OBF_DEFINE_ERROR(EmptyResult);

// obfuscation
OBF_DEFINE_ERROR(ShapeMismatch);

// nn-engine
OBF_DEFINE_ERROR(ShapeError);

// metrics
OBF_DEFINE_ERROR(ArchMismatch);
OBF_DEFINE_ERROR(LengthMismatch);
OBF_DEFINE_ERROR(RangeError);

// pol
OBF_DEFINE_ERROR(CommitmentMismatch);
OBF_DEFINE_ERROR(SegmentOutOfRange);

// harness / cli
OBF_DEFINE_ERROR(ConfigError);
OBF_DEFINE_ERROR(IoError);

#undef OBF_DEFINE_ERROR

// Training divergence carries the step at which the loss went non-finite.
class NonFiniteLoss : public Error {
public:
    NonFiniteLoss(long step, const std::string& message)
        : Error("NonFiniteLoss", message), step_(step) {}

    long step() const noexcept { return step_; }

private:
    long step_;
};

}  // namespace obf
