#pragma once

#include <stdexcept>
#include <string>

namespace mvsgs {

enum class Errc {
    BehindCamera,
    NonPositiveDepth,
    SingularIntrinsics,
    InvalidRange,
    TooFewViews,
    ResolutionMismatch,
    ZeroQuaternion,
    EmptyNeighborSet,
    AlignmentMismatch,
    ShapeMismatch,
    EmptyCloud,
    NoViews,
    MalformedHeader,
    TruncatedBody,
    UnsupportedFormat,
    InvalidSpec,
    TooSmall,
    Mismatch,
    InvalidCamera,
    IoError,
    BadConfig,
};

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace mvsgs
