#pragma once

#include <stdexcept>
#include <string>

namespace a2p {

/// Coarse failure category; the CLI maps each category to an exit code.
enum class ErrorKind {
  kUsage,
  kConfig,
  kIo,
  kNumeric,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define A2P_DEFINE_ERROR(Name, Kind)                                \
  class Name : public Error {                                       \
   public:                                                          \
    explicit Name(const std::string& what)                          \
        : Error(ErrorKind::Kind, #Name ": " + what) {}              \
  };

// pointcloud
A2P_DEFINE_ERROR(DegenerateCloud, kNumeric)
A2P_DEFINE_ERROR(InvalidCount, kConfig)
A2P_DEFINE_ERROR(InvalidK, kConfig)
// tokenizer / projection / backbone
A2P_DEFINE_ERROR(ConfigMismatch, kConfig)
A2P_DEFINE_ERROR(ModeMismatch, kConfig)
A2P_DEFINE_ERROR(DimMismatch, kConfig)
// checkpoint
A2P_DEFINE_ERROR(ManifestError, kIo)
A2P_DEFINE_ERROR(ShapeError, kIo)
A2P_DEFINE_ERROR(ChecksumError, kIo)
A2P_DEFINE_ERROR(IoError, kIo)
// training
A2P_DEFINE_ERROR(NonScalarLoss, kNumeric)
A2P_DEFINE_ERROR(ConfigError, kConfig)

#undef A2P_DEFINE_ERROR

}  // namespace a2p
