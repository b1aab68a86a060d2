#pragma once

#include <stdexcept>
#include <string>

namespace occlusim {

// Base error; `kind()` is the stable, machine-parsable tag the CLI prints.
class Error : public std::runtime_error {
public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

private:
  std::string kind_;
};

#define OCCLUSIM_DEFINE_ERROR(Name, tag)                                       \
  class Name : public Error {                                                  \
  public:                                                                      \
    explicit Name(const std::string& what) : Error(tag, what) {}              \
  };

OCCLUSIM_DEFINE_ERROR(ConfigError, "config")
OCCLUSIM_DEFINE_ERROR(CoverageCalibrationError, "coverage_calibration")
OCCLUSIM_DEFINE_ERROR(DimensionError, "dimension")
OCCLUSIM_DEFINE_ERROR(SpanError, "span")
OCCLUSIM_DEFINE_ERROR(IoError, "io")
OCCLUSIM_DEFINE_ERROR(FormatError, "format")
OCCLUSIM_DEFINE_ERROR(ChecksumError, "checksum")
OCCLUSIM_DEFINE_ERROR(MissingFileError, "missing_file")
OCCLUSIM_DEFINE_ERROR(VersionError, "version")

#undef OCCLUSIM_DEFINE_ERROR

}  // namespace occlusim
