#pragma once

#include <stdexcept>
#include <string>

namespace lzckpt {

class Error : public std::runtime_error {
public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Bad scenario files, invalid topologies, out-of-range knobs. The CLI maps
// this family to exit code 2, everything else to exit code 1.
class ConfigError : public Error {
public:
  using Error::Error;
};

// A single reservation larger than the whole pool can never succeed, which
// makes it a sizing mistake rather than transient backpressure.
class SizeExceedsCapacity : public ConfigError {
public:
  using ConfigError::ConfigError;
};

// reserve() deadline elapsed with no flush progress at all.
class WaitTimeout : public Error {
public:
  using Error::Error;
};

class IllegalTransition : public Error {
public:
  using Error::Error;
};

// A source region was mutated between copy submission and completion.
class TornSnapshot : public Error {
public:
  using Error::Error;
};

class DuplicatePath : public Error {
public:
  using Error::Error;
};

class FormatError : public Error {
public:
  using Error::Error;
};

class BadMagic : public FormatError {
public:
  using FormatError::FormatError;
};

class TruncatedFile : public FormatError {
public:
  using FormatError::FormatError;
};

class ChecksumMismatch : public FormatError {
public:
  using FormatError::FormatError;
};

class NotCommitted : public Error {
public:
  using Error::Error;
};

class CorruptManifest : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

}  // namespace lzckpt
