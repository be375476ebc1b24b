#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fsb {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument was violated.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// A binary file does not match its declared format.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// The requested episode cannot be drawn from the available classes/samples.
class InfeasibleEpisode : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergedTraining : public Error {
 public:
  DivergedTraining(const std::string& what, int epoch, int generation = -1)
      : Error(what), epoch_(epoch), generation_(generation) {}

  int epoch() const noexcept { return epoch_; }
  int generation() const noexcept { return generation_; }

 private:
  int epoch_;
  int generation_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace fsb
