#ifndef OWS_ERROR_HPP
#define OWS_ERROR_HPP

#include <stdexcept>
#include <string>

namespace ows {

// Every error raised by the library derives from Error so callers (the CLI in
// particular) can map failure classes onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand dimensions disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Requested rank is outside [1, min(rows, cols)].
class RankError : public Error {
 public:
  using Error::Error;
};

/// Non-finite or otherwise unusable numeric input.
class ValueError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or argument combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Object used in the wrong lifecycle state (stale trace, missing stats, ...).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Malformed checkpoint manifest or blob.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failure; the message carries the path.
class FileError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace ows

#endif  // OWS_ERROR_HPP
