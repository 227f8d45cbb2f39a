#pragma once

#include <stdexcept>
#include <string>

namespace tml {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Bad input data, configuration or arguments. Detected before work starts.
class ValidationError : public Error {
public:
  using Error::Error;
};

/// A numerical routine could not produce a result (singular system,
/// solver non-convergence).
class NumericalError : public Error {
public:
  using Error::Error;
};

/// Failure attributable to a single task; carries the task id so callers
/// can isolate it.
class TaskError : public Error {
public:
  TaskError(std::string task_id, const std::string& what)
      : Error("task '" + task_id + "': " + what), task_id_(std::move(task_id)) {}

  const std::string& task_id() const noexcept { return task_id_; }

private:
  std::string task_id_;
};

} // namespace tml
