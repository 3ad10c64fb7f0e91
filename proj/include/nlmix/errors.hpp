#pragma once

#include <stdexcept>
#include <string>

namespace nlmix {

// Every failure the library reports derives from Error. The three middle
// classes map onto the CLI exit-code contract (usage 1, data 2, estimation 3).
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class UsageError : public Error {
public:
  using Error::Error;
};

class DataError : public Error {
public:
  using Error::Error;
};

class EstimationError : public Error {
public:
  using Error::Error;
};

// ---- data errors -----------------------------------------------------------

class MissingColumn : public DataError {
public:
  explicit MissingColumn(const std::string &name)
      : DataError("MissingColumn: column '" + name + "' not found in header"),
        column(name) {}
  std::string column;
};

class NonNumericValue : public DataError {
public:
  NonNumericValue(std::size_t row_number, const std::string &col,
                  const std::string &text)
      : DataError("NonNumericValue: row " + std::to_string(row_number) +
                  ", column '" + col + "': '" + text + "'"),
        row(row_number), column(col) {}
  std::size_t row;
  std::string column;
};

class EmptyDataset : public DataError {
public:
  EmptyDataset() : DataError("EmptyDataset: no usable observations") {}
};

class DuplicateTimePoint : public DataError {
public:
  DuplicateTimePoint(const std::string &subject_id, double t)
      : DataError("DuplicateTimePoint: subject '" + subject_id +
                  "' has two observations at time " + std::to_string(t)),
        subject(subject_id), time(t) {}
  std::string subject;
  double time;
};

class MissingCovariate : public DataError {
public:
  MissingCovariate(const std::string &name, const std::string &subject_id = {})
      : DataError("MissingCovariate: '" + name + "'" +
                  (subject_id.empty() ? std::string{}
                                      : " for subject '" + subject_id + "'")),
        covariate(name) {}
  std::string covariate;
};

class TimeVaryingCovariate : public DataError {
public:
  TimeVaryingCovariate(const std::string &name, const std::string &subject_id)
      : DataError("TimeVaryingCovariate: '" + name + "' changes within subject '" +
                  subject_id + "'; only time-invariant covariates are supported") {}
};

class DegenerateWindow : public DataError {
public:
  using DataError::DataError;
};

class TooFewSubjects : public DataError {
public:
  using DataError::DataError;
};

class UnknownGroupVariable : public DataError {
public:
  explicit UnknownGroupVariable(const std::string &name)
      : DataError("UnknownGroupVariable: '" + name +
                  "' is not a covariate of the fitted model") {}
};

class ConstantGroupVariable : public DataError {
public:
  explicit ConstantGroupVariable(const std::string &name)
      : DataError("ConstantGroupVariable: '" + name +
                  "' takes a single value; nothing to contrast") {}
};

// ---- estimation errors -----------------------------------------------------

class DomainError : public EstimationError {
public:
  using EstimationError::EstimationError;
};

class SingularSystem : public EstimationError {
public:
  using EstimationError::EstimationError;
};

class SingularDesign : public EstimationError {
public:
  using EstimationError::EstimationError;
};

class SingularCovariance : public EstimationError {
public:
  using EstimationError::EstimationError;
};

class NonConvergence : public EstimationError {
public:
  using EstimationError::EstimationError;
};

class DegenerateWeights : public EstimationError {
public:
  using EstimationError::EstimationError;
};

class InvalidSE : public EstimationError {
public:
  using EstimationError::EstimationError;
};

class NoConvergedFits : public EstimationError {
public:
  NoConvergedFits() : EstimationError("NoConvergedFits: no replication converged") {}
};

class InfeasibleInclusion : public EstimationError {
public:
  using EstimationError::EstimationError;
};

// ---- usage errors ----------------------------------------------------------

class ConfigError : public UsageError {
public:
  using UsageError::UsageError;
};

} // namespace nlmix
