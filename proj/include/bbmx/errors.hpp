#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace bbmx {

/// Bad argument or configuration value. `field` names the offending input.
class ValidationError : public std::invalid_argument {
public:
  ValidationError(std::string field, const std::string &message)
      : std::invalid_argument(field + ": " + message), field_(std::move(field)) {}

  const std::string &field() const noexcept { return field_; }

private:
  std::string field_;
};

/// A replica exceeded its particle-event cap.
class ResourceLimitError : public std::runtime_error {
public:
  ResourceLimitError(std::uint64_t events, std::uint64_t cap)
      : std::runtime_error("particle event cap exceeded (" +
                           std::to_string(events) + " > " +
                           std::to_string(cap) + ")"),
        events_(events) {}

  std::uint64_t events() const noexcept { return events_; }

private:
  std::uint64_t events_;
};

/// Rejection sampling of a conditioned decoration ran out of attempts.
class RejectionBudgetError : public std::runtime_error {
public:
  RejectionBudgetError(std::uint64_t rejections, double s, double y,
                       long timestamp_index = -1)
      : std::runtime_error(make_message(rejections, s, y, timestamp_index)),
        rejections_(rejections), s_(s), y_(y), timestamp_index_(timestamp_index) {}

  std::uint64_t rejections() const noexcept { return rejections_; }
  double s() const noexcept { return s_; }
  double y() const noexcept { return y_; }
  long timestamp_index() const noexcept { return timestamp_index_; }

private:
  static std::string make_message(std::uint64_t rejections, double s, double y,
                                  long index) {
    std::string msg = "rejection budget exhausted after " +
                      std::to_string(rejections) + " attempts (s=" +
                      std::to_string(s) + ", y=" + std::to_string(y);
    if (index >= 0) {
      msg += ", timestamp=" + std::to_string(index);
    }
    return msg + ")";
  }

  std::uint64_t rejections_;
  double s_;
  double y_;
  long timestamp_index_;
};

/// A cluster was asked for a depth beyond its measured grid.
class DepthCoverageError : public std::out_of_range {
public:
  explicit DepthCoverageError(double depth)
      : std::out_of_range("depth " + std::to_string(depth) +
                          " exceeds the measured cluster grid"),
        depth_(depth) {}

  double depth() const noexcept { return depth_; }

private:
  double depth_;
};

/// log of an empty level set.
class UndefinedStatisticError : public std::domain_error {
public:
  explicit UndefinedStatisticError(double v)
      : std::domain_error("empty level set at depth " + std::to_string(v)) {}
};

} // namespace bbmx
