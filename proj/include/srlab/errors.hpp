#pragma once

#include <stdexcept>
#include <string>

namespace srlab {

// Base class for everything this library throws on purpose.
// what() always names the failing stage so a CLI can report it on stderr.
class Error : public std::runtime_error {
public:
  Error(std::string stage, const std::string& msg)
      : std::runtime_error(stage + ": " + msg), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

private:
  std::string stage_;
};

// Bad user input: malformed files, unknown keys, out-of-range settings.
struct ConfigError : Error {
  ConfigError(const std::string& msg) : Error("config", msg) {}
};

// --- frame / structure loading ---
struct FrameDependent : Error {
  FrameDependent(const std::string& m) : Error("load_structure", m) {}
};
struct NotBracketGenerating : Error {
  NotBracketGenerating(const std::string& m) : Error("load_structure", m) {}
};
struct DerivativeMismatch : Error {
  DerivativeMismatch(const std::string& m) : Error("load_structure", m) {}
};
struct NoSpan : Error {
  NoSpan(const std::string& m) : Error("hoermander_check", m) {}
};

// --- integration ---
struct LeftChart : Error {
  LeftChart(const std::string& m) : Error("flow", m) {}
};
struct StepBudget : Error {
  StepBudget(const std::string& m) : Error("flow", m) {}
};

// --- boundary-value solving ---
struct NoConvergence : Error {
  NoConvergence(const std::string& stage, const std::string& m) : Error(stage, m) {}
};
struct SingularJacobian : Error {
  SingularJacobian(const std::string& m) : Error("shoot", m) {}
};
struct InvalidRatio : Error {
  InvalidRatio(const std::string& m) : Error("inverse_geodesic", m) {}
};

// --- flag / growth computation ---
struct StencilOutOfRange : Error {
  StencilOutOfRange(const std::string& m) : Error("flag_basis", m) {}
};
struct ControlRecoveryFailed : Error {
  ControlRecoveryFailed(const std::string& m) : Error("flag_basis", m) {}
};
struct NoAmpleFound : Error {
  NoAmpleFound(const std::string& m) : Error("geodesic_dimension_at", m) {}
};

// --- volume / inequality machinery ---
struct PoorFit : Error {
  PoorFit(const std::string& m) : Error("contraction_fit", m) {}
};
struct NoBracket : Error {
  NoBracket(const std::string& m) : Error("find_unit_ratio", m) {}
};
struct ChartOverflow : Error {
  ChartOverflow(const std::string& m) : Error("build_sets", m) {}
};
struct SmoothnessLost : Error {
  SmoothnessLost(const std::string& m) : Error("build_sets", m) {}
};
struct SampleBudget : Error {
  SampleBudget(const std::string& m) : Error("midset_volume_upper", m) {}
};
struct UnsupportedCurvature : Error {
  UnsupportedCurvature(const std::string& m) : Error("tau", m) {}
};
struct DegenerateDimension : Error {
  DegenerateDimension(const std::string& m) : Error("tau", m) {}
};

}  // namespace srlab
