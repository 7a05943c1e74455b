#include "tilemark/schedules.hpp"

#include <cmath>

#include "tilemark/error.hpp"

namespace tilemark {

double poly_lr(int epoch, int max_epoch, double base, double power) {
  if (max_epoch < 1) throw DomainError("poly_lr: max_epoch must be >= 1");
  if (epoch < 0 || epoch > max_epoch) {
    throw DomainError("poly_lr: epoch " + std::to_string(epoch) + " outside [0, " +
                      std::to_string(max_epoch) + "]");
  }
  return base * std::pow(1.0 - static_cast<double>(epoch) / max_epoch, power);
}

double step_lr(int epoch, double initial, int halve_every) {
  if (epoch < 0) throw DomainError("step_lr: negative epoch");
  if (halve_every < 1) throw DomainError("step_lr: halve_every must be >= 1");
  return initial * std::ldexp(1.0, -(epoch / halve_every));
}

ScheduleSpec ScheduleSpec::step_halving(double initial, int halve_every) {
  ScheduleSpec s;
  s.kind = Kind::kStepHalving;
  s.initial_lr = initial;
  s.halve_every = halve_every;
  return s;
}

ScheduleSpec ScheduleSpec::poly(double base, int max_epoch, double power) {
  ScheduleSpec s;
  s.kind = Kind::kPoly;
  s.initial_lr = base;
  s.max_epoch = max_epoch;
  s.power = power;
  return s;
}

double ScheduleSpec::rate(int epoch) const {
  return kind == Kind::kPoly ? poly_lr(epoch, max_epoch, initial_lr, power)
                             : step_lr(epoch, initial_lr, halve_every);
}

void ScheduleSpec::validate() const {
  if (!(initial_lr > 0.0)) throw ConfigError("schedule: initial_lr must be positive");
  if (kind == Kind::kStepHalving && halve_every < 1) {
    throw ConfigError("schedule: halve_every must be >= 1");
  }
  if (kind == Kind::kPoly && (max_epoch < 1 || !(power > 0.0))) {
    throw ConfigError("schedule: poly needs max_epoch >= 1 and power > 0");
  }
}

std::string to_string(ScheduleSpec::Kind kind) {
  return kind == ScheduleSpec::Kind::kPoly ? "poly" : "step_halving";
}

ScheduleSpec::Kind schedule_kind_from_string(const std::string& name) {
  if (name == "poly") return ScheduleSpec::Kind::kPoly;
  if (name == "step_halving") return ScheduleSpec::Kind::kStepHalving;
  throw ConfigError("unknown schedule '" + name + "'");
}

}  // namespace tilemark
