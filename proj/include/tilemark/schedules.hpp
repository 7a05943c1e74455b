#pragma once

#include <string>

namespace tilemark {

// base * (1 - epoch / max_epoch)^power; DomainError unless 0 <= epoch <= max_epoch.
double poly_lr(int epoch, int max_epoch, double base, double power);

// initial * 0.5^floor(epoch / halve_every)
double step_lr(int epoch, double initial, int halve_every);

struct ScheduleSpec {
  enum class Kind { kStepHalving, kPoly };

  Kind kind = Kind::kStepHalving;
  double initial_lr = 1e-3;
  int halve_every = 16;
  int max_epoch = 150;
  double power = 0.9;

  static ScheduleSpec step_halving(double initial, int halve_every);
  static ScheduleSpec poly(double base, int max_epoch, double power);

  double rate(int epoch) const;
  void validate() const;
};

std::string to_string(ScheduleSpec::Kind kind);
ScheduleSpec::Kind schedule_kind_from_string(const std::string& name);

}  // namespace tilemark
