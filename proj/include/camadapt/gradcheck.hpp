#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace camadapt {

struct GradcheckOptions {
  int size = 32;  // image side; must be a multiple of 16
  std::uint64_t seed = 7;
  int samples = 20;  // sampled scalars per parameter group and term
  double tolerance = 1e-2;
  double step = 1e-5;
  int batch = 2;
  // Negative control: scales analytic gradients by 1.5 before comparison.
  bool corrupt_gradient = false;
};

struct GradcheckGroup {
  std::string name;  // generator, discriminator or classifier
  int checked = 0;
  int skipped = 0;  // draws rejected as non-smooth
  double max_rel_error = 0.0;
};

struct GradcheckRow {
  std::string term;  // gan_F, gan_G, cyc or idt
  std::vector<GradcheckGroup> groups;
  double max_rel_error = 0.0;
  bool passed = false;
};

struct GradcheckReport {
  std::vector<GradcheckRow> rows;
  bool passed = false;
};

// |a - n| / max(|a| + |n|, floor); 0/0 counts as agreement.
double relative_error(double analytic, double numeric, double floor = 1e-6);

// Central finite differences against tape gradients for every loss term, on
// a toy configuration of the generator, discriminator and classifier.
GradcheckReport run_gradcheck(const GradcheckOptions& options);

std::string format_gradcheck(const GradcheckReport& report);

}  // namespace camadapt
