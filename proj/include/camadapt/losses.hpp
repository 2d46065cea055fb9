#pragma once

#include <string>

#include "camadapt/models.hpp"

namespace camadapt {

inline constexpr double kLogFloor = 1e-7;
inline constexpr double kDefaultLambda1 = 0.2;  // identity weight
inline constexpr double kDefaultLambda2 = 5.0;  // cycle weight

enum class ResidueNorm { kL2, kL1 };

ResidueNorm parse_residue_norm(const std::string& token);
std::string to_string(ResidueNorm norm);

// mean log D(real) + mean log(1 - D(fake)), each log clamped below at log(1e-7).
Var adversarial_loss_from_logits(const Var& real_logits, const Var& fake_logits);
Var adversarial_loss(const Discriminator& d, const Var& real_features, const Var& fake_features);

// Generator-side objective for one direction. The saturating form is the
// adversarial loss itself; the non-saturating form replaces the fake term by
// -mean log D(fake).
Var generator_adversarial_from_logits(const Var& real_logits, const Var& fake_logits,
                                      bool non_saturating);

// All six generator passes needed by one cycle/identity evaluation.
struct CyclePasses {
  Transformed a_to_b;  // a_B = a + F(a)
  Transformed b_to_a;  // b_A = b + G(b)
  Var g_of_a_b;        // G(a_B)
  Var f_of_b_a;        // F(b_A)
  Var f_of_b;          // F(b), identity term
  Var g_of_a;          // G(a), identity term
};

CyclePasses run_cycle(const ResidueMap& f, const ResidueMap& g, const Var& a, const Var& b,
                      bool with_identity = true);

Var cycle_loss(const CyclePasses& passes, ResidueNorm norm = ResidueNorm::kL2);
Var identity_loss(const CyclePasses& passes, ResidueNorm norm = ResidueNorm::kL2);

Var cycle_loss(const ResidueMap& f, const ResidueMap& g, const Var& a, const Var& b,
               ResidueNorm norm = ResidueNorm::kL2);
Var identity_loss(const ResidueMap& f, const ResidueMap& g, const Var& a, const Var& b,
                  ResidueNorm norm = ResidueNorm::kL2);

struct LossComponents {
  double gan_f = 0.0;  // L_GAN(F, D_B)
  double gan_g = 0.0;  // L_GAN(G, D_A)
  double cyc = 0.0;
  double idt = 0.0;
};

struct LossBreakdown {
  double gan_f = 0.0;
  double gan_g = 0.0;
  double cyc = 0.0;
  double idt = 0.0;
  double lambda1 = kDefaultLambda1;
  double lambda2 = kDefaultLambda2;
  double total = 0.0;
};

// total = gan_F + gan_G + lambda1 * idt + lambda2 * cyc. Throws kNumerical
// naming the first non-finite component.
LossBreakdown total_loss(const LossComponents& components, double lambda1 = kDefaultLambda1,
                         double lambda2 = kDefaultLambda2);

// Differentiable counterpart used by the generator step.
Var total_loss(const Var& gan_f, const Var& gan_g, const Var& idt, const Var& cyc,
               double lambda1, double lambda2);

}  // namespace camadapt
