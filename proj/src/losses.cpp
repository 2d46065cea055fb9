#include "camadapt/losses.hpp"

#include <cmath>

#include "camadapt/error.hpp"
#include "camadapt/ops.hpp"

namespace camadapt {
namespace {

void check_logits(const Var& logits, const char* which) {
  if (!logits || logits.value().size() == 0) {
    fail(ErrorKind::kInvalidArgument, std::string("adversarial loss: empty ") + which + " batch");
  }
}

Var residue_penalty(const Var& r, ResidueNorm norm) {
  return norm == ResidueNorm::kL2 ? ops::mean_square(r) : ops::mean_abs(r);
}

}  // namespace

ResidueNorm parse_residue_norm(const std::string& token) {
  if (token == "l2") return ResidueNorm::kL2;
  if (token == "l1") return ResidueNorm::kL1;
  fail(ErrorKind::kConfig, "unknown residue norm '" + token + "' (expected l2 or l1)");
}

std::string to_string(ResidueNorm norm) { return norm == ResidueNorm::kL2 ? "l2" : "l1"; }

Var adversarial_loss_from_logits(const Var& real_logits, const Var& fake_logits) {
  check_logits(real_logits, "real");
  check_logits(fake_logits, "fake");
  return ops::add(ops::mean(ops::log_sigmoid_clamped(real_logits, true, kLogFloor)),
                  ops::mean(ops::log_sigmoid_clamped(fake_logits, false, kLogFloor)));
}

Var adversarial_loss(const Discriminator& d, const Var& real_features, const Var& fake_features) {
  return adversarial_loss_from_logits(d.logits(real_features), d.logits(fake_features));
}

Var generator_adversarial_from_logits(const Var& real_logits, const Var& fake_logits,
                                      bool non_saturating) {
  if (!non_saturating) return adversarial_loss_from_logits(real_logits, fake_logits);
  check_logits(real_logits, "real");
  check_logits(fake_logits, "fake");
  return ops::sub(ops::mean(ops::log_sigmoid_clamped(real_logits, true, kLogFloor)),
                  ops::mean(ops::log_sigmoid_clamped(fake_logits, true, kLogFloor)));
}

CyclePasses run_cycle(const ResidueMap& f, const ResidueMap& g, const Var& a, const Var& b,
                      bool with_identity) {
  CyclePasses p;
  p.a_to_b = transform(f, a);
  p.b_to_a = transform(g, b);
  p.g_of_a_b = g.residue(p.a_to_b.image);
  p.f_of_b_a = f.residue(p.b_to_a.image);
  if (with_identity) {
    p.f_of_b = f.residue(b);
    p.g_of_a = g.residue(a);
  }
  return p;
}

Var cycle_loss(const CyclePasses& p, ResidueNorm norm) {
  return ops::add(residue_penalty(ops::add(p.a_to_b.residue, p.g_of_a_b), norm),
                  residue_penalty(ops::add(p.b_to_a.residue, p.f_of_b_a), norm));
}

Var identity_loss(const CyclePasses& p, ResidueNorm norm) {
  if (!p.f_of_b || !p.g_of_a) fail(ErrorKind::kInvalidArgument, "identity passes were not run");
  return ops::add(residue_penalty(p.f_of_b, norm), residue_penalty(p.g_of_a, norm));
}

Var cycle_loss(const ResidueMap& f, const ResidueMap& g, const Var& a, const Var& b,
               ResidueNorm norm) {
  return cycle_loss(run_cycle(f, g, a, b, false), norm);
}

Var identity_loss(const ResidueMap& f, const ResidueMap& g, const Var& a, const Var& b,
                  ResidueNorm norm) {
  return ops::add(residue_penalty(f.residue(b), norm), residue_penalty(g.residue(a), norm));
}

LossBreakdown total_loss(const LossComponents& c, double lambda1, double lambda2) {
  const std::pair<const char*, double> terms[] = {
      {"gan_F", c.gan_f}, {"gan_G", c.gan_g}, {"idt", c.idt}, {"cyc", c.cyc},
      {"lambda1", lambda1}, {"lambda2", lambda2}};
  for (const auto& [name, value] : terms) {
    if (!std::isfinite(value)) {
      fail(ErrorKind::kNumerical, std::string("non-finite loss term ") + name + " = " +
                                      std::to_string(value));
    }
  }
  LossBreakdown out;
  out.gan_f = c.gan_f;
  out.gan_g = c.gan_g;
  out.cyc = c.cyc;
  out.idt = c.idt;
  out.lambda1 = lambda1;
  out.lambda2 = lambda2;
  out.total = c.gan_f + c.gan_g + lambda1 * c.idt + lambda2 * c.cyc;
  return out;
}

Var total_loss(const Var& gan_f, const Var& gan_g, const Var& idt, const Var& cyc,
               double lambda1, double lambda2) {
  return ops::add(ops::add(gan_f, gan_g),
                  ops::add(ops::scale(idt, lambda1), ops::scale(cyc, lambda2)));
}

}  // namespace camadapt
