#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "covkl/harness/config.hpp"
#include "covkl/optimize.hpp"
#include "test_util.hpp"

using namespace covkl;
using namespace covkl::test;

namespace {

PopulationModel random_model(Eigen::Index n, RngStream& rng) {
  const auto c = random_spd(n, rng);
  const auto e = eigendecompose(c);
  return {c, e.spectrum(), e.basis, random_basis(n, rng)};
}

double max_rel(const Vector& a, const Vector& b) { return (a - b).cwiseQuotient(b).cwiseAbs().maxCoeff(); }

PopulationModel fig1_left_population() {
  const auto cfg = harness::default_config(harness::Experiment::fig1_left);
  RngStream rng(cfg.master_seed, harness::kSharedStream);
  return gen_population(2, cfg.ratio, cfg.rotation_scale, rng, BasisMode::identity);
}

}  // namespace

TEST(OracleFrobenius, Eigenbasis) {
  RngStream rng(1, 0);
  const auto c = random_spd(6, rng);
  const auto e = eigendecompose(c);
  EXPECT_LT((oracle_frobenius(c, e.basis).values() - e.eigenvalues).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(OracleFrobenius, IdentityBasisGivesDiagonal) {
  RngStream rng(2, 0);
  const auto c = random_spd(5, rng);
  EXPECT_EQ(oracle_frobenius(c, OrthonormalBasis::identity(5)).values(), c.dense().diagonal());
}

TEST(OracleFrobenius, FortyFiveDegreeRotation) {
  Vector d(2);
  d << 3.0, 0.4;
  const auto l = oracle_frobenius(SymmetricMatrix::diagonal(d), OrthonormalBasis(rotation2(std::numbers::pi / 4)));
  EXPECT_NEAR(l[0], 1.7, 1e-15);
  EXPECT_NEAR(l[1], 1.7, 1e-15);
}

TEST(OracleFrobenius, PreservesTrace) {
  RngStream rng(3, 0);
  const auto pop = gen_population(20, 1.3, 0.2, rng);
  EXPECT_NEAR(oracle_frobenius(pop.c, pop.rie_basis).values().sum(), 20.0, 1e-10);
}

TEST(KlGaussianGradient, VanishesAtOracle) {
  RngStream rng(4, 0);
  const auto c = random_spd(8, rng);
  const auto v = random_basis(8, rng);
  EXPECT_LT(kl_gaussian_gradient(c, v, oracle_frobenius(c, v)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(KlGaussianGradient, ScalarExample) {
  const auto g = kl_gaussian_gradient(SymmetricMatrix::diagonal(Vector::Constant(1, 2.0)), OrthonormalBasis::identity(1),
                                      Spectrum(Vector::Ones(1)));
  EXPECT_DOUBLE_EQ(g[0], -0.5);
}

TEST(KlGaussianGradient, MatchesFiniteDifferences) {
  RngStream rng(5, 0);
  for (int trial = 0; trial < 10; ++trial) {
    const auto c = random_spd(5, rng);
    const auto v = random_basis(5, rng);
    Vector l(5);
    for (Eigen::Index k = 0; k < 5; ++k) l[k] = rng.uniform(0.3, 2.0);
    const Vector g = kl_gaussian_gradient(c, v, Spectrum(l));
    const double h = 1e-5;
    for (Eigen::Index k = 0; k < 5; ++k) {
      Vector up = l, dn = l;
      up[k] += h;
      dn[k] -= h;
      const double fd =
          (kl_gaussian(c, rie_build(v, Spectrum(up))).mean - kl_gaussian(c, rie_build(v, Spectrum(dn))).mean) / (2 * h);
      EXPECT_NEAR(g[k], fd, 1e-6);
    }
  }
}

TEST(KlGaussianGradient, RejectsMismatch) {
  EXPECT_THROW(kl_gaussian_gradient(SymmetricMatrix::identity(2), OrthonormalBasis::identity(2), Spectrum(Vector::Ones(3))),
               DimensionMismatch);
}

TEST(OptimizerOptions, Validation) {
  OptimizerOptions o;
  EXPECT_NO_THROW(o.validate(true));
  o.mc_samples = 50;
  EXPECT_THROW(o.validate(true), InvalidArgument);
  EXPECT_NO_THROW(o.validate(false));
  o = OptimizerOptions{};
  o.lambda_floor = 0.0;
  EXPECT_THROW(o.validate(false), InvalidArgument);
  o = OptimizerOptions{};
  o.finite_diff_step = -1.0;
  EXPECT_THROW(o.validate(false), InvalidArgument);
}

TEST(MinimizeKlGaussian, RecoversFrobeniusOracle) {
  RngStream rng(6, 0);
  for (Eigen::Index n : {2, 5, 30}) {
    for (int trial = 0; trial < 5; ++trial) {
      const auto pop = gen_population(n, 1.4, 0.3, rng, BasisMode::random);
      const auto res = minimize_kl_gaussian(pop);
      EXPECT_TRUE(res.converged) << "n=" << n;
      EXPECT_LE(res.kkt_residual, 1e-8);
      EXPECT_LT(max_rel(res.spectrum.values(), oracle_frobenius(pop.c, pop.rie_basis).values()), 1e-6);
    }
  }
}

TEST(MinimizeKlGaussian, MultiStartAgreement) {
  RngStream rng(7, 0);
  const auto pop = gen_population(10, 1.5, 0.3, rng, BasisMode::random);
  const Vector lf = oracle_frobenius(pop.c, pop.rie_basis).values();
  const auto from_ones = minimize_kl_gaussian(pop);
  auto opts = OptimizerOptions::gaussian_defaults();
  Vector start = lf;
  for (Eigen::Index k = 0; k < start.size(); ++k) start[k] *= (k % 2) ? 0.8 : 1.2;
  opts.initial = start;
  const auto from_perturbed = minimize_kl_gaussian(pop, opts);
  EXPECT_LT(max_rel(from_ones.spectrum.values(), from_perturbed.spectrum.values()), 1e-6);
}

TEST(MinimizeKlGaussian, TraceHeldAtEveryIterateAndDescent) {
  RngStream rng(8, 0);
  const auto pop = gen_population(30, 1.8, 0.3, rng, BasisMode::random);
  const auto res = minimize_kl_gaussian(pop);
  EXPECT_LE(res.max_trace_violation, 1e-10);
  EXPECT_NEAR(res.spectrum.values().sum(), 30.0, 1e-10);
  for (std::size_t i = 1; i < res.history.size(); ++i) EXPECT_LE(res.history[i], res.history[i - 1]);
}

TEST(MinimizeKlGaussian, UnconstrainedOnNonCorrelationMatrix) {
  RngStream rng(9, 0);
  const auto pop = random_model(6, rng);
  auto opts = OptimizerOptions::gaussian_defaults();
  opts.constraint = Constraint::unconstrained;
  const auto res = minimize_kl_gaussian(pop, opts);
  EXPECT_TRUE(res.converged);
  EXPECT_LT(max_rel(res.spectrum.values(), oracle_frobenius(pop.c, pop.rie_basis).values()), 1e-6);
}

TEST(MinimizeKlGaussian, FiniteDifferenceGradientPath) {
  RngStream rng(10, 0);
  const auto pop = gen_population(5, 1.5, 0.3, rng, BasisMode::random);
  auto opts = OptimizerOptions::gaussian_defaults();
  opts.analytic_gradient = false;
  opts.gradient_tolerance = 1e-6;
  const auto res = minimize_kl_gaussian(pop, opts);
  EXPECT_TRUE(res.converged);
  EXPECT_LT(max_rel(res.spectrum.values(), oracle_frobenius(pop.c, pop.rie_basis).values()), 1e-5);
}

TEST(FrozenKlObjective, DerivativesMatchFiniteDifferences) {
  RngStream rng(11, 0);
  const auto pop = gen_population(4, 1.6, 0.3, rng, BasisMode::random);
  for (bool cv : {false, true}) {
    for (double nu : {3.0, kGaussianNu}) {
      RngStream draw(11, 1);
      const auto block = sample_mvt(pop.c, nu, 2000, draw);
      const FrozenKlObjective f(pop.c, pop.rie_basis, block, cv);
      Vector l(4);
      l << 1.7, 1.1, 0.7, 0.5;
      const Vector g = f.gradient(l);
      const Matrix h = f.hessian(l);
      const double step = 1e-5;
      for (Eigen::Index k = 0; k < 4; ++k) {
        Vector up = l, dn = l;
        up[k] += step;
        dn[k] -= step;
        EXPECT_NEAR(g[k], (f.value(up) - f.value(dn)) / (2 * step), 1e-6);
        const Vector hk = (f.gradient(up) - f.gradient(dn)) / (2 * step);
        for (Eigen::Index j = 0; j < 4; ++j) EXPECT_NEAR(h(j, k), hk[j], 1e-5);
      }
      EXPECT_NEAR(f.value(l), f.terms(l).mean(), 1e-12);
    }
  }
}

TEST(FrozenKlObjective, MatchesDirectMonteCarloTerms) {
  RngStream rng(12, 0);
  const auto pop = gen_population(3, 1.6, 0.3, rng, BasisMode::random);
  RngStream draw(12, 1);
  const auto block = sample_mvt(pop.c, 5.0, 500, draw);
  const FrozenKlObjective f(pop.c, pop.rie_basis, block, false);
  Vector l(3);
  l << 1.5, 1.0, 0.5;
  const StudentT pc(pop.c, 5.0), px(pop.rie_basis, Spectrum(l), 5.0);
  const Vector t = f.terms(l);
  for (Eigen::Index i = 0; i < 500; ++i) {
    const Vector x = block.data.row(i).transpose();
    EXPECT_NEAR(t[i], pc.logpdf(x) - px.logpdf(x), 1e-10);
  }
}

TEST(MinimizeKlT, GaussianRegimeRecoversOracle) {
  RngStream rng(13, 0);
  const auto pop = gen_population(5, 1.5, 0.3, rng, BasisMode::random);
  RngStream stream(13, 1);
  const auto res = minimize_kl_t(pop, 1e6, OptimizerOptions{}, stream);
  EXPECT_LT(max_rel(res.spectrum.values(), oracle_frobenius(pop.c, pop.rie_basis).values()), 1e-3);
}

TEST(MinimizeKlT, Fig1LeftScenarioBeatsOracle) {
  const auto pop = fig1_left_population();
  const Vector lf = oracle_frobenius(pop.c, pop.rie_basis).values();
  OptimizerOptions opts;
  const int streams = 8;
  RunningStats location;
  for (int s = 0; s < streams; ++s) {
    RngStream rng(100, static_cast<std::uint64_t>(s));
    const auto f = make_frozen_objective(pop, 4.0, opts, rng);
    const auto res = minimize_spectrum(f, lf, opts);
    EXPECT_LE(f.value(res.spectrum.values()), f.value(lf));
    location.push(res.spectrum[0]);
  }
  EXPECT_GT(std::abs(location.mean - lf[0]), 3.0 * location.std_error())
      << "lambda_KL=" << location.mean << " lambda_F=" << lf[0];
}

TEST(MinimizeKlT, CommonRandomNumbersAreBitReproducible) {
  RngStream rng(14, 0);
  const auto pop = gen_population(6, 1.8, 0.2, rng, BasisMode::random);
  RngStream a(14, 1), b(14, 1);
  const auto ra = minimize_kl_t(pop, 3.0, OptimizerOptions{}, a);
  const auto rb = minimize_kl_t(pop, 3.0, OptimizerOptions{}, b);
  EXPECT_EQ(ra.spectrum.values(), rb.spectrum.values());
  EXPECT_EQ(ra.objective.mean, rb.objective.mean);
}

TEST(MinimizeKlT, DescentAndOracleDominance) {
  RngStream rng(15, 0);
  const auto pop = gen_population(12, 1.8, 0.2, rng, BasisMode::random);
  for (double nu : {2.5, 4.0, 10.0}) {
    OptimizerOptions opts;
    RngStream s1(15, 1), s2(15, 1);
    const auto f = make_frozen_objective(pop, nu, opts, s1);
    const auto res = minimize_kl_t(pop, nu, opts, s2);
    for (std::size_t i = 1; i < res.history.size(); ++i) EXPECT_LE(res.history[i], res.history[i - 1]);
    EXPECT_LE(res.objective.mean, f.value(oracle_frobenius(pop.c, pop.rie_basis).values()));
    EXPECT_LE(res.max_trace_violation, 1e-10);
    EXPECT_TRUE(!res.converged || res.kkt_residual <= opts.gradient_tolerance);
  }
}

TEST(MinimizeKlT, NonConvergenceReturnsBestIterate) {
  RngStream rng(16, 0);
  const auto pop = gen_population(10, 1.8, 0.3, rng, BasisMode::random);
  OptimizerOptions opts;
  opts.max_iterations = 1;
  opts.gradient_tolerance = 1e-14;
  RngStream s(16, 1);
  const auto res = minimize_kl_t(pop, 2.5, opts, s);
  EXPECT_FALSE(res.converged);
  EXPECT_LE(res.history.back(), res.history.front());
}

TEST(MinimizeKlT, RejectsBadOptions) {
  RngStream rng(17, 0);
  const auto pop = gen_population(3, 1.8, 0.3, rng);
  OptimizerOptions opts;
  opts.mc_samples = 10;
  RngStream s(17, 1);
  EXPECT_THROW(minimize_kl_t(pop, 4.0, opts, s), InvalidArgument);
  opts = OptimizerOptions{};
  EXPECT_THROW(minimize_kl_t(pop, 0.0, opts, s), InvalidArgument);
}
