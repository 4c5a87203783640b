#include <benchmark/benchmark.h>

#include "kstep/models/conditional_model.hpp"
#include "kstep/models/cox_current_status.hpp"
#include "kstep/models/partial_spline.hpp"
#include "kstep/rate_calculus.hpp"

using namespace kstep;

static void BM_EmitTables(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(rates::emit_tables());
}
BENCHMARK(BM_EmitTables);

static void BM_CoxNpmle(benchmark::State& state) {
  const long n = state.range(0);
  const auto data = std::get<models::CSDataset>(models::generate(models::ModelKind::CoxCurrentStatus, n, Vector::Constant(1, 1.0), 1));
  const models::CurrentStatusData prepared(data);
  const auto solver = state.range(1) == 0 ? models::NpmleSolver::Pava : models::NpmleSolver::Icm;
  const Vector theta = Vector::Constant(1, 0.8);
  for (auto _ : state) benchmark::DoNotOptimize(prepared.npmle(theta, solver).loglik);
}
BENCHMARK(BM_CoxNpmle)->ArgsProduct({{200, 800, 3200}, {0, 1}})->ArgNames({"n", "icm"});

static void BM_SplineSmoother(benchmark::State& state) {
  const long n = state.range(0);
  Vector z(n), u(n);
  for (long i = 0; i < n; ++i) z[i] = (i + 1.0) / n, u[i] = std::sin(7.0 * z[i]);
  for (auto _ : state) {
    models::SplineSmoother s(z, 0.05);
    benchmark::DoNotOptimize(s.apply(u));
  }
  state.SetComplexityN(n);
}
BENCHMARK(BM_SplineSmoother)->RangeMultiplier(4)->Range(100, 6400)->Complexity();

static void BM_PartialSplineOneStep(benchmark::State& state) {
  const long n = state.range(0);
  Vector theta0(8);
  theta0 << 3, 1.5, 0, 0, 2, 0, 0, 0;
  const auto data = std::get<models::PLMDataset>(models::generate(models::ModelKind::PartialLinear, n, theta0, 1));
  for (auto _ : state) {
    const auto pen0 = models::scaled_penalty(n, 0.1, 2.0, Vector::Ones(8));
    const models::PartialSplineProblem prob(data, pen0.lambda);
    const Vector tilde = prob.unpenalized();
    benchmark::DoNotOptimize(prob.one_step_sparse(models::scaled_penalty(n, 0.1, 2.0, tilde), tilde));
  }
}
BENCHMARK(BM_PartialSplineOneStep)->Arg(400)->Arg(1600);

static void BM_CemEvaluate(benchmark::State& state) {
  const long n = state.range(0);
  const Vector theta0 = (Vector(2) << 1.0, 0.5).finished();
  const auto data = std::get<models::CEMDataset>(models::generate(models::ModelKind::CemNormal, n, theta0, 1));
  const models::CemCriterion c(data, {});
  const Vector theta = (Vector(2) << 0.9, 0.6).finished();
  for (auto _ : state) {
    if (state.range(1) == 0) {
      benchmark::DoNotOptimize(c.evaluate(theta));
    } else {
      benchmark::DoNotOptimize(c.hessian(theta));
    }
  }
}
BENCHMARK(BM_CemEvaluate)->ArgsProduct({{400, 1600}, {0, 1}})->ArgNames({"n", "hessian"});

BENCHMARK_MAIN();
