#pragma once

// Central-difference gradient checks.
//
// Error is reported two ways. `max_rel_err` is the norm-wise relative error per
// checked tensor, ||a - n|| / max(||a||, ||n||). `max_coord_err` is the worst
// per-coordinate relative error; it is only meaningful at steps small enough
// for truncation error to stay below the tolerance on small components;
// components below 1e-4 in magnitude are judged against that floor.
//
// A coordinate whose +-h evaluations land on a different smooth piece than the
// base point (a ReLU sign flip or a new min/max argument, detected through the
// tape's branch signature) has no meaningful finite difference at that step; it
// is counted as `kinked` and the next coordinate is tried instead.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>

#include "bdm/autodiff.hpp"
#include "bdm/parameter.hpp"

namespace bdm::testing {

inline constexpr double kFdStep = 1e-3;
inline constexpr double kFdRelTol = 1e-4;

struct GradCheck {
  double max_rel_err = 0.0;
  std::string worst;
  double max_coord_err = 0.0;
  std::string worst_coord;
  std::size_t checked = 0;
  std::size_t kinked = 0;
};

struct Eval {
  double value;
  std::uint64_t signature;
};

/// Checks up to `count` coordinates of `values` from a shuffled order, skipping kinked ones.
inline void check_coordinates(std::vector<double>& values, const std::vector<double>& analytic,
                              const std::function<Eval()>& eval, std::size_t count, double step,
                              std::mt19937_64& rng, const std::string& label, GradCheck& r) {
  const std::uint64_t base = eval().signature;
  std::vector<std::size_t> order(values.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  std::size_t done = 0;
  for (std::size_t i : order) {
    if (done == count) break;
    const double saved = values[i];
    values[i] = saved + step;
    const Eval up = eval();
    values[i] = saved - step;
    const Eval down = eval();
    values[i] = saved;
    if (up.signature != base || down.signature != base) {
      ++r.kinked;
      continue;
    }
    const double a = analytic[i];
    const double n = (up.value - down.value) / (2 * step);
    diff2 += (a - n) * (a - n);
    a2 += a * a;
    n2 += n * n;
    const double coord = std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-4});
    if (coord > r.max_coord_err) {
      r.max_coord_err = coord;
      r.worst_coord = label + "[" + std::to_string(i) + "] analytic " + std::to_string(a) + " numeric " +
                      std::to_string(n);
    }
    ++done;
  }
  r.checked += done;
  const double rel = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-8});
  if (rel > r.max_rel_err) {
    r.max_rel_err = rel;
    r.worst = label;
  }
}

/// Checks every parameter in `store` (up to `per_param` entries each) against the
/// taped gradient of `loss(tape)`.
inline GradCheck check_params(ParameterStore& store, const std::function<Var(Tape&)>& loss,
                              std::size_t per_param = 24, double step = kFdStep, std::uint64_t seed = 5) {
  store.zero_grad();
  {
    Tape tape;
    tape.backward(loss(tape));
  }
  std::vector<std::vector<double>> analytic;
  for (const Parameter* p : store.all()) analytic.push_back(p->gradient.values());
  store.zero_grad();
  const std::function<Eval()> eval = [&] {
    Tape tape(false);
    const double v = loss(tape).value().item();
    return Eval{v, tape.branch_signature()};
  };
  std::mt19937_64 rng(seed);
  GradCheck r;
  std::size_t k = 0;
  for (Parameter* p : store.all()) {
    check_coordinates(p->value.values(), analytic[k++], eval, per_param, step, rng, p->name, r);
  }
  return r;
}

/// Same check for a free input tensor fed through `loss(tape, x)`; every coordinate is tried.
inline GradCheck check_input(Tensor2 x, const std::function<Var(Tape&, Var)>& loss, double step = kFdStep) {
  Tensor2 analytic;
  {
    Tape tape;
    Var xv = tape.variable(x);
    tape.backward(loss(tape, xv));
    analytic = tape.grad(xv);
  }
  const std::function<Eval()> eval = [&] {
    Tape tape(false);
    const double v = loss(tape, tape.variable(x)).value().item();
    return Eval{v, tape.branch_signature()};
  };
  std::mt19937_64 rng(1);
  GradCheck r;
  check_coordinates(x.values(), analytic.values(), eval, x.size(), step, rng, "x", r);
  return r;
}

inline Tensor2 random_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Tensor2 t(rows, cols);
  for (double& v : t.values()) v = d(rng);
  return t;
}

}  // namespace bdm::testing
