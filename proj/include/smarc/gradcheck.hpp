#pragma once

#include "smarc/ops.hpp"

#include <vector>

namespace smarc {

template <class S>
constexpr S gradcheck_epsilon() {
  return std::is_same_v<S, double> ? S(1e-6) : S(1e-3);
}

/// Central-difference check of reverse-mode gradients. `op` must map the
/// given inputs to a tensor; non-scalar outputs are sum-reduced. Returns
/// max over coordinates of |analytic - fd| / max(1, |analytic|).
/// When `max_coords_per_input` is positive, a deterministic random subset of
/// coordinates per input is probed instead of all of them.
template <class S, class F>
S finite_diff_check(F&& op, std::vector<Tensor<S>> inputs,
                    S epsilon = gradcheck_epsilon<S>(),
                    Index max_coords_per_input = -1,
                    std::uint64_t sample_seed = 0) {
  bool any_rg = false;
  for (auto& t : inputs) any_rg = any_rg || t.requires_grad();
  if (!any_rg)
    for (auto& t : inputs) t.set_requires_grad(true);

  auto reduce = [&](const Tensor<S>& y) { return y.size() == 1 ? y : sum(y); };

  for (auto& t : inputs) t.zero_grad();
  Tensor<S> y = reduce(op(inputs));
  y.backward();

  std::vector<ArrayX<S>> analytic;
  std::vector<std::size_t> checked;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!inputs[i].requires_grad()) continue;
    checked.push_back(i);
    analytic.push_back(inputs[i].grad());
  }

  // Probe without graph construction.
  for (auto& t : inputs) t.set_requires_grad(false);
  auto eval = [&]() { return reduce(op(inputs)).value(); };

  Rng sampler(0x5eed0000ULL + sample_seed);
  S max_err = S(0);
  for (std::size_t ci = 0; ci < checked.size(); ++ci) {
    Tensor<S>& t = inputs[checked[ci]];
    const ArrayX<S>& a = analytic[ci];
    std::vector<Index> coords;
    if (max_coords_per_input > 0 && t.size() > max_coords_per_input) {
      for (Index j = 0; j < max_coords_per_input; ++j)
        coords.push_back(static_cast<Index>(sampler.next_u64() % static_cast<std::uint64_t>(t.size())));
    } else {
      coords.resize(static_cast<std::size_t>(t.size()));
      for (Index j = 0; j < t.size(); ++j) coords[static_cast<std::size_t>(j)] = j;
    }
    for (Index j : coords) {
      const S saved = t.data()[j];
      t.data()[j] = saved + epsilon;
      const S fp = eval();
      t.data()[j] = saved - epsilon;
      const S fm = eval();
      t.data()[j] = saved;
      const S fd = (fp - fm) / (S(2) * epsilon);
      const S err = std::abs(a[j] - fd) / std::max(S(1), std::abs(a[j]));
      max_err = std::max(max_err, err);
    }
  }
  for (std::size_t i : checked) inputs[i].set_requires_grad(true);
  return max_err;
}

}  // namespace smarc
