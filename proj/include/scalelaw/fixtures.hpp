#pragma once

// Embedded scaling datasets.
//
//   llm_trivariate    182 points; x = (training dataset size, model parameters,
//                     training steps), y = test cross-entropy
//   imagenet_mix_b16  535 points; x = (training steps, training dataset size),
//                     y = few-shot ImageNet test error rate (MiX/B/16)

#include <string>
#include <vector>

#include "scalelaw/data.hpp"
#include "scalelaw/errors.hpp"
#include "scalelaw/fixture_data.hpp"
#include "scalelaw/wiring.hpp"

namespace scalelaw {

struct Fixture {
  std::string name;
  ScalingDataset data;
  bool overfit = true;
  bool hparam_force = true;  // S = 1
  bool metric_upper_limit = false;
  std::vector<int> dc_input_order;  // empty when DC does not apply
};

namespace detail {

template <typename A>
std::vector<DataPoint> zip_points(std::initializer_list<const A*> xs, const A& y) {
  std::vector<DataPoint> pts(y.size());
  for (std::size_t r = 0; r < y.size(); ++r) {
    for (const A* x : xs) pts[r].x.push_back((*x)[r]);
    pts[r].y = y[r];
  }
  return pts;
}

}  // namespace detail

inline std::vector<std::string> fixture_names() { return {"llm_trivariate", "imagenet_mix_b16"}; }

inline Fixture load_fixture(const std::string& name) {
  namespace fd = fixture_data;
  if (name == "llm_trivariate") {
    Fixture f;
    f.name = name;
    f.data = ScalingDataset(
        detail::zip_points({&fd::llm_trivariate_x1, &fd::llm_trivariate_x2, &fd::llm_trivariate_x3},
                           fd::llm_trivariate_y),
        {"dataset_size", "parameters", "steps"}, "test_cross_entropy");
    // DC inputs: (parameters, tokens processed, unique dataset size)
    f.dc_input_order = {1, 2, 0};
    return f;
  }
  if (name == "imagenet_mix_b16") {
    Fixture f;
    f.name = name;
    f.data = ScalingDataset(
        detail::zip_points({&fd::imagenet_mix_b16_x1, &fd::imagenet_mix_b16_x2},
                           fd::imagenet_mix_b16_y),
        {"steps", "dataset_size"}, "test_error_rate");
    f.metric_upper_limit = true;
    return f;
  }
  throw ArgumentError("unknown fixture '" + name + "' (available: llm_trivariate, imagenet_mix_b16)");
}

// The UNSL configuration matching a fixture's metric and regime.
inline FormSpec fixture_unsl_spec(const Fixture& f, int n) {
  return FormSpec::unsl(static_cast<int>(f.data.arity()), n, f.hparam_force ? 1 : 0, f.overfit,
                        f.metric_upper_limit);
}

}  // namespace scalelaw
