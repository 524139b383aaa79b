#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pfr/random.hpp"
#include "pfr/tensor.hpp"

namespace testing_support {

inline pfr::Tensor random_tensor(pfr::Rng& rng, pfr::Shape shape, bool grad = true, double scale = 1.0) {
  std::vector<double> v(pfr::shape_numel(shape));
  for (auto& x : v) x = rng.normal(0.0, scale);
  return pfr::Tensor::from(std::move(shape), std::move(v), grad);
}

inline std::vector<double> to_vec(const pfr::Tensor& t) { return {t.data().begin(), t.data().end()}; }

// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("pfr_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testing_support
