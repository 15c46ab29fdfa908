#pragma once

// Shared helpers for the unit tests: scratch directories and a central-difference
// gradient checker usable against any taped objective.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include "drd/numerics.hpp"
#include "drd/rng.hpp"

namespace testutil {

// Unique directory under the system temp root, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            (tag + "-" + std::to_string(rd()) + "-" +
             std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

struct FdReport {
  double worst_rel = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
};

// Central differences against the analytic gradient already stored in
// params.grad. `objective` must re-evaluate the scalar from current values.
inline FdReport fd_check(drd::numerics::ParamStore& params,
                         const std::function<double()>& objective,
                         int probes_per_param, drd::Rng& rng,
                         double h = 1e-5) {
  FdReport report;
  for (std::size_t pi = 0; pi < params.count(); ++pi) {
    auto& p = params.param(pi);
    for (int k = 0; k < probes_per_param; ++k) {
      const std::size_t i = rng.below(p.value.size());
      const double keep = p.value[i];
      p.value[i] = keep + h;
      const double up = objective();
      p.value[i] = keep - h;
      const double down = objective();
      p.value[i] = keep;
      const double fd = (up - down) / (2.0 * h);
      const double an = p.grad[i];
      // central differences carry ~1e-9 absolute noise at h=1e-5, so the
      // denominator floors at 1e-3: components below it are compared
      // absolutely (still catches any real gradient bug, which shows up in
      // large components or as absolute drift well above the noise)
      const double scale = std::max({1e-3, std::abs(fd), std::abs(an)});
      const double rel = std::abs(fd - an) / scale;
      if (rel > report.worst_rel) {
        report.worst_rel = rel;
        report.worst_param = p.name;
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace testutil
