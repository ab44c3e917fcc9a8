#include "ecrl/bench.hpp"

#include <algorithm>
#include <fstream>

#include <nlohmann/json.hpp>

#include "ecrl/csv.hpp"

namespace ecrl {

std::vector<double> final_angle_distribution(const std::vector<double>& samples) {
  if (samples.size() < 20)
    throw std::runtime_error("final_angle_distribution: need at least 20 samples, got " +
                             std::to_string(samples.size()));
  std::vector<double> s = samples;
  std::sort(s.begin(), s.end());
  auto quantile = [&](double p) {
    double pos = p * (s.size() - 1);
    size_t lo = static_cast<size_t>(pos);
    size_t hi = std::min(lo + 1, s.size() - 1);
    double frac = pos - lo;
    return s[lo] * (1.0 - frac) + s[hi] * frac;
  };
  return {quantile(0.05), quantile(0.25), quantile(0.50), quantile(0.75), quantile(0.95)};
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void write_benchmark_report(const BenchmarkReport& r, const std::string& json_path,
                            const std::string& per_goal_csv, const std::string& angles_csv) {
  nlohmann::json j;
  j["mode"] = r.mode_label;
  j["object"] = r.object;
  j["n_trials"] = r.n_trials;
  j["total_rollouts"] = r.total_rollouts;
  j["success_rate_percent"] = r.overall_B;
  j["estimator_error_mean_rad"] = r.est_err_mean;
  j["estimator_error_std_rad"] = r.est_err_std;
  j["estimator_error_averaging"] = "per-step over all evaluation rollouts";
  j["per_goal_success"] = r.per_goal_success;
  std::vector<double> all;
  for (const auto& g : r.final_angles) all.insert(all.end(), g.begin(), g.end());
  if (all.size() >= 20) {
    auto q = final_angle_distribution(all);
    j["final_angle_quantiles_rad"] = {{"p05", q[0]}, {"p25", q[1]}, {"p50", q[2]},
                                      {"p75", q[3]}, {"p95", q[4]}};
  }
  std::ofstream f(json_path);
  if (!f) throw std::runtime_error("cannot write " + json_path);
  f << j.dump(2) << "\n";

  CsvWriter goals(per_goal_csv, {"goal_index", "success_rate", "mode", "object"});
  for (size_t g = 0; g < r.per_goal_success.size(); ++g)
    goals.row() << static_cast<int>(g) << r.per_goal_success[g] << r.mode_label << r.object;

  CsvWriter angles(angles_csv, {"goal_index", "trial", "final_angle_rad", "mode", "object"});
  for (size_t g = 0; g < r.final_angles.size(); ++g)
    for (size_t tr = 0; tr < r.final_angles[g].size(); ++tr)
      angles.row() << static_cast<int>(g) << static_cast<int>(tr) << r.final_angles[g][tr]
                   << r.mode_label << r.object;
}

std::string consecutive_counts_string(const ConsecutiveReport& r) {
  std::string s = "[";
  for (size_t i = 0; i < r.counts.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(r.counts[i]);
  }
  return s + "]";
}

void write_consecutive_report(const ConsecutiveReport& r, const std::string& json_path) {
  nlohmann::json j;
  j["mode"] = r.mode_label;
  j["cap"] = r.cap;
  j["counts"] = r.counts;
  j["median"] = r.median;
  std::ofstream f(json_path);
  if (!f) throw std::runtime_error("cannot write " + json_path);
  f << j.dump(2) << "\n";
}

}  // namespace ecrl
