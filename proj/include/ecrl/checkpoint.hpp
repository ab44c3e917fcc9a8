#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

namespace ecrl {

// Named-array container: an 8-byte magic, a version field, a JSON header
// describing array names/shapes/offsets plus free-form metadata, then one
// contiguous float64 blob. Loading validates magic, version and size and
// throws on any mismatch; no partial state is ever returned.
class Checkpoint {
 public:
  static constexpr uint32_t kFormatVersion = 1;

  nlohmann::json meta;

  void put(const std::string& name, const Eigen::MatrixXd& m);

  template <class T>
  void put_cast(const std::string& name,
                const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>& m) {
    put(name, m.template cast<double>());
  }

  bool has(const std::string& name) const;
  const Eigen::MatrixXd& get(const std::string& name) const;  // throws if missing

  template <class T>
  Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> get_cast(const std::string& name) const {
    return get(name).cast<T>();
  }

  std::vector<std::string> names() const;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

 private:
  std::vector<std::pair<std::string, Eigen::MatrixXd>> arrays_;
};

}  // namespace ecrl
