#include "ecrl/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace ecrl {

namespace {
constexpr char kMagic[8] = {'E', 'C', 'R', 'L', 'C', 'K', 'P', 'T'};
}

void Checkpoint::put(const std::string& name, const Eigen::MatrixXd& m) {
  for (auto& [n, a] : arrays_) {
    if (n == name) {
      a = m;
      return;
    }
  }
  arrays_.emplace_back(name, m);
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, a] : arrays_)
    if (n == name) return true;
  return false;
}

const Eigen::MatrixXd& Checkpoint::get(const std::string& name) const {
  for (const auto& [n, a] : arrays_)
    if (n == name) return a;
  throw std::runtime_error("checkpoint: missing array '" + name + "'");
}

std::vector<std::string> Checkpoint::names() const {
  std::vector<std::string> out;
  for (const auto& [n, a] : arrays_) out.push_back(n);
  return out;
}

void Checkpoint::save(const std::string& path) const {
  nlohmann::json header;
  header["format_version"] = kFormatVersion;
  header["meta"] = meta;
  uint64_t offset = 0;  // in doubles
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [name, m] : arrays_) {
    arr.push_back({{"name", name},
                   {"rows", m.rows()},
                   {"cols", m.cols()},
                   {"offset", offset}});
    offset += static_cast<uint64_t>(m.size());
  }
  header["arrays"] = arr;
  std::string hs = header.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("checkpoint: cannot open for write: " + path);
  f.write(kMagic, 8);
  uint64_t hlen = hs.size();
  f.write(reinterpret_cast<const char*>(&hlen), 8);
  f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (const auto& [name, m] : arrays_) {
    // column-major, matching Eigen storage
    f.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  if (!f) throw std::runtime_error("checkpoint: write failed: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  uint64_t hlen = 0;
  f.read(reinterpret_cast<char*>(&hlen), 8);
  if (!f || hlen == 0 || hlen > (1ull << 30))
    throw std::runtime_error("checkpoint: corrupt header length in " + path);
  std::string hs(hlen, '\0');
  f.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!f) throw std::runtime_error("checkpoint: truncated header in " + path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(hs);
  } catch (const std::exception& e) {
    throw std::runtime_error("checkpoint: unparseable header in " + path + ": " + e.what());
  }
  uint32_t version = header.value("format_version", 0u);
  if (version != kFormatVersion)
    throw std::runtime_error("checkpoint: format version " + std::to_string(version) +
                             " unsupported (expected " + std::to_string(kFormatVersion) + ")");

  Checkpoint ck;
  ck.meta = header.value("meta", nlohmann::json::object());
  for (const auto& a : header["arrays"]) {
    std::string name = a.at("name").get<std::string>();
    Eigen::Index rows = a.at("rows").get<Eigen::Index>();
    Eigen::Index cols = a.at("cols").get<Eigen::Index>();
    Eigen::MatrixXd m(rows, cols);
    f.read(reinterpret_cast<char*>(m.data()),
           static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!f) throw std::runtime_error("checkpoint: truncated data for '" + name + "' in " + path);
    ck.arrays_.emplace_back(std::move(name), std::move(m));
  }
  return ck;
}

}  // namespace ecrl
