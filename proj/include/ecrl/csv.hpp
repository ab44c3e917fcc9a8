#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ecrl {

// Minimal CSV emitter with deterministic float formatting (%.17g), so that
// identical runs produce byte-identical files.
class CsvWriter {
 public:
  CsvWriter() = default;

  CsvWriter(const std::string& path, const std::vector<std::string>& header, bool append = false) {
    open(path, header, append);
  }

  void open(const std::string& path, const std::vector<std::string>& header, bool append = false) {
    bool write_header = true;
    if (append) {
      std::ifstream probe(path);
      write_header = !probe.good() || probe.peek() == std::ifstream::traits_type::eof();
    }
    f_.open(path, append ? std::ios::app : std::ios::trunc);
    if (!f_) throw std::runtime_error("csv: cannot open " + path);
    if (write_header) {
      for (size_t i = 0; i < header.size(); ++i) f_ << (i ? "," : "") << header[i];
      f_ << "\n";
    }
  }

  class Row {
   public:
    explicit Row(std::ofstream& f) : f_(f) {}
    Row& operator<<(double v) {
      char buf[40];
      snprintf(buf, sizeof(buf), "%.17g", v);
      put(buf);
      return *this;
    }
    Row& operator<<(int v) {
      put(std::to_string(v));
      return *this;
    }
    Row& operator<<(const std::string& s) {
      put(s);
      return *this;
    }
    ~Row() { f_ << "\n"; }

   private:
    void put(const std::string& s) {
      if (n_++) f_ << ",";
      f_ << s;
    }
    std::ofstream& f_;
    int n_ = 0;
  };

  Row row() { return Row(f_); }
  void flush() { f_.flush(); }

 private:
  std::ofstream f_;
};

}  // namespace ecrl
