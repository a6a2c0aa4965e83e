#pragma once

#include <string>
#include <vector>

#include "benchtop/common.hpp"

namespace benchtop {

/// Flat registry of named trainable tensors. Gradients, optimizer moments and
/// EMA shadows are kept as parallel vectors indexed by slot.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Mat value;
  };

  int add(const std::string& name, Mat value) {
    entries_.push_back(Entry{name, std::move(value)});
    return int(entries_.size()) - 1;
  }

  int count() const { return int(entries_.size()); }
  const std::string& name(int slot) const { return entries_[slot].name; }
  Mat& value(int slot) { return entries_[slot].value; }
  const Mat& value(int slot) const { return entries_[slot].value; }

  std::int64_t scalar_count() const {
    std::int64_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  std::vector<Mat> zeros_like() const {
    std::vector<Mat> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(Mat::Zero(e.value.rows(), e.value.cols()));
    return out;
  }

  std::vector<Mat> copy_values() const {
    std::vector<Mat> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.value);
    return out;
  }

  int find(const std::string& name) const {
    for (int i = 0; i < count(); ++i)
      if (entries_[i].name == name) return i;
    return -1;
  }

 private:
  std::vector<Entry> entries_;
};

}  // namespace benchtop
