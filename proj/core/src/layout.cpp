#include "prefixgroup/layout.hpp"

#include <algorithm>
#include <sstream>

#include "prefixgroup/error.hpp"

namespace pg {

GroupLayout::GroupLayout(std::size_t prefix_len, std::vector<std::size_t> suffix_lens)
    : prefix_len_(prefix_len), suffix_lens_(std::move(suffix_lens)) {
  if (prefix_len_ == 0) throw LayoutError("prefix length must be >= 1");
  if (suffix_lens_.empty()) throw LayoutError("group must contain at least one response");
  offsets_.reserve(suffix_lens_.size());
  std::size_t offset = prefix_len_;
  for (std::size_t i = 0; i < suffix_lens_.size(); ++i) {
    if (suffix_lens_[i] == 0) throw LayoutError("response " + std::to_string(i) + " is empty");
    offsets_.push_back(offset);
    offset += suffix_lens_[i];
    total_suffix_ += suffix_lens_[i];
    max_suffix_ = std::max(max_suffix_, suffix_lens_[i]);
  }
}

bool GroupLayout::uniform() const {
  return std::all_of(suffix_lens_.begin(), suffix_lens_.end(),
                     [&](std::size_t n) { return n == suffix_lens_.front(); });
}

std::string GroupLayout::to_string() const {
  std::ostringstream os;
  os << "(L_p=" << prefix_len_ << ", suffix_lens=[";
  for (std::size_t i = 0; i < suffix_lens_.size(); ++i) os << (i ? "," : "") << suffix_lens_[i];
  os << "])";
  return os.str();
}

}  // namespace pg
