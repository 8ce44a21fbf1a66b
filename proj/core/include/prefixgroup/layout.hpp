#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace pg {

// One shared prefix followed by G responses. In the shared sequence response i
// occupies [suffix_begin(i), suffix_end(i)).
class GroupLayout {
 public:
  GroupLayout(std::size_t prefix_len, std::vector<std::size_t> suffix_lens);

  std::size_t prefix_len() const { return prefix_len_; }
  const std::vector<std::size_t>& suffix_lens() const { return suffix_lens_; }
  std::size_t suffix_len(std::size_t i) const { return suffix_lens_.at(i); }
  std::size_t group_size() const { return suffix_lens_.size(); }
  std::size_t total_suffix() const { return total_suffix_; }
  std::size_t total() const { return prefix_len_ + total_suffix_; }
  std::size_t max_suffix() const { return max_suffix_; }

  // Start of response i in the shared sequence.
  std::size_t suffix_begin(std::size_t i) const { return offsets_.at(i); }
  std::size_t suffix_end(std::size_t i) const { return offsets_.at(i) + suffix_lens_.at(i); }

  // Row length of the padded repeated batch.
  std::size_t padded_len() const { return prefix_len_ + max_suffix_; }

  bool uniform() const;
  std::string to_string() const;

  bool operator==(const GroupLayout& other) const = default;

 private:
  std::size_t prefix_len_;
  std::vector<std::size_t> suffix_lens_;
  std::vector<std::size_t> offsets_;
  std::size_t total_suffix_ = 0;
  std::size_t max_suffix_ = 0;
};

}  // namespace pg
