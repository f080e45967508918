#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "fusenet/tensor.hpp"

namespace fusenet {

// FTNS record: the 4 bytes "FTNS", u32 rank, rank x u32 dims, then the
// values as little-endian IEEE-754 float64. All integers little-endian.
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

using NamedTensor = std::pair<std::string, Tensor>;

/// Writes `<stem>.ftns` (concatenated FTNS records, in order) and
/// `<stem>.index` (one "name<TAB>byte_offset" line per record).
void save_checkpoint(const std::filesystem::path& stem, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& stem);

}  // namespace fusenet
