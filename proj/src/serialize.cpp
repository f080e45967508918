#include "fusenet/serialize.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "fusenet/error.hpp"

namespace fusenet {

namespace {

constexpr std::array<char, 4> kMagic = {'F', 'T', 'N', 'S'};
constexpr std::uint32_t kMaxRank = 16;

void put_u32(std::ostream& out, std::uint32_t v) {
  std::array<char, 4> bytes{};
  for (int i = 0; i < 4; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

void put_f64(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  std::array<char, 8> bytes{};
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

template <std::size_t N>
std::array<unsigned char, N> get_bytes(std::istream& in) {
  std::array<char, N> raw{};
  if (!in.read(raw.data(), N)) throw IoError("truncated FTNS record");
  std::array<unsigned char, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = static_cast<unsigned char>(raw[i]);
  return out;
}

std::uint32_t get_u32(std::istream& in) {
  const auto b = get_bytes<4>(in);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& in) {
  const auto b = get_bytes<8>(in);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write(kMagic.data(), kMagic.size());
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
  for (double v : t.values()) put_f64(out, v);
}

Tensor read_tensor(std::istream& in) {
  const auto magic = get_bytes<4>(in);
  for (std::size_t i = 0; i < 4; ++i) {
    if (magic[i] != static_cast<unsigned char>(kMagic[i])) throw IoError("bad FTNS magic");
  }
  const std::uint32_t rank = get_u32(in);
  if (rank == 0 || rank > kMaxRank) throw IoError("bad FTNS rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) d = get_u32(in);
  std::vector<double> values(shape_size(shape));
  for (double& v : values) v = get_f64(in);
  return Tensor(std::move(shape), std::move(values));
}

void save_checkpoint(const std::filesystem::path& stem, const std::vector<NamedTensor>& tensors) {
  auto data_path = stem;
  data_path += ".ftns";
  auto index_path = stem;
  index_path += ".index";
  std::ofstream data(data_path, std::ios::binary | std::ios::trunc);
  std::ofstream index(index_path, std::ios::trunc);
  if (!data || !index) throw IoError("cannot write checkpoint " + stem.string());
  for (const auto& [name, tensor] : tensors) {
    index << name << '\t' << static_cast<std::uint64_t>(data.tellp()) << '\n';
    write_tensor(data, tensor);
  }
  if (!data || !index) throw IoError("failed writing checkpoint " + stem.string());
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& stem) {
  auto data_path = stem;
  data_path += ".ftns";
  auto index_path = stem;
  index_path += ".index";
  std::ifstream data(data_path, std::ios::binary);
  std::ifstream index(index_path);
  if (!data || !index) throw IoError("cannot open checkpoint " + stem.string());
  std::vector<NamedTensor> out;
  std::string line;
  while (std::getline(index, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw IoError("malformed checkpoint index line: " + line);
    const std::string name = line.substr(0, tab);
    std::uint64_t offset = 0;
    std::istringstream(line.substr(tab + 1)) >> offset;
    data.seekg(static_cast<std::streamoff>(offset));
    out.emplace_back(name, read_tensor(data));
  }
  return out;
}

}  // namespace fusenet
