#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

#include "oodattack/datasets.hpp"
#include "oodattack/errors.hpp"

namespace oodattack {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset) {
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08X", v);
  return buf;
}

IdxArray read_idx_expecting(const std::filesystem::path& path, std::uint32_t magic) {
  IdxArray a = read_idx(path);
  const auto found = static_cast<std::uint32_t>(0x0800 | a.dims.size());
  if (found != magic) {
    throw FormatError(path.string() + ": magic " + hex32(found) + " at byte offset 0, expected " + hex32(magic));
  }
  return a;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_cells(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    cells.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return cells;
}

double parse_number(std::string_view cell, const std::string& where) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v)) {
    throw FormatError(where + ": non-numeric cell '" + std::string(cell) + "'");
  }
  return v;
}

struct CsvTable {
  std::size_t columns = 0;
  std::vector<std::vector<std::string_view>> rows;
  std::vector<std::size_t> line_numbers;
  std::string text;
};

void read_csv_table(const std::filesystem::path& path, CsvTable& table) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  table.text.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  std::string_view all = table.text;
  std::size_t line_no = 0;
  bool have_header = false;
  while (!all.empty()) {
    const std::size_t nl = all.find('\n');
    std::string_view line = all.substr(0, nl);
    all.remove_prefix(nl == std::string_view::npos ? all.size() : nl + 1);
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split_cells(line);
    if (!have_header) {
      table.columns = cells.size();
      have_header = true;
      continue;
    }
    if (cells.size() != table.columns) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": ragged row with " +
                        std::to_string(cells.size()) + " cells, header has " + std::to_string(table.columns));
    }
    table.rows.push_back(std::move(cells));
    table.line_numbers.push_back(line_no);
  }
  if (!have_header) throw FormatError(path.string() + ": missing header row");
}

DataRange infer_range(const std::vector<double>& values) {
  if (values.empty()) return {};
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  return {*lo, *hi};
}

void check_range(const std::vector<double>& values, const DataRange& range, const std::filesystem::path& path) {
  for (double v : values) {
    if (!range.contains(v)) throw FormatError(path.string() + ": feature value outside declared data range");
  }
}

template <class Row>
void write_row(std::ostream& os, const Row& row) {
  char buf[32];
  for (std::size_t j = 0; j < row.size(); ++j) {
    const auto res = std::to_chars(buf, buf + sizeof buf, row[j]);
    if (j) os << ',';
    os.write(buf, res.ptr - buf);
  }
}

}  // namespace

IdxArray read_idx(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  if (bytes.size() < 4) {
    throw FormatError(path.string() + ": truncated header, expected at least 4 bytes, found " +
                      std::to_string(bytes.size()));
  }
  const std::uint32_t magic = read_be32(bytes, 0);
  const std::uint32_t ndims = magic & 0xFF;
  if ((magic & 0xFFFFFF00) != 0x00000800 || ndims == 0) {
    throw FormatError(path.string() + ": bad magic " + hex32(magic) + " at byte offset 0 (only unsigned-byte IDX)");
  }
  const std::size_t header = 4 + 4 * std::size_t{ndims};
  if (bytes.size() < header) {
    throw FormatError(path.string() + ": truncated dimension table at byte offset 4, expected " +
                      std::to_string(header) + " header bytes, found " + std::to_string(bytes.size()));
  }
  IdxArray a;
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < ndims; ++i) {
    a.dims.push_back(read_be32(bytes, 4 + 4 * i));
    count *= a.dims.back();
  }
  const std::size_t actual = bytes.size() - header;
  if (actual != count) {
    throw FormatError(path.string() + ": payload at byte offset " + std::to_string(header) + " has " +
                      std::to_string(actual) + " bytes, expected " + std::to_string(count));
  }
  a.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
  return a;
}

void write_idx(const std::filesystem::path& path, const IdxArray& a) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  auto put32 = [&](std::uint32_t v) {
    const char b[4] = {char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
    out.write(b, 4);
  };
  put32(0x0800 | static_cast<std::uint32_t>(a.dims.size()));
  for (auto d : a.dims) put32(d);
  out.write(reinterpret_cast<const char*>(a.payload.data()), static_cast<std::streamsize>(a.payload.size()));
}

UnlabeledDataset load_idx(const std::filesystem::path& images) {
  const IdxArray a = read_idx_expecting(images, kIdxImagesMagic);
  const std::size_t n = a.dims[0];
  const std::size_t features = std::size_t{a.dims[1]} * a.dims[2];
  std::vector<double> flat(a.payload.size());
  std::transform(a.payload.begin(), a.payload.end(), flat.begin(), [](std::uint8_t b) { return b / 255.0; });
  UnlabeledDataset out;
  out.features = Tensor::matrix(n, features, std::move(flat));
  out.range = {0.0, 1.0};
  out.domain = Domain::Out;
  return out;
}

LabeledDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                        std::size_t num_classes) {
  UnlabeledDataset x = load_idx(images);
  const IdxArray y = read_idx_expecting(labels, kIdxLabelsMagic);
  if (y.dims[0] != x.size()) {
    throw FormatError(labels.string() + ": " + std::to_string(y.dims[0]) + " labels at byte offset 4 for " +
                      std::to_string(x.size()) + " images");
  }
  LabeledDataset out;
  out.features = std::move(x.features);
  out.range = x.range;
  out.num_classes = num_classes;
  out.domain = Domain::In;
  for (std::size_t i = 0; i < y.payload.size(); ++i) {
    if (y.payload[i] >= num_classes) {
      throw FormatError(labels.string() + ": label " + std::to_string(y.payload[i]) + " at byte offset " +
                        std::to_string(8 + i) + " outside [0, " + std::to_string(num_classes) + ")");
    }
    out.labels.push_back(y.payload[i]);
  }
  return out;
}

LabeledDataset load_csv(const std::filesystem::path& path, std::size_t num_classes, std::optional<DataRange> range) {
  CsvTable table;
  read_csv_table(path, table);
  if (table.columns < 2) throw FormatError(path.string() + ": need at least one feature column and a label column");
  const std::size_t d = table.columns - 1;
  LabeledDataset out;
  out.num_classes = num_classes;
  out.domain = Domain::In;
  std::vector<double> flat;
  flat.reserve(table.rows.size() * d);
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const std::string where = path.string() + ":" + std::to_string(table.line_numbers[r]);
    const auto& cells = table.rows[r];
    for (std::size_t j = 0; j < d; ++j) flat.push_back(parse_number(cells[j], where));
    const double label = parse_number(cells[d], where);
    if (label != std::floor(label) || label < 0.0 || label >= static_cast<double>(num_classes)) {
      throw FormatError(where + ": label " + std::string(cells[d]) + " outside [0, " + std::to_string(num_classes) +
                        ")");
    }
    out.labels.push_back(static_cast<std::size_t>(label));
  }
  out.range = range.value_or(infer_range(flat));
  check_range(flat, out.range, path);
  out.features = Tensor::matrix(out.labels.size(), d, std::move(flat));
  return out;
}

UnlabeledDataset load_csv_unlabeled(const std::filesystem::path& path, std::optional<DataRange> range) {
  CsvTable table;
  read_csv_table(path, table);
  const std::size_t d = table.columns;
  std::vector<double> flat;
  flat.reserve(table.rows.size() * d);
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const std::string where = path.string() + ":" + std::to_string(table.line_numbers[r]);
    for (auto cell : table.rows[r]) flat.push_back(parse_number(cell, where));
  }
  UnlabeledDataset out;
  out.range = range.value_or(infer_range(flat));
  check_range(flat, out.range, path);
  out.features = Tensor::matrix(table.rows.size(), d, std::move(flat));
  out.domain = Domain::Out;
  return out;
}

void write_csv(const std::filesystem::path& path, const LabeledDataset& data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write " + path.string());
  for (std::size_t j = 0; j < data.dimension(); ++j) os << 'x' << j << ',';
  os << "label\n";
  for (std::size_t r = 0; r < data.size(); ++r) {
    write_row(os, data.features.row(r));
    os << ',' << data.labels[r] << '\n';
  }
}

void write_csv(const std::filesystem::path& path, const UnlabeledDataset& data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write " + path.string());
  for (std::size_t j = 0; j < data.dimension(); ++j) os << (j ? ",x" : "x") << j;
  os << '\n';
  for (std::size_t r = 0; r < data.size(); ++r) {
    write_row(os, data.features.row(r));
    os << '\n';
  }
}

}  // namespace oodattack
