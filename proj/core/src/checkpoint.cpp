#include "piflow/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian; big-endian hosts need byte swaps");

namespace piflow {

using nlohmann::json;

void save_checkpoint(const std::filesystem::path& bin_path,
                     const std::filesystem::path& manifest_path, const ParamStore& store,
                     uint64_t seed, const std::string& config_hash) {
  std::ofstream bin(bin_path, std::ios::binary);
  if (!bin) throw std::runtime_error("save_checkpoint: cannot open " + bin_path.string());

  json arrays = json::array();
  uint64_t offset = 0;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const Matrix& m = store.values[i];
    // Row-major on disk regardless of Eigen's in-memory layout.
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        const double v = m(r, c);
        bin.write(reinterpret_cast<const char*>(&v), sizeof(double));
      }
    arrays.push_back({{"name", store.names[i]},
                      {"rows", m.rows()},
                      {"cols", m.cols()},
                      {"offset", offset}});
    offset += static_cast<uint64_t>(m.size()) * sizeof(double);
  }
  bin.close();
  if (!bin) throw std::runtime_error("save_checkpoint: write failed for " + bin_path.string());

  json manifest = {{"format", "piflow-checkpoint-v1"},
                   {"byte_order", "little"},
                   {"dtype", "float64"},
                   {"seed", seed},
                   {"config_hash", config_hash},
                   {"arrays", arrays}};
  write_text_file(manifest_path, manifest.dump(2) + "\n");
}

uint64_t load_checkpoint(const std::filesystem::path& bin_path,
                         const std::filesystem::path& manifest_path, ParamStore& store,
                         std::string* config_hash_out) {
  json manifest = json::parse(read_text_file(manifest_path));
  if (manifest.value("format", "") != "piflow-checkpoint-v1")
    throw std::runtime_error("load_checkpoint: unrecognized manifest format");

  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw std::runtime_error("load_checkpoint: cannot open " + bin_path.string());

  store.names.clear();
  store.values.clear();
  for (const json& a : manifest.at("arrays")) {
    const auto rows = a.at("rows").get<Eigen::Index>();
    const auto cols = a.at("cols").get<Eigen::Index>();
    bin.seekg(static_cast<std::streamoff>(a.at("offset").get<uint64_t>()));
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) {
        double v;
        bin.read(reinterpret_cast<char*>(&v), sizeof(double));
        m(r, c) = v;
      }
    if (!bin)
      throw std::runtime_error("load_checkpoint: truncated blob reading array " +
                               a.at("name").get<std::string>());
    store.add(a.at("name").get<std::string>(), std::move(m));
  }
  if (config_hash_out) *config_hash_out = manifest.value("config_hash", "");
  return manifest.value("seed", uint64_t{0});
}

std::string fnv1a_hex(const std::string& text) {
  uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const Matrix& rows) {
  if (static_cast<Eigen::Index>(header.size()) != rows.cols() && rows.size() != 0)
    throw std::invalid_argument("write_csv: header width does not match columns");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_csv: cannot open " + path.string());
  for (std::size_t i = 0; i < header.size(); ++i)
    out << header[i] << (i + 1 < header.size() ? "," : "\n");
  char buf[32];
  for (Eigen::Index r = 0; r < rows.rows(); ++r)
    for (Eigen::Index c = 0; c < rows.cols(); ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", rows(r, c));
      out << buf << (c + 1 < rows.cols() ? "," : "\n");
    }
  if (!out) throw std::runtime_error("write_csv: write failed for " + path.string());
}

Matrix read_csv(const std::filesystem::path& path, std::vector<std::string>* header) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_csv: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("read_csv: empty file " + path.string());
  std::vector<std::string> head;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) head.push_back(cell);
  }
  if (header) *header = head;

  std::vector<double> data;
  Eigen::Index n_rows = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    Eigen::Index n_cols = 0;
    while (std::getline(ss, cell, ',')) {
      data.push_back(std::stod(cell));
      ++n_cols;
    }
    if (n_cols != static_cast<Eigen::Index>(head.size()))
      throw std::runtime_error("read_csv: ragged row in " + path.string());
    ++n_rows;
  }
  Matrix m(n_rows, static_cast<Eigen::Index>(head.size()));
  for (Eigen::Index r = 0; r < n_rows; ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = data[r * m.cols() + c];
  return m;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_text_file: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_text_file: cannot open " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write_text_file: write failed for " + path.string());
}

}  // namespace piflow
