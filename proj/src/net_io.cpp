#include "nfr/net_io.hpp"

#include <cstring>
#include <filesystem>
#include <stdexcept>

#include <json.hpp>

#include "nfr/csv.hpp"
#include "nfr/tensor_io.hpp"

namespace nfr {

namespace {

constexpr char kMagic[8] = {'N', 'F', 'R', 'N', 'E', 'T', '1', '\n'};

void append_f64_le(std::vector<std::uint8_t>& out, const Vec& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, &v[i], 8);
    for (int b = 0; b < 8; ++b) {
      out.push_back(static_cast<std::uint8_t>((bits >> (8 * b)) & 0xFF));
    }
  }
}

}  // namespace

std::vector<std::uint8_t> save_model(const Network& net) {
  nlohmann::json header;
  header["format"] = "NFRNET1";
  header["version"] = 1;
  header["class_count"] = net.class_count;
  header["input_shape"] = net.input_shape.dims;
  header["init"] = net.init_desc;
  nlohmann::json layers = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const Layer& l : net.layers) {
    nlohmann::json j;
    j["kind"] = layer_kind_name(l.kind);
    j["relu"] = l.relu_after;
    if (l.kind == LayerKind::MaxPool2d) {
      j["pool"] = l.pool;
      j["stride"] = l.pool_stride;
    }
    if (l.has_weights()) {
      j["shape"] = l.weights.shape().dims;
      j["offset"] = offset;
      j["count"] = l.weights.size();
      offset += 8ull * static_cast<std::uint64_t>(l.weights.size());
    }
    layers.push_back(j);
  }
  header["layers"] = layers;

  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  const std::string h = header.dump();
  out.insert(out.end(), h.begin(), h.end());
  out.push_back(0);
  for (const Layer& l : net.layers) {
    if (l.has_weights()) append_f64_le(out, l.weights.flat());
  }
  return out;
}

Network load_model(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 9 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw std::runtime_error("NFRNET1: magic-mismatch");
  }
  std::size_t nul = 8;
  while (nul < bytes.size() && bytes[nul] != 0) ++nul;
  if (nul == bytes.size()) {
    throw std::runtime_error("NFRNET1: unterminated header");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + nul);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("NFRNET1: bad header json: ") +
                             e.what());
  }
  const std::uint8_t* payload = bytes.data() + nul + 1;
  const std::uint64_t payload_size = bytes.size() - nul - 1;

  Network net;
  try {
    net.class_count = header.at("class_count").get<int>();
    net.input_shape = Shape(header.at("input_shape").get<std::vector<int>>());
    net.init_desc = header.value("init", "unspecified");
    int layer_no = 0;
    for (const auto& j : header.at("layers")) {
      Layer l;
      l.kind = layer_kind_from_name(j.at("kind").get<std::string>());
      l.relu_after = j.at("relu").get<bool>();
      if (l.kind == LayerKind::MaxPool2d) {
        l.pool = j.at("pool").get<int>();
        l.pool_stride = j.at("stride").get<int>();
      }
      if (l.has_weights()) {
        const Shape shape(j.at("shape").get<std::vector<int>>());
        const std::uint64_t offset = j.at("offset").get<std::uint64_t>();
        const std::uint64_t count = j.at("count").get<std::uint64_t>();
        if (static_cast<std::int64_t>(count) != shape.count()) {
          throw std::runtime_error("NFRNET1: inconsistent shapes (layer " +
                                   std::to_string(layer_no) + ")");
        }
        if (offset + 8 * count > payload_size) {
          throw std::runtime_error("NFRNET1: truncated weight blob (layer " +
                                   std::to_string(layer_no) + ")");
        }
        Vec data(static_cast<Eigen::Index>(count));
        for (std::uint64_t i = 0; i < count; ++i) {
          std::uint64_t bits = 0;
          for (int b = 0; b < 8; ++b) {
            bits |= static_cast<std::uint64_t>(payload[offset + 8 * i + b])
                    << (8 * b);
          }
          std::memcpy(&data[static_cast<Eigen::Index>(i)], &bits, 8);
        }
        l.weights = Tensor::from_flat(shape, std::move(data));
      }
      net.layers.push_back(std::move(l));
      ++layer_no;
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("NFRNET1: bad header field: ") +
                             e.what());
  }
  try {
    net.validate();
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("NFRNET1: inconsistent shapes: ") +
                             e.what());
  }
  return net;
}

void write_model_file(const std::string& path, const Network& net) {
  write_file_bytes(path, save_model(net));
}

Network read_model_file(const std::string& path) {
  return load_model(read_file_bytes(path));
}

LabeledDataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const auto rows = read_csv((fs::path(dir) / "labels.csv").string());
  if (rows.empty() || rows[0].size() != 2 || rows[0][0] != "file" ||
      rows[0][1] != "label") {
    throw std::runtime_error("dataset: labels.csv must have header file,label");
  }
  LabeledDataset data;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].size() != 2) {
      throw std::runtime_error("dataset: bad row " + std::to_string(i));
    }
    data.inputs.push_back(
        read_tensor_file((fs::path(dir) / rows[i][0]).string()));
    data.labels.push_back(std::stoi(rows[i][1]));
  }
  return data;
}

void save_dataset(const std::string& dir, const LabeledDataset& data) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  CsvWriter csv((fs::path(dir) / "labels.csv").string(), {"file", "label"});
  for (std::size_t i = 0; i < data.inputs.size(); ++i) {
    const std::string name = "sample_" + std::to_string(i) + ".nfrt";
    write_tensor_file((fs::path(dir) / name).string(), data.inputs[i]);
    csv.row({name, std::to_string(data.labels[i])});
  }
}

}  // namespace nfr
