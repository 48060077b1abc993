#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nfr/net.hpp"

namespace nfr {

/// Model file format "NFRNET1":
///   8-byte magic "NFRNET1\n",
///   UTF-8 JSON header terminated by a NUL byte (layer kinds, shapes, relu
///   flags, pool params, init metadata, per-layer blob offsets),
///   concatenated f64 little-endian weight blobs. Offsets count from the
///   first byte after the NUL terminator.
std::vector<std::uint8_t> save_model(const Network& net);
Network load_model(const std::vector<std::uint8_t>& bytes);

void write_model_file(const std::string& path, const Network& net);
Network read_model_file(const std::string& path);

/// Dataset directory: NFRT1 tensors plus labels.csv (columns: file,label).
LabeledDataset load_dataset(const std::string& dir);
void save_dataset(const std::string& dir, const LabeledDataset& data);

}  // namespace nfr
