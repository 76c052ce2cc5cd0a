// Copyright (C) 2026 The adaattn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "adaattn/core/error.hpp"
#include "adaattn/core/tensor.hpp"

// Tensor container shared by encoder manifests and training checkpoints.
//
//   ADAATTN-BLOB 1
//   kind <kind>
//   meta <key> <value...>                      (zero or more, value runs to end of line)
//   tensor <name> <d0>x<d1>... <offset> <nbytes> <crc32 hex>
//   end
//   <payload: little-endian float32 blobs, offsets relative to payload start>
//
// See docs/blob-format.md for the full description.

namespace adaattn {

inline constexpr int kBlobFormatVersion = 1;

struct BlobEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct BlobFile {
  std::string kind;
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<BlobEntry> tensors;

  void set_meta(const std::string& key, std::string value) {
    for (auto& [k, v] : meta)
      if (k == key) {
        v = std::move(value);
        return;
      }
    meta.emplace_back(key, std::move(value));
  }

  const std::string* find_meta(const std::string& key) const {
    for (const auto& [k, v] : meta)
      if (k == key) return &v;
    return nullptr;
  }

  const std::string& meta_at(const std::string& key) const {
    const auto* v = find_meta(key);
    require<ManifestError>(v != nullptr, "missing meta entry '", key, "'");
    return *v;
  }

  const BlobEntry* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

namespace detail {

inline std::uint32_t crc32_of(const std::string& bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

inline std::string encode_floats(const std::vector<float>& values) {
  std::string out(values.size() * 4, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) out[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xFFu);
  }
  return out;
}

inline std::vector<float> decode_floats(std::string_view bytes) {
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b)
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + b])) << (8 * b);
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

inline Shape parse_shape(const std::string& text) {
  Shape shape;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    require<IntegrityError>(!part.empty() && part.find_first_not_of("0123456789") == std::string::npos,
                            "malformed shape '", text, "'");
    shape.push_back(std::stoull(part));
  }
  require<IntegrityError>(!shape.empty(), "empty shape");
  return shape;
}

inline std::string shape_token(const Shape& shape) {
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "x" : "") + std::to_string(shape[i]);
  return s;
}

}  // namespace detail

inline std::string serialize_blob(const BlobFile& file) {
  std::ostringstream header;
  header << "ADAATTN-BLOB " << kBlobFormatVersion << "\n";
  header << "kind " << file.kind << "\n";
  for (const auto& [k, v] : file.meta) {
    require<ContractError>(k.find_first_of(" \n") == std::string::npos && v.find('\n') == std::string::npos,
                           "meta entry '", k, "' contains whitespace or newlines");
    header << "meta " << k << " " << v << "\n";
  }
  std::string payload;
  for (const auto& t : file.tensors) {
    require<ContractError>(numel_of(t.shape) == t.values.size(), "tensor '", t.name,
                           "' has inconsistent shape");
    std::string bytes = detail::encode_floats(t.values);
    header << "tensor " << t.name << " " << detail::shape_token(t.shape) << " " << payload.size()
           << " " << bytes.size() << " " << std::hex << std::setw(8) << std::setfill('0')
           << detail::crc32_of(bytes) << std::dec << std::setfill(' ') << "\n";
    payload += bytes;
  }
  header << "end\n";
  return header.str() + payload;
}

inline BlobFile parse_blob(const std::string& bytes) {
  std::size_t end_marker = bytes.find("\nend\n");
  require<IntegrityError>(end_marker != std::string::npos, "blob header is not terminated");
  std::string_view payload(bytes);
  payload.remove_prefix(end_marker + 5);

  std::istringstream header(bytes.substr(0, end_marker + 1));
  std::string magic;
  int version = 0;
  header >> magic >> version;
  require<IntegrityError>(magic == "ADAATTN-BLOB", "not a blob file (magic '", magic, "')");
  require<VersionError>(version == kBlobFormatVersion, "unsupported blob format version ", version,
                        " (expected ", kBlobFormatVersion, ")");

  BlobFile file;
  std::string line;
  std::getline(header, line);
  while (std::getline(header, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "kind") {
      ls >> file.kind;
    } else if (tag == "meta") {
      std::string key, value;
      ls >> key;
      std::getline(ls >> std::ws, value);
      file.meta.emplace_back(key, value);
    } else if (tag == "tensor") {
      std::string name, shape_text, crc_text;
      std::size_t offset = 0, nbytes = 0;
      ls >> name >> shape_text >> offset >> nbytes >> crc_text;
      require<IntegrityError>(!ls.fail(), "malformed tensor line '", line, "'");
      Shape shape = detail::parse_shape(shape_text);
      require<IntegrityError>(nbytes == numel_of(shape) * 4, "tensor '", name,
                              "': byte count does not match shape");
      require<IntegrityError>(offset + nbytes <= payload.size(), "tensor '", name,
                              "' extends past end of file");
      std::string blob(payload.substr(offset, nbytes));
      require<IntegrityError>(std::stoul(crc_text, nullptr, 16) == detail::crc32_of(blob),
                              "checksum mismatch for tensor '", name, "'");
      file.tensors.push_back({name, std::move(shape), detail::decode_floats(blob)});
    } else {
      raise<IntegrityError>("unknown header line '", line, "'");
    }
  }
  return file;
}

inline void write_blob_file(const std::filesystem::path& path, const BlobFile& file) {
  std::string bytes = serialize_blob(file);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require<IoError>(static_cast<bool>(out), "cannot open ", tmp.string(), " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require<IoError>(static_cast<bool>(out), "failed writing ", tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

/// Writes `bytes` to `path`, creating parent directories.
inline void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require<IoError>(static_cast<bool>(out), "cannot write ", path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require<IoError>(static_cast<bool>(out), "short write to ", path.string());
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require<IoError>(static_cast<bool>(in), "cannot open ", path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline BlobFile read_blob_file(const std::filesystem::path& path) {
  return parse_blob(read_file_bytes(path));
}

}  // namespace adaattn
