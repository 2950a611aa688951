#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "bdm/error.hpp"
#include "bdm/parameter.hpp"
#include "bdm/tensor.hpp"

namespace bdm {

/// Row-per-item embeddings with string ids.
struct EmbeddingMatrix {
  std::vector<std::string> ids;
  Tensor2 vectors;

  std::size_t size() const { return ids.size(); }
  std::size_t dim() const { return vectors.cols(); }
};

inline constexpr char kEmbeddingMagic[4] = {'E', 'M', 'B', '1'};

/// "EMB1", dim u32, count u32, then per row: id_len u32, id bytes, dim x f32 LE.
inline void save_embeddings(const EmbeddingMatrix& m, const std::string& path) {
  if (m.ids.size() != m.vectors.rows()) throw ContractError("save_embeddings: id count != rows");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open embeddings for writing: " + path);
  os.write(kEmbeddingMagic, 4);
  io::write_u32(os, static_cast<std::uint32_t>(m.vectors.cols()));
  io::write_u32(os, static_cast<std::uint32_t>(m.ids.size()));
  for (std::size_t r = 0; r < m.ids.size(); ++r) {
    io::write_bytes(os, m.ids[r]);
    for (double v : m.vectors.row(r)) io::write_f32(os, v);
  }
  if (!os) throw Error("failed writing embeddings: " + path);
}

inline EmbeddingMatrix load_embeddings(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open embeddings: " + path);
  char magic[4] = {};
  if (!is.read(magic, 4) || std::memcmp(magic, kEmbeddingMagic, 4) != 0) {
    throw ParseError("bad embedding magic in " + path);
  }
  std::uint32_t dim = 0, count = 0;
  if (!io::read_u32(is, dim) || !io::read_u32(is, count)) throw ParseError("truncated embedding header in " + path);
  EmbeddingMatrix m;
  m.ids.resize(count);
  m.vectors = Tensor2(count, dim);
  for (std::size_t r = 0; r < count; ++r) {
    if (!io::read_bytes(is, m.ids[r])) throw ParseError("truncated embedding id at row " + std::to_string(r));
    for (double& v : m.vectors.row(r)) {
      if (!io::read_f32(is, v)) throw ParseError("truncated embedding values at row " + std::to_string(r));
    }
  }
  return m;
}

}  // namespace bdm
