// Writes identity-structured toy embeddings and gold pairs for the CLI smoke test.
#include <filesystem>
#include <fstream>
#include <iostream>

#include "bdm/embedding_io.hpp"

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: cli_fixture DIR\n";
    return 2;
  }
  const std::filesystem::path dir = argv[1];
  std::filesystem::create_directories(dir);
  bdm::EmbeddingMatrix src{{"s0", "s1", "s2", "s3", "s4"}, bdm::Tensor2::identity(5)};
  bdm::EmbeddingMatrix tgt{{"t0", "t1", "t2", "t3", "t4"}, bdm::Tensor2::identity(5)};
  bdm::save_embeddings(src, (dir / "src.emb").string());
  bdm::save_embeddings(tgt, (dir / "tgt.emb").string());
  std::ofstream gold(dir / "gold.csv");
  for (int i = 0; i < 5; ++i) gold << 's' << i << ",t" << i << '\n';
  return 0;
}
