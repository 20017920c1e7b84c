#ifndef PROD_RETRIEVAL_HPP_
#define PROD_RETRIEVAL_HPP_

#include <span>
#include <string>
#include <vector>

#include "prod/data.hpp"
#include "prod/encoder.hpp"
#include "prod/tensor.hpp"

namespace prod {

// Row-major [rows x dim] block of passage/query embeddings.
struct EmbeddingMatrix {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> data;

  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(data.data() + i * dim, dim);
  }
};

// One embedding per passage, order-aligned with passage ids. OpenMP over
// passages; output is independent of thread count.
EmbeddingMatrix encode_corpus(const DualEncoder& model, const Corpus& corpus);

// Single-threaded reference for the parallel kernel above.
EmbeddingMatrix encode_corpus_serial(const DualEncoder& model, const Corpus& corpus);

EmbeddingMatrix encode_queries(const DualEncoder& model, const QuerySet& queries);

struct RankedEntry {
  std::string passage_id;
  double score = 0.0;
  std::size_t rank = 0;  // 1-based
};

struct RankedList {
  std::string query_id;
  std::vector<RankedEntry> entries;

  // 1-based rank of the passage, or 0 when absent.
  std::size_t rank_of(const std::string& passage_id) const;
};

// Immutable exact-search index.
class EmbeddingIndex {
 public:
  EmbeddingIndex(std::vector<std::string> passage_ids, EmbeddingMatrix matrix);

  const std::vector<std::string>& passage_ids() const { return ids_; }
  const EmbeddingMatrix& matrix() const { return matrix_; }
  std::size_t size() const { return ids_.size(); }
  std::size_t dim() const { return matrix_.dim; }

 private:
  std::vector<std::string> ids_;
  EmbeddingMatrix matrix_;
};

EmbeddingIndex build_index(const DualEncoder& model, const Corpus& corpus);

// Exact top-k by inner product; ties broken by ascending passage id.
RankedList search_topk(const EmbeddingIndex& index, std::span<const double> query_vec,
                       std::size_t k, std::string query_id = "");
RankedList search_topk(const EmbeddingIndex& index, const Tensor& query_vec, std::size_t k,
                       std::string query_id = "");

// Batch search, OpenMP over queries. Equal to per-query serial search.
std::vector<RankedList> search_topk_batch(const EmbeddingIndex& index,
                                          const EmbeddingMatrix& queries,
                                          const std::vector<std::string>& query_ids,
                                          std::size_t k);

// Shards the corpus, searches shards independently, and merges with the
// global tie rule. Exactly equal to search_topk for any shard count.
RankedList search_topk_sharded(const EmbeddingIndex& index, std::span<const double> query_vec,
                               std::size_t k, std::size_t num_shards, std::string query_id = "");

}  // namespace prod

#endif  // PROD_RETRIEVAL_HPP_
