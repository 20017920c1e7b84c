#ifndef PROD_DATA_IO_HPP_
#define PROD_DATA_IO_HPP_

#include <cstdint>
#include <string>

#include "prod/data.hpp"

namespace prod {

// Tab-separated `id<TAB>text`, newline-terminated. Malformed lines are
// reported with their line number; duplicate ids are errors.
Corpus load_corpus(const std::string& path);
QuerySet load_queries(const std::string& path, Split split);
Qrels load_qrels(const std::string& path);

void save_corpus(const std::string& path, const Corpus& corpus);
void save_queries(const std::string& path, const QuerySet& queries);
void save_qrels(const std::string& path, const Qrels& qrels);

struct SyntheticSpec {
  std::size_t num_clusters = 8;
  std::size_t passages_per_cluster = 250;
  std::size_t queries_per_cluster = 25;  // per split
  std::size_t vocab_tokens_per_cluster = 48;
  double noise_token_rate = 0.1;
  std::size_t passage_tokens = 20;
  std::size_t query_tokens = 6;
  std::uint64_t seed = 42;

  void validate() const;
};

struct RetrievalDataset {
  Corpus corpus;
  QuerySet train;
  QuerySet dev;
  QuerySet test;
  Qrels qrels;  // covers all three splits
};

using SyntheticData = RetrievalDataset;

// Each cluster owns a disjoint token pool. Passages draw from their cluster
// pool with noise_token_rate off-cluster tokens; queries draw purely from
// one cluster pool and are relevant (grade 1) to all of that cluster's
// passages. Pure function of the spec.
SyntheticData generate_synthetic(const SyntheticSpec& spec);

// Writes corpus.tsv, queries.{train,dev,test}.tsv, qrels.txt into dir.
void save_synthetic(const std::string& dir, const SyntheticData& data);

// Loads the same layout.
SyntheticData load_dataset_dir(const std::string& dir);

}  // namespace prod

#endif  // PROD_DATA_IO_HPP_
