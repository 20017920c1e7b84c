#include "prod/retrieval.hpp"

#include <algorithm>
#include <set>

#include "prod/common.hpp"

namespace prod {

namespace {

EmbeddingMatrix encode_corpus_impl(const DualEncoder& model, const Corpus& corpus, bool parallel) {
  if (corpus.empty()) throw InputError("encode_corpus: corpus is empty");
  const std::size_t d = model.config().hidden_dim;
  EmbeddingMatrix out;
  out.rows = corpus.size();
  out.dim = d;
  out.data.assign(out.rows * d, 0.0);

  const auto encode_one = [&](std::size_t i) {
    const TokenSequence seq = model.tokenize_passage(corpus.passages[i].text);
    const std::vector<double> vec = model.encode_passage_raw(seq);
    std::copy(vec.begin(), vec.end(), out.data.begin() + i * d);
  };

  if (parallel) {
    const std::int64_t n = static_cast<std::int64_t>(corpus.size());
#pragma omp parallel for schedule(dynamic, 16)
    for (std::int64_t i = 0; i < n; ++i) encode_one(static_cast<std::size_t>(i));
  } else {
    for (std::size_t i = 0; i < corpus.size(); ++i) encode_one(i);
  }
  return out;
}

}  // namespace

EmbeddingMatrix encode_corpus(const DualEncoder& model, const Corpus& corpus) {
  return encode_corpus_impl(model, corpus, /*parallel=*/true);
}

EmbeddingMatrix encode_corpus_serial(const DualEncoder& model, const Corpus& corpus) {
  return encode_corpus_impl(model, corpus, /*parallel=*/false);
}

EmbeddingMatrix encode_queries(const DualEncoder& model, const QuerySet& queries) {
  const std::size_t d = model.config().hidden_dim;
  EmbeddingMatrix out;
  out.rows = queries.size();
  out.dim = d;
  out.data.assign(out.rows * d, 0.0);
  const std::int64_t n = static_cast<std::int64_t>(queries.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (std::int64_t i = 0; i < n; ++i) {
    const TokenSequence seq = model.tokenize_query(queries.queries[i].text);
    const std::vector<double> vec = model.encode_query_raw(seq);
    std::copy(vec.begin(), vec.end(), out.data.begin() + static_cast<std::size_t>(i) * d);
  }
  return out;
}

std::size_t RankedList::rank_of(const std::string& passage_id) const {
  for (const RankedEntry& e : entries) {
    if (e.passage_id == passage_id) return e.rank;
  }
  return 0;
}

EmbeddingIndex::EmbeddingIndex(std::vector<std::string> passage_ids, EmbeddingMatrix matrix)
    : ids_(std::move(passage_ids)), matrix_(std::move(matrix)) {
  if (ids_.size() != matrix_.rows) {
    throw ShapeError("index id count does not match embedding row count");
  }
  std::set<std::string> unique(ids_.begin(), ids_.end());
  if (unique.size() != ids_.size()) throw InputError("index passage ids are not unique");
}

EmbeddingIndex build_index(const DualEncoder& model, const Corpus& corpus) {
  std::vector<std::string> ids;
  ids.reserve(corpus.size());
  for (const Passage& p : corpus.passages) ids.push_back(p.id);
  return EmbeddingIndex(std::move(ids), encode_corpus(model, corpus));
}

namespace {

struct Scored {
  double score;
  std::size_t row;
};

// Descending score, ties by ascending passage id: a strict total order.
bool better(const Scored& a, const Scored& b, const std::vector<std::string>& ids) {
  if (a.score != b.score) return a.score > b.score;
  return ids[a.row] < ids[b.row];
}

RankedList select_topk(std::vector<Scored>& scored, std::size_t k,
                       const std::vector<std::string>& ids, std::string query_id) {
  const std::size_t take = std::min(k, scored.size());
  auto cmp = [&ids](const Scored& a, const Scored& b) { return better(a, b, ids); };
  std::partial_sort(scored.begin(), scored.begin() + take, scored.end(), cmp);
  RankedList out;
  out.query_id = std::move(query_id);
  out.entries.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    out.entries.push_back(RankedEntry{ids[scored[i].row], scored[i].score, i + 1});
  }
  return out;
}

}  // namespace

RankedList search_topk(const EmbeddingIndex& index, std::span<const double> query_vec,
                       std::size_t k, std::string query_id) {
  if (k == 0) throw ParameterError("search_topk: k must be >= 1");
  if (query_vec.size() != index.dim()) {
    throw ShapeError("search_topk: query dimension does not match index");
  }
  const std::size_t n = index.size();
  const std::size_t d = index.dim();
  const double* mat = index.matrix().data.data();
  std::vector<Scored> scored(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = mat + i * d;
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += row[j] * query_vec[j];
    scored[i] = Scored{acc, i};
  }
  return select_topk(scored, k, index.passage_ids(), std::move(query_id));
}

RankedList search_topk(const EmbeddingIndex& index, const Tensor& query_vec, std::size_t k,
                       std::string query_id) {
  if (query_vec.shape().size() != 1) throw ShapeError("search_topk: query must be a vector");
  return search_topk(index, std::span<const double>(query_vec.values()), k, std::move(query_id));
}

std::vector<RankedList> search_topk_batch(const EmbeddingIndex& index,
                                          const EmbeddingMatrix& queries,
                                          const std::vector<std::string>& query_ids,
                                          std::size_t k) {
  if (queries.rows != query_ids.size()) {
    throw ShapeError("search_topk_batch: query id count does not match rows");
  }
  std::vector<RankedList> out(queries.rows);
  const std::int64_t n = static_cast<std::int64_t>(queries.rows);
#pragma omp parallel for schedule(dynamic, 4)
  for (std::int64_t i = 0; i < n; ++i) {
    const std::size_t qi = static_cast<std::size_t>(i);
    out[qi] = search_topk(index, queries.row(qi), k, query_ids[qi]);
  }
  return out;
}

RankedList search_topk_sharded(const EmbeddingIndex& index, std::span<const double> query_vec,
                               std::size_t k, std::size_t num_shards, std::string query_id) {
  if (num_shards == 0) throw ParameterError("search_topk_sharded: need at least one shard");
  if (query_vec.size() != index.dim()) {
    throw ShapeError("search_topk_sharded: query dimension does not match index");
  }
  const std::size_t n = index.size();
  const std::size_t d = index.dim();
  const double* mat = index.matrix().data.data();
  const auto& ids = index.passage_ids();
  const std::size_t shard_size = (n + num_shards - 1) / num_shards;

  std::vector<std::vector<Scored>> shard_top(num_shards);
  const std::int64_t shards = static_cast<std::int64_t>(num_shards);
#pragma omp parallel for schedule(static)
  for (std::int64_t s = 0; s < shards; ++s) {
    const std::size_t lo = static_cast<std::size_t>(s) * shard_size;
    const std::size_t hi = std::min(n, lo + shard_size);
    std::vector<Scored> scored;
    scored.reserve(hi > lo ? hi - lo : 0);
    for (std::size_t i = lo; i < hi; ++i) {
      const double* row = mat + i * d;
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += row[j] * query_vec[j];
      scored.push_back(Scored{acc, i});
    }
    const std::size_t take = std::min(k, scored.size());
    auto cmp = [&ids](const Scored& a, const Scored& b) { return better(a, b, ids); };
    std::partial_sort(scored.begin(), scored.begin() + take, scored.end(), cmp);
    scored.resize(take);
    shard_top[static_cast<std::size_t>(s)] = std::move(scored);
  }

  // Deterministic merge: pool the shard winners and re-rank globally.
  std::vector<Scored> merged;
  for (const auto& shard : shard_top) merged.insert(merged.end(), shard.begin(), shard.end());
  return select_topk(merged, k, ids, std::move(query_id));
}

}  // namespace prod
