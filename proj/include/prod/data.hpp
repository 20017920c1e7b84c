#ifndef PROD_DATA_HPP_
#define PROD_DATA_HPP_

#include <map>
#include <string>
#include <vector>

namespace prod {

struct Passage {
  std::string id;
  std::string text;
};

// Ordered passage collection with unique, nonempty ids.
struct Corpus {
  std::vector<Passage> passages;

  std::size_t size() const { return passages.size(); }
  bool empty() const { return passages.empty(); }
  // Index of a passage id, or npos.
  std::size_t find(const std::string& id) const;
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  void validate() const;  // throws InputError on duplicate/empty ids

 private:
  mutable std::map<std::string, std::size_t> index_;  // built lazily by find()
};

struct Query {
  std::string id;
  std::string text;
};

enum class Split { kTrain, kDev, kTest };

std::string split_name(Split s);

struct QuerySet {
  std::vector<Query> queries;
  Split split = Split::kTrain;

  std::size_t size() const { return queries.size(); }
  void validate() const;
};

// Relevance judgments: query id -> (passage id -> grade). Sorted maps keep
// every iteration order deterministic.
class Qrels {
 public:
  void add(const std::string& query_id, const std::string& passage_id, int grade);

  // nullptr when the query has no judgments.
  const std::map<std::string, int>* find(const std::string& query_id) const;

  // Passage ids with grade > 0, ascending.
  std::vector<std::string> relevant_ids(const std::string& query_id) const;

  const std::map<std::string, std::map<std::string, int>>& entries() const { return entries_; }
  std::size_t num_queries() const { return entries_.size(); }

 private:
  std::map<std::string, std::map<std::string, int>> entries_;
};

}  // namespace prod

#endif  // PROD_DATA_HPP_
