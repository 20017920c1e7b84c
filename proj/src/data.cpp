#include "prod/data.hpp"

#include "prod/common.hpp"

namespace prod {

std::size_t Corpus::find(const std::string& id) const {
  if (index_.size() != passages.size()) {
    index_.clear();
    for (std::size_t i = 0; i < passages.size(); ++i) index_.emplace(passages[i].id, i);
  }
  auto it = index_.find(id);
  return it == index_.end() ? npos : it->second;
}

void Corpus::validate() const {
  std::map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < passages.size(); ++i) {
    if (passages[i].id.empty()) {
      throw InputError("corpus passage " + std::to_string(i) + " has an empty id");
    }
    auto [it, inserted] = seen.emplace(passages[i].id, i);
    if (!inserted) throw InputError("duplicate passage id '" + passages[i].id + "'");
  }
}

std::string split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kDev: return "dev";
    case Split::kTest: return "test";
  }
  return "unknown";
}

void QuerySet::validate() const {
  std::map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    if (queries[i].id.empty()) {
      throw InputError("query " + std::to_string(i) + " has an empty id");
    }
    auto [it, inserted] = seen.emplace(queries[i].id, i);
    if (!inserted) throw InputError("duplicate query id '" + queries[i].id + "'");
  }
}

void Qrels::add(const std::string& query_id, const std::string& passage_id, int grade) {
  if (grade < 0) throw InputError("qrels grade must be nonnegative");
  entries_[query_id][passage_id] = grade;
}

const std::map<std::string, int>* Qrels::find(const std::string& query_id) const {
  auto it = entries_.find(query_id);
  return it == entries_.end() ? nullptr : &it->second;
}

std::vector<std::string> Qrels::relevant_ids(const std::string& query_id) const {
  std::vector<std::string> out;
  if (const auto* judged = find(query_id)) {
    for (const auto& [pid, grade] : *judged) {
      if (grade > 0) out.push_back(pid);
    }
  }
  return out;
}

}  // namespace prod
