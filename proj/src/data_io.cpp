#include "prod/data_io.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "prod/common.hpp"
#include "prod/metrics.hpp"
#include "prod/rng.hpp"

namespace prod {

namespace {

struct TsvRecord {
  std::string id;
  std::string text;
};

std::vector<TsvRecord> load_tsv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open file: " + path);
  std::vector<TsvRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw InputError(path + ":" + std::to_string(line_no) + ": expected id<TAB>text");
    }
    out.push_back(TsvRecord{line.substr(0, tab), line.substr(tab + 1)});
  }
  return out;
}

}  // namespace

Corpus load_corpus(const std::string& path) {
  Corpus corpus;
  for (TsvRecord& rec : load_tsv(path)) {
    corpus.passages.push_back(Passage{std::move(rec.id), std::move(rec.text)});
  }
  if (corpus.empty()) throw InputError("corpus is empty: " + path);
  corpus.validate();
  return corpus;
}

QuerySet load_queries(const std::string& path, Split split) {
  QuerySet qs;
  qs.split = split;
  for (TsvRecord& rec : load_tsv(path)) {
    qs.queries.push_back(Query{std::move(rec.id), std::move(rec.text)});
  }
  qs.validate();
  return qs;
}

Qrels load_qrels(const std::string& path) { return read_qrels_file(path); }

void save_corpus(const std::string& path, const Corpus& corpus) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open file for writing: " + path);
  for (const Passage& p : corpus.passages) os << p.id << '\t' << p.text << '\n';
  if (!os) throw IoError("write failed: " + path);
}

void save_queries(const std::string& path, const QuerySet& queries) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open file for writing: " + path);
  for (const Query& q : queries.queries) os << q.id << '\t' << q.text << '\n';
  if (!os) throw IoError("write failed: " + path);
}

void save_qrels(const std::string& path, const Qrels& qrels) { write_qrels_file(path, qrels); }

// ---- synthetic dataset -------------------------------------------------------

void SyntheticSpec::validate() const {
  if (num_clusters == 0 || passages_per_cluster == 0 || queries_per_cluster == 0) {
    throw ConfigError("synthetic: cluster/passage/query counts must be positive");
  }
  if (vocab_tokens_per_cluster == 0) {
    throw ConfigError("synthetic: vocab_tokens_per_cluster must be positive");
  }
  if (!(noise_token_rate >= 0.0 && noise_token_rate < 1.0)) {
    throw ConfigError("synthetic: noise_token_rate must lie in [0, 1)");
  }
  if (passage_tokens == 0 || query_tokens == 0) {
    throw ConfigError("synthetic: passage/query token counts must be positive");
  }
}

namespace {

std::string cluster_token(std::size_t cluster, std::size_t index) {
  return "w" + std::to_string(cluster) + "x" + std::to_string(index);
}

std::string pad_number(std::size_t value, std::size_t width) {
  std::string s = std::to_string(value);
  while (s.size() < width) s.insert(s.begin(), '0');
  return s;
}

QuerySet make_query_split(const SyntheticSpec& spec, Split split, Qrels& qrels,
                          const std::vector<std::vector<std::string>>& cluster_passages) {
  QuerySet qs;
  qs.split = split;
  const std::string prefix = split_name(split);
  RngStream rng(derive_seed(spec.seed, "queries." + prefix));
  std::size_t counter = 0;
  for (std::size_t c = 0; c < spec.num_clusters; ++c) {
    for (std::size_t qi = 0; qi < spec.queries_per_cluster; ++qi) {
      std::string text;
      for (std::size_t t = 0; t < spec.query_tokens; ++t) {
        if (t > 0) text += ' ';
        text += cluster_token(c, rng.next_below(spec.vocab_tokens_per_cluster));
      }
      const std::string qid = prefix + "-q" + pad_number(counter++, 4);
      qs.queries.push_back(Query{qid, std::move(text)});
      for (const std::string& pid : cluster_passages[c]) qrels.add(qid, pid, 1);
    }
  }
  return qs;
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticData data;
  RngStream rng(derive_seed(spec.seed, "passages"));

  std::vector<std::vector<std::string>> cluster_passages(spec.num_clusters);
  std::size_t passage_counter = 0;
  for (std::size_t c = 0; c < spec.num_clusters; ++c) {
    for (std::size_t pi = 0; pi < spec.passages_per_cluster; ++pi) {
      std::string text;
      for (std::size_t t = 0; t < spec.passage_tokens; ++t) {
        std::size_t source_cluster = c;
        if (spec.num_clusters > 1 && rng.next_double() < spec.noise_token_rate) {
          // Uniform over the other clusters.
          std::size_t other = rng.next_below(spec.num_clusters - 1);
          if (other >= c) ++other;
          source_cluster = other;
        }
        if (t > 0) text += ' ';
        text += cluster_token(source_cluster, rng.next_below(spec.vocab_tokens_per_cluster));
      }
      const std::string pid = "p" + pad_number(passage_counter++, 5);
      data.corpus.passages.push_back(Passage{pid, std::move(text)});
      cluster_passages[c].push_back(pid);
    }
  }

  data.train = make_query_split(spec, Split::kTrain, data.qrels, cluster_passages);
  data.dev = make_query_split(spec, Split::kDev, data.qrels, cluster_passages);
  data.test = make_query_split(spec, Split::kTest, data.qrels, cluster_passages);
  return data;
}

void save_synthetic(const std::string& dir, const SyntheticData& data) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path base(dir);
  save_corpus((base / "corpus.tsv").string(), data.corpus);
  save_queries((base / "queries.train.tsv").string(), data.train);
  save_queries((base / "queries.dev.tsv").string(), data.dev);
  save_queries((base / "queries.test.tsv").string(), data.test);
  save_qrels((base / "qrels.txt").string(), data.qrels);
}

SyntheticData load_dataset_dir(const std::string& dir) {
  const std::filesystem::path base(dir);
  SyntheticData data;
  data.corpus = load_corpus((base / "corpus.tsv").string());
  data.train = load_queries((base / "queries.train.tsv").string(), Split::kTrain);
  data.dev = load_queries((base / "queries.dev.tsv").string(), Split::kDev);
  data.test = load_queries((base / "queries.test.tsv").string(), Split::kTest);
  data.qrels = load_qrels((base / "qrels.txt").string());
  return data;
}

}  // namespace prod
