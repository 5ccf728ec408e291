#include "spantrace/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "spantrace/text.hpp"

namespace spantrace {

using json = nlohmann::json;

std::vector<std::string> tokenize_for_retrieval(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    const unsigned char u = static_cast<unsigned char>(ch);
    if (std::isalnum(u)) {
      cur.push_back(static_cast<char>(std::tolower(u)));
    } else if (u >= 0x80) {
      // Non-ASCII bytes stay part of the token so multibyte words survive.
      cur.push_back(ch);
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

const Chunk* Corpus::find_chunk(std::string_view chunk_id) const {
  for (const auto& c : chunks_) {
    if (c.chunk_id == chunk_id) return &c;
  }
  return nullptr;
}

void Corpus::rebuild_index() {
  term_freq_.clear();
  doc_freq_.clear();
  vec_norm_.clear();
  term_freq_.reserve(chunks_.size());
  for (const auto& c : chunks_) {
    std::map<std::string, int> tf;
    for (auto& t : tokenize_for_retrieval(c.text)) ++tf[t];
    for (const auto& [term, _] : tf) ++doc_freq_[term];
    term_freq_.push_back(std::move(tf));
  }
  const double n = static_cast<double>(chunks_.size());
  vec_norm_.reserve(chunks_.size());
  for (const auto& tf : term_freq_) {
    double sq = 0.0;
    for (const auto& [term, f] : tf) {
      const double idf = std::log((1.0 + n) / (1.0 + doc_freq_.at(term))) + 1.0;
      const double w = f * idf;
      sq += w * w;
    }
    vec_norm_.push_back(std::sqrt(sq));
  }
}

Corpus Corpus::from_chunks(std::vector<Chunk> chunks) {
  Corpus c;
  c.chunks_ = std::move(chunks);
  c.rebuild_index();
  return c;
}

Corpus ingest_documents(const std::vector<Document>& docs, std::size_t chunk_size,
                        std::size_t overlap) {
  if (chunk_size == 0 || overlap >= chunk_size) {
    throw IngestError("ingest_documents: require chunk_size > overlap >= 0");
  }
  std::set<std::string> seen;
  std::vector<Chunk> chunks;
  const std::size_t stride = chunk_size - overlap;
  for (const auto& doc : docs) {
    if (!seen.insert(doc.doc_id).second) {
      throw IngestError("ingest_documents: duplicate doc_id '" + doc.doc_id + "'");
    }
    const std::size_t len = char_length(doc.text);
    if (len == 0) {
      std::cerr << "warning: document '" << doc.doc_id << "' is empty, no chunks emitted\n";
      continue;
    }
    std::size_t ordinal = 0;
    for (std::size_t start = 0;; start += stride, ++ordinal) {
      const std::size_t end = std::min(start + chunk_size, len);
      char buf[8];
      std::snprintf(buf, sizeof(buf), "%04zu", ordinal);
      chunks.push_back(Chunk{doc.doc_id, doc.doc_id + "#" + buf,
                             char_substr(doc.text, start, end), start});
      if (end >= len) break;
    }
  }
  return Corpus::from_chunks(std::move(chunks));
}

std::vector<Hit> retrieve_top_k(const Corpus& corpus, std::string_view query, int k) {
  std::vector<Hit> hits;
  if (corpus.empty() || k < 1) return hits;

  std::map<std::string, int> qtf;
  for (auto& t : tokenize_for_retrieval(query)) ++qtf[t];
  const double n = static_cast<double>(corpus.size());
  std::map<std::string, double> qw;
  double qsq = 0.0;
  for (const auto& [term, f] : qtf) {
    auto it = corpus.doc_freq_.find(term);
    const double df = it == corpus.doc_freq_.end() ? 0.0 : it->second;
    const double idf = std::log((1.0 + n) / (1.0 + df)) + 1.0;
    const double w = f * idf;
    qw[term] = w;
    qsq += w * w;
  }
  const double qnorm = std::sqrt(qsq);

  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    double dot = 0.0;
    const auto& tf = corpus.term_freq_[i];
    for (const auto& [term, w] : qw) {
      auto it = tf.find(term);
      if (it == tf.end()) continue;
      const double idf = std::log((1.0 + n) / (1.0 + corpus.doc_freq_.at(term))) + 1.0;
      dot += w * it->second * idf;
    }
    const double denom = qnorm * corpus.vec_norm_[i];
    scored.emplace_back(denom > 0.0 ? dot / denom : 0.0, i);
  }
  std::sort(scored.begin(), scored.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return corpus.chunks_[a.second].chunk_id < corpus.chunks_[b.second].chunk_id;
  });

  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), scored.size());
  hits.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    hits.push_back(Hit{corpus.chunks_[scored[i].second], scored[i].first,
                       static_cast<int>(i) + 1});
  }
  return hits;
}

std::string corpus_manifest_string(const Corpus& corpus) {
  std::ostringstream out;
  for (const auto& c : corpus.chunks()) {
    json j;
    j["chunk_id"] = c.chunk_id;
    j["doc_id"] = c.doc_id;
    j["doc_offset"] = c.doc_offset;
    j["text"] = c.text;
    out << j.dump() << "\n";
  }
  return out.str();
}

void save_corpus_manifest(const Corpus& corpus, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f << corpus_manifest_string(corpus);
}

Corpus load_corpus_manifest(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open corpus manifest: " + path);
  std::vector<Chunk> chunks;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    chunks.push_back(Chunk{j.at("doc_id").get<std::string>(),
                           j.at("chunk_id").get<std::string>(),
                           j.at("text").get<std::string>(),
                           j.at("doc_offset").get<std::size_t>()});
  }
  return Corpus::from_chunks(std::move(chunks));
}

}  // namespace spantrace
