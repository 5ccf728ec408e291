#pragma once

#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace spantrace {

// One indexed evidence unit. `text` is an exact substring of the source
// document starting at `doc_offset` (character offset).
struct Chunk {
  std::string doc_id;
  std::string chunk_id;
  std::string text;
  std::size_t doc_offset = 0;
};

struct Hit {
  Chunk chunk;
  double score = 0.0;
  int rank = 0;  // 1-based
};

struct Document {
  std::string doc_id;
  std::string text;
};

class IngestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Immutable after ingest; safe for concurrent read-only retrieval.
class Corpus {
 public:
  Corpus() = default;

  const std::vector<Chunk>& chunks() const { return chunks_; }
  bool empty() const { return chunks_.empty(); }
  std::size_t size() const { return chunks_.size(); }
  const Chunk* find_chunk(std::string_view chunk_id) const;

  // Rebuilds term statistics from `chunks_`. Called by ingest/load.
  void rebuild_index();

  static Corpus from_chunks(std::vector<Chunk> chunks);

 private:
  friend Corpus ingest_documents(const std::vector<Document>&, std::size_t, std::size_t);
  friend std::vector<Hit> retrieve_top_k(const Corpus&, std::string_view, int);

  std::vector<Chunk> chunks_;
  // Per-chunk token frequencies and corpus document frequencies, for the
  // TF-IDF cosine scorer. Tokenization never affects character offsets.
  std::vector<std::map<std::string, int>> term_freq_;
  std::vector<double> vec_norm_;
  std::map<std::string, int> doc_freq_;
};

// Lowercased alphanumeric tokens; everything else is a separator.
std::vector<std::string> tokenize_for_retrieval(std::string_view text);

// Character-window chunking with stride = chunk_size - overlap.
// chunk_id = "<doc_id>#<ordinal>"; empty documents yield zero chunks.
Corpus ingest_documents(const std::vector<Document>& docs, std::size_t chunk_size,
                        std::size_t overlap);

// Deterministic TF-IDF cosine retrieval: score desc, ties by chunk_id asc.
// Returns min(k, corpus size) hits; empty corpus yields an empty list.
std::vector<Hit> retrieve_top_k(const Corpus& corpus, std::string_view query, int k);

// Line-delimited manifest, one JSON record per chunk, stable key order.
void save_corpus_manifest(const Corpus& corpus, const std::string& path);
Corpus load_corpus_manifest(const std::string& path);
std::string corpus_manifest_string(const Corpus& corpus);

}  // namespace spantrace
