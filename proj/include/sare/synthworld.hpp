#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sare/rng.hpp"
#include "sare/vocab.hpp"

namespace sare::synth {

struct CorpusConfig {
  int n_objects = 24;
  int n_scenes = 3000;
  double p_h = 0.5;          // fraction of captions carrying one injected object
  double sigma_enc = 0.1;    // scene-encoding noise
  double sigma_score = 1.0;  // alignment-score noise
  double q_pair_weight = 1.0;   // co-occurrence strength for partner pairs
  double q_background = 0.05;   // co-occurrence floor for all other pairs
  double listall_frac = 0.3;    // fraction of captions under the exhaustive prompt
  int probes_per_scene = 2;     // yes/no existence-training samples per scene
  int min_objects = 2;
  int max_objects = 5;
  int describe_mentions = 3;     // mention cap under the standard prompt
  bool canonical_captions = false;  // sorted full mentions, no injection noise order
  uint64_t seed = 1;
};

struct Scene {
  int id = 0;
  std::vector<int> objects;       // present object tokens, ascending
  std::vector<double> encoding;   // noisy bag-of-objects, length n_objects

  bool contains(int object) const {
    for (int o : objects) {
      if (o == object) return true;
    }
    return false;
  }
};

// cur(o) = caption[begin, end); pre(o) = prompt ++ caption[0, begin).
struct Span {
  int object = -1;
  int begin = 0;
  int end = 0;
  double score = 0.0;  // S(o), frozen at generation time
  bool truly_hallucinated = false;
};

struct CaptionSample {
  int scene_index = 0;
  std::vector<int> prompt;
  std::vector<int> caption;  // ends with <eos> for caption samples
  std::vector<Span> spans;   // tiles the caption; empty for probe samples
  double sent_score = 0.0;   // S(y) = mean span score; 0 when no spans
  int injected_object = -1;  // ground truth; -1 when clean
  bool exhaustive = false;   // generated under the exhaustive-listing prompt

  bool is_probe = false;
  int probe_object = -1;
  bool probe_truth = false;      // object actually present
  bool probe_label_yes = false;  // training label, possibly corrupted
};

struct Corpus {
  CorpusConfig config;
  std::vector<Scene> scenes;
  std::vector<CaptionSample> samples;
};

// Symmetric co-occurrence matrix: adjacent pairs (2k, 2k+1) get pair_weight,
// every other off-diagonal entry gets background, diagonal is zero.
std::vector<double> build_q(int n_objects, double pair_weight, double background);

// Synthesizes scenes plus hallucination-prone captions. Exactly one absent
// object is injected with probability p_h overall; injections are sampled
// proportionally to Q-weighted co-occurrence with the present set. Exhaustive
// prompts carry a proportionally higher injection rate while the corpus-level
// rate stays at p_h in expectation.
Corpus generate_corpus(const CorpusConfig& cfg, std::span<const double> q);
Corpus generate_corpus(const CorpusConfig& cfg);

// Noiseless alignment-score map: encoding similarity onto [20, 36].
double alignment_score_mean(const Scene& scene, int object);

// ---------------------------------------------------------------------------
// Threshold curation.

struct UnlearnUnit {
  int scene_index = 0;
  std::vector<int> context;  // prompt ++ preceding caption tokens
  std::vector<int> target;   // the object subsentence
  int object = -1;
  double score = 0.0;
  bool truly_hallucinated = false;
};

struct SentenceSample {
  int scene_index = 0;
  std::vector<int> prompt;
  std::vector<int> caption;
  double score = 0.0;
  bool has_injection = false;
};

struct CuratedCorpus {
  std::vector<UnlearnUnit> d_pos;
  std::vector<UnlearnUnit> d_neg;
  std::vector<SentenceSample> d_sent;
  double t0 = 32.0, t1 = 23.0, t2 = 27.5;
  int n_units_total = 0;
  int n_units_discarded = 0;
  int n_sentences_total = 0;
};

// Strict threshold predicates: S(o) > t0 keeps a unit in d_pos, S(o) < t1 in
// d_neg, boundary values land in neither; sentences need S(y) > t2.
CuratedCorpus curate(const Corpus& corpus, double t0, double t1, double t2);

// Throws when either unlearning subset is empty.
void validate_for_unlearning(const CuratedCorpus& curated);

struct PurityReport {
  double d_neg_hallucinated_frac = 0.0;
  double d_pos_grounded_frac = 0.0;
};

PurityReport curation_purity(const CuratedCorpus& curated);

// ---------------------------------------------------------------------------
// Corpus file io: line-delimited JSON with a schema-versioned header record
// and deterministic field order.

void save_corpus(const Corpus& corpus, const std::string& path);
Corpus load_corpus(const std::string& path);

void save_curated(const CuratedCorpus& curated, const std::string& path);
CuratedCorpus load_curated(const std::string& path);

}  // namespace sare::synth
