#include "sare/synthworld.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "sare/errors.hpp"

namespace sare::synth {

namespace {

using json = nlohmann::ordered_json;

// Mild popularity gradient so the "popular" probe regime has a target.
double object_weight(int o) { return 1.0 / (1.0 + 0.1 * static_cast<double>(o)); }

std::vector<int> sample_present(Rng& rng, int n_objects, int count) {
  std::vector<double> w(static_cast<size_t>(n_objects));
  for (int o = 0; o < n_objects; ++o) w[static_cast<size_t>(o)] = object_weight(o);
  std::vector<int> out;
  for (int k = 0; k < count; ++k) {
    const int pick = rng.categorical(w);
    out.push_back(pick);
    w[static_cast<size_t>(pick)] = 0.0;
  }
  std::sort(out.begin(), out.end());
  return out;
}

int sample_injection(Rng& rng, const Scene& scene, std::span<const double> q,
                     int n_objects) {
  std::vector<double> w(static_cast<size_t>(n_objects), 0.0);
  for (int cand = 0; cand < n_objects; ++cand) {
    if (scene.contains(cand)) continue;
    double acc = 0.0;
    for (int p : scene.objects) acc += q[static_cast<size_t>(cand) * n_objects + p];
    w[static_cast<size_t>(cand)] = acc;
  }
  int pick = rng.categorical(w);
  if (pick < 0) {
    // co-occurrence weights vanished for this scene: fall back to uniform absent
    std::vector<int> absent;
    for (int cand = 0; cand < n_objects; ++cand) {
      if (!scene.contains(cand)) absent.push_back(cand);
    }
    if (absent.empty()) return -1;
    pick = absent[static_cast<size_t>(rng.uniform_int(static_cast<int>(absent.size())))];
  }
  return pick;
}

}  // namespace

std::vector<double> build_q(int n_objects, double pair_weight, double background) {
  std::vector<double> q(static_cast<size_t>(n_objects) * n_objects, background);
  for (int i = 0; i < n_objects; ++i) q[static_cast<size_t>(i) * n_objects + i] = 0.0;
  for (int k = 0; k + 1 < n_objects; k += 2) {
    q[static_cast<size_t>(k) * n_objects + (k + 1)] = pair_weight;
    q[static_cast<size_t>(k + 1) * n_objects + k] = pair_weight;
  }
  return q;
}

double alignment_score_mean(const Scene& scene, int object) {
  return 20.0 + 16.0 * scene.encoding[static_cast<size_t>(object)];
}

Corpus generate_corpus(const CorpusConfig& cfg) {
  return generate_corpus(cfg, build_q(cfg.n_objects, cfg.q_pair_weight, cfg.q_background));
}

Corpus generate_corpus(const CorpusConfig& cfg, std::span<const double> q) {
  const int n = cfg.n_objects;
  if (static_cast<int64_t>(q.size()) != static_cast<int64_t>(n) * n) {
    throw ConfigError("generate_corpus: Q must be n_objects x n_objects");
  }
  double q_total = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double v = q[static_cast<size_t>(i) * n + j];
      if (v < 0.0) throw ConfigError("generate_corpus: Q must be nonnegative");
      if (i == j && v != 0.0) throw ConfigError("generate_corpus: Q diagonal must be zero");
      q_total += v;
    }
  }
  if (q_total == 0.0 && cfg.p_h > 0.0) {
    throw ConfigError("generate_corpus: degenerate Q with p_h > 0");
  }
  if (cfg.p_h < 0.0 || cfg.p_h > 1.0) throw ConfigError("generate_corpus: p_h out of [0,1]");
  if (cfg.min_objects < 1 || cfg.max_objects >= n || cfg.min_objects > cfg.max_objects) {
    throw ConfigError("generate_corpus: bad object-count range");
  }

  // Per-prompt injection rates: the exhaustive prompt is riskier, while the
  // corpus-level injected fraction stays at p_h in expectation.
  const double f_list = cfg.canonical_captions ? 0.0 : cfg.listall_frac;
  double p_list = std::min(1.0, 1.4 * cfg.p_h);
  double p_desc = cfg.p_h;
  if (f_list > 0.0 && f_list < 1.0) {
    p_desc = (cfg.p_h - f_list * p_list) / (1.0 - f_list);
    if (p_desc < 0.0) {
      p_list = cfg.p_h / f_list;
      p_desc = 0.0;
    }
  } else if (f_list >= 1.0) {
    p_list = cfg.p_h;
  }

  const toy::Vocab vocab(n);
  Corpus corpus;
  corpus.config = cfg;
  corpus.scenes.reserve(static_cast<size_t>(cfg.n_scenes));

  Rng root(cfg.seed);
  for (int i = 0; i < cfg.n_scenes; ++i) {
    Rng rng = root.fork(static_cast<uint64_t>(i));

    Scene scene;
    scene.id = i;
    const int count = cfg.min_objects + rng.uniform_int(cfg.max_objects - cfg.min_objects + 1);
    scene.objects = sample_present(rng, n, count);
    scene.encoding.assign(static_cast<size_t>(n), 0.0);
    for (int o = 0; o < n; ++o) {
      const double base = scene.contains(o) ? 1.0 : 0.0;
      scene.encoding[static_cast<size_t>(o)] = base + rng.normal(0.0, cfg.sigma_enc);
    }
    corpus.scenes.push_back(scene);
    const int scene_index = static_cast<int>(corpus.scenes.size()) - 1;

    // caption sample
    CaptionSample cap;
    cap.scene_index = scene_index;
    cap.exhaustive = !cfg.canonical_captions && rng.bernoulli(f_list);
    cap.prompt = {vocab.bos(), cap.exhaustive ? vocab.list_all() : vocab.describe()};

    std::vector<int> mentions = scene.objects;
    if (cfg.canonical_captions) {
      // already sorted; mention everything, no injection
    } else {
      rng.shuffle(mentions);
      if (!cap.exhaustive && static_cast<int>(mentions.size()) > cfg.describe_mentions) {
        mentions.resize(static_cast<size_t>(cfg.describe_mentions));
      }
      const double p_inject = cap.exhaustive ? p_list : p_desc;
      if (rng.bernoulli(p_inject)) {
        const int injected = sample_injection(rng, scene, q, n);
        if (injected >= 0) {
          // the injected object follows the mention that co-occurs with it,
          // so the hallucination is a learnable next-mention channel rather
          // than uniform noise
          std::vector<double> trig(mentions.size(), 0.0);
          for (size_t t = 0; t < mentions.size(); ++t) {
            trig[t] = q[static_cast<size_t>(injected) * n + mentions[t]];
          }
          const int trigger = rng.categorical(trig);
          const int pos = trigger >= 0
                              ? trigger + 1
                              : rng.uniform_int(static_cast<int>(mentions.size()) + 1);
          mentions.insert(mentions.begin() + pos, injected);
          cap.injected_object = injected;
        }
      }
    }

    for (size_t k = 0; k < mentions.size(); ++k) {
      Span sp;
      sp.object = mentions[k];
      sp.begin = static_cast<int>(cap.caption.size());
      if (k > 0) cap.caption.push_back(vocab.conj());
      cap.caption.push_back(mentions[k]);
      if (k + 1 == mentions.size()) cap.caption.push_back(vocab.eos());
      sp.end = static_cast<int>(cap.caption.size());
      sp.truly_hallucinated = !scene.contains(mentions[k]);
      sp.score = alignment_score_mean(scene, mentions[k]) + rng.normal(0.0, cfg.sigma_score);
      cap.spans.push_back(sp);
    }
    double score_sum = 0.0;
    for (const Span& sp : cap.spans) score_sum += sp.score;
    cap.sent_score = cap.spans.empty() ? 0.0 : score_sum / static_cast<double>(cap.spans.size());
    corpus.samples.push_back(std::move(cap));

    // existence probes; half the negatives ask about co-occurring absent
    // objects and carry labels corrupted at the injection rate, the other
    // half ask about uniformly absent objects with clean labels, so the
    // co-occurrence bias infects yes/no behaviour without destroying it
    for (int k = 0; k < cfg.probes_per_scene; ++k) {
      CaptionSample probe;
      probe.scene_index = scene_index;
      probe.is_probe = true;
      const bool positive = (k % 2 == 0);
      if (positive) {
        probe.probe_object =
            scene.objects[static_cast<size_t>(rng.uniform_int(static_cast<int>(scene.objects.size())))];
        probe.probe_truth = true;
        probe.probe_label_yes = true;
      } else {
        const bool adversarial = rng.bernoulli(0.5);
        if (adversarial) {
          const int obj = sample_injection(rng, scene, q, n);
          if (obj < 0) continue;
          probe.probe_object = obj;
          probe.probe_label_yes = rng.bernoulli(cfg.p_h);
        } else {
          std::vector<int> absent;
          for (int o = 0; o < n; ++o) {
            if (!scene.contains(o)) absent.push_back(o);
          }
          if (absent.empty()) continue;
          probe.probe_object =
              absent[static_cast<size_t>(rng.uniform_int(static_cast<int>(absent.size())))];
          probe.probe_label_yes = false;
        }
        probe.probe_truth = false;
      }
      probe.prompt = {vocab.bos(), vocab.ask(), probe.probe_object};
      probe.caption = {probe.probe_label_yes ? vocab.yes() : vocab.no(), vocab.eos()};
      corpus.samples.push_back(std::move(probe));
    }
  }
  return corpus;
}

// ---------------------------------------------------------------------------

CuratedCorpus curate(const Corpus& corpus, double t0, double t1, double t2) {
  if (!(t1 <= t2 && t2 <= t0)) {
    std::cerr << "warning: curation thresholds violate T1 <= T2 <= T0 (" << t1 << ", "
              << t2 << ", " << t0 << ")\n";
  }
  CuratedCorpus out;
  out.t0 = t0;
  out.t1 = t1;
  out.t2 = t2;
  for (const CaptionSample& cap : corpus.samples) {
    if (cap.is_probe) continue;
    out.n_sentences_total += 1;
    for (const Span& sp : cap.spans) {
      out.n_units_total += 1;
      UnlearnUnit u;
      u.scene_index = cap.scene_index;
      u.context = cap.prompt;
      u.context.insert(u.context.end(), cap.caption.begin(), cap.caption.begin() + sp.begin);
      u.target.assign(cap.caption.begin() + sp.begin, cap.caption.begin() + sp.end);
      u.object = sp.object;
      u.score = sp.score;
      u.truly_hallucinated = sp.truly_hallucinated;
      if (sp.score > t0) {
        out.d_pos.push_back(std::move(u));
      } else if (sp.score < t1) {
        out.d_neg.push_back(std::move(u));
      } else {
        out.n_units_discarded += 1;
      }
    }
    if (cap.sent_score > t2 && !cap.spans.empty()) {
      SentenceSample s;
      s.scene_index = cap.scene_index;
      s.prompt = cap.prompt;
      s.caption = cap.caption;
      s.score = cap.sent_score;
      s.has_injection = cap.injected_object >= 0;
      out.d_sent.push_back(std::move(s));
    }
  }
  return out;
}

void validate_for_unlearning(const CuratedCorpus& curated) {
  if (curated.d_neg.empty()) {
    throw NumericalError("curation produced an empty D_neg; unlearning cannot proceed");
  }
  if (curated.d_pos.empty()) {
    throw NumericalError("curation produced an empty D_pos; unlearning cannot proceed");
  }
  if (curated.d_sent.empty()) {
    throw NumericalError("curation produced an empty D_sent; unlearning cannot proceed");
  }
}

PurityReport curation_purity(const CuratedCorpus& curated) {
  PurityReport r;
  if (!curated.d_neg.empty()) {
    int hall = 0;
    for (const auto& u : curated.d_neg) hall += u.truly_hallucinated ? 1 : 0;
    r.d_neg_hallucinated_frac = static_cast<double>(hall) / static_cast<double>(curated.d_neg.size());
  }
  if (!curated.d_pos.empty()) {
    int grounded = 0;
    for (const auto& u : curated.d_pos) grounded += u.truly_hallucinated ? 0 : 1;
    r.d_pos_grounded_frac =
        static_cast<double>(grounded) / static_cast<double>(curated.d_pos.size());
  }
  return r;
}

// ---------------------------------------------------------------------------

namespace {

json config_to_json(const CorpusConfig& c) {
  json j;
  j["n_objects"] = c.n_objects;
  j["n_scenes"] = c.n_scenes;
  j["p_h"] = c.p_h;
  j["sigma_enc"] = c.sigma_enc;
  j["sigma_score"] = c.sigma_score;
  j["q_pair_weight"] = c.q_pair_weight;
  j["q_background"] = c.q_background;
  j["listall_frac"] = c.listall_frac;
  j["probes_per_scene"] = c.probes_per_scene;
  j["min_objects"] = c.min_objects;
  j["max_objects"] = c.max_objects;
  j["describe_mentions"] = c.describe_mentions;
  j["canonical_captions"] = c.canonical_captions;
  j["seed"] = c.seed;
  return j;
}

CorpusConfig config_from_json(const json& j) {
  CorpusConfig c;
  c.n_objects = j.at("n_objects").get<int>();
  c.n_scenes = j.at("n_scenes").get<int>();
  c.p_h = j.at("p_h").get<double>();
  c.sigma_enc = j.at("sigma_enc").get<double>();
  c.sigma_score = j.at("sigma_score").get<double>();
  c.q_pair_weight = j.at("q_pair_weight").get<double>();
  c.q_background = j.at("q_background").get<double>();
  c.listall_frac = j.at("listall_frac").get<double>();
  c.probes_per_scene = j.at("probes_per_scene").get<int>();
  c.min_objects = j.at("min_objects").get<int>();
  c.max_objects = j.at("max_objects").get<int>();
  c.describe_mentions = j.at("describe_mentions").get<int>();
  c.canonical_captions = j.at("canonical_captions").get<bool>();
  c.seed = j.at("seed").get<uint64_t>();
  return c;
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MissingArtifactError("save_corpus: cannot open " + path);
  json header;
  header["type"] = "header";
  header["schema"] = 1;
  header["config"] = config_to_json(corpus.config);
  header["n_scenes"] = corpus.scenes.size();
  header["n_samples"] = corpus.samples.size();
  out << header.dump() << "\n";

  for (const Scene& s : corpus.scenes) {
    json j;
    j["type"] = "scene";
    j["id"] = s.id;
    j["objects"] = s.objects;
    j["encoding"] = s.encoding;
    out << j.dump() << "\n";
  }
  for (const CaptionSample& c : corpus.samples) {
    json j;
    j["type"] = "sample";
    j["scene_index"] = c.scene_index;
    j["prompt"] = c.prompt;
    j["caption"] = c.caption;
    json spans = json::array();
    for (const Span& sp : c.spans) {
      json js;
      js["object"] = sp.object;
      js["begin"] = sp.begin;
      js["end"] = sp.end;
      js["score"] = sp.score;
      js["hall"] = sp.truly_hallucinated;
      spans.push_back(js);
    }
    j["spans"] = spans;
    j["sent_score"] = c.sent_score;
    j["injected_object"] = c.injected_object;
    j["exhaustive"] = c.exhaustive;
    j["is_probe"] = c.is_probe;
    j["probe_object"] = c.probe_object;
    j["probe_truth"] = c.probe_truth;
    j["probe_label_yes"] = c.probe_label_yes;
    out << j.dump() << "\n";
  }
  if (!out) throw MissingArtifactError("save_corpus: write failed for " + path);
}

Corpus load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("load_corpus: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw MissingArtifactError("load_corpus: empty file " + path);
  json header = json::parse(line);
  if (header.at("type") != "header" || header.at("schema") != 1) {
    throw MissingArtifactError("load_corpus: unsupported schema in " + path);
  }
  Corpus corpus;
  corpus.config = config_from_json(header.at("config"));
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    const std::string type = j.at("type").get<std::string>();
    if (type == "scene") {
      Scene s;
      s.id = j.at("id").get<int>();
      s.objects = j.at("objects").get<std::vector<int>>();
      s.encoding = j.at("encoding").get<std::vector<double>>();
      corpus.scenes.push_back(std::move(s));
    } else if (type == "sample") {
      CaptionSample c;
      c.scene_index = j.at("scene_index").get<int>();
      c.prompt = j.at("prompt").get<std::vector<int>>();
      c.caption = j.at("caption").get<std::vector<int>>();
      for (const auto& js : j.at("spans")) {
        Span sp;
        sp.object = js.at("object").get<int>();
        sp.begin = js.at("begin").get<int>();
        sp.end = js.at("end").get<int>();
        sp.score = js.at("score").get<double>();
        sp.truly_hallucinated = js.at("hall").get<bool>();
        c.spans.push_back(sp);
      }
      c.sent_score = j.at("sent_score").get<double>();
      c.injected_object = j.at("injected_object").get<int>();
      c.exhaustive = j.at("exhaustive").get<bool>();
      c.is_probe = j.at("is_probe").get<bool>();
      c.probe_object = j.at("probe_object").get<int>();
      c.probe_truth = j.at("probe_truth").get<bool>();
      c.probe_label_yes = j.at("probe_label_yes").get<bool>();
      corpus.samples.push_back(std::move(c));
    } else {
      throw MissingArtifactError("load_corpus: unknown record type " + type);
    }
  }
  const auto expect_scenes = header.at("n_scenes").get<size_t>();
  const auto expect_samples = header.at("n_samples").get<size_t>();
  if (corpus.scenes.size() != expect_scenes || corpus.samples.size() != expect_samples) {
    throw MissingArtifactError("load_corpus: record count mismatch in " + path);
  }
  return corpus;
}

void save_curated(const CuratedCorpus& curated, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MissingArtifactError("save_curated: cannot open " + path);
  json header;
  header["type"] = "header";
  header["schema"] = 1;
  header["t0"] = curated.t0;
  header["t1"] = curated.t1;
  header["t2"] = curated.t2;
  header["n_units_total"] = curated.n_units_total;
  header["n_units_discarded"] = curated.n_units_discarded;
  header["n_sentences_total"] = curated.n_sentences_total;
  header["n_pos"] = curated.d_pos.size();
  header["n_neg"] = curated.d_neg.size();
  header["n_sent"] = curated.d_sent.size();
  out << header.dump() << "\n";

  auto dump_unit = [&](const UnlearnUnit& u, const char* type) {
    json j;
    j["type"] = type;
    j["scene_index"] = u.scene_index;
    j["context"] = u.context;
    j["target"] = u.target;
    j["object"] = u.object;
    j["score"] = u.score;
    j["hall"] = u.truly_hallucinated;
    out << j.dump() << "\n";
  };
  for (const auto& u : curated.d_pos) dump_unit(u, "pos");
  for (const auto& u : curated.d_neg) dump_unit(u, "neg");
  for (const auto& s : curated.d_sent) {
    json j;
    j["type"] = "sent";
    j["scene_index"] = s.scene_index;
    j["prompt"] = s.prompt;
    j["caption"] = s.caption;
    j["score"] = s.score;
    j["has_injection"] = s.has_injection;
    out << j.dump() << "\n";
  }
  if (!out) throw MissingArtifactError("save_curated: write failed for " + path);
}

CuratedCorpus load_curated(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("load_curated: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw MissingArtifactError("load_curated: empty file " + path);
  json header = json::parse(line);
  if (header.at("type") != "header" || header.at("schema") != 1) {
    throw MissingArtifactError("load_curated: unsupported schema in " + path);
  }
  CuratedCorpus c;
  c.t0 = header.at("t0").get<double>();
  c.t1 = header.at("t1").get<double>();
  c.t2 = header.at("t2").get<double>();
  c.n_units_total = header.at("n_units_total").get<int>();
  c.n_units_discarded = header.at("n_units_discarded").get<int>();
  c.n_sentences_total = header.at("n_sentences_total").get<int>();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    const std::string type = j.at("type").get<std::string>();
    if (type == "pos" || type == "neg") {
      UnlearnUnit u;
      u.scene_index = j.at("scene_index").get<int>();
      u.context = j.at("context").get<std::vector<int>>();
      u.target = j.at("target").get<std::vector<int>>();
      u.object = j.at("object").get<int>();
      u.score = j.at("score").get<double>();
      u.truly_hallucinated = j.at("hall").get<bool>();
      (type == "pos" ? c.d_pos : c.d_neg).push_back(std::move(u));
    } else if (type == "sent") {
      SentenceSample s;
      s.scene_index = j.at("scene_index").get<int>();
      s.prompt = j.at("prompt").get<std::vector<int>>();
      s.caption = j.at("caption").get<std::vector<int>>();
      s.score = j.at("score").get<double>();
      s.has_injection = j.at("has_injection").get<bool>();
      c.d_sent.push_back(std::move(s));
    } else {
      throw MissingArtifactError("load_curated: unknown record type " + type);
    }
  }
  if (c.d_pos.size() != header.at("n_pos").get<size_t>() ||
      c.d_neg.size() != header.at("n_neg").get<size_t>() ||
      c.d_sent.size() != header.at("n_sent").get<size_t>()) {
    throw MissingArtifactError("load_curated: record count mismatch in " + path);
  }
  return c;
}

}  // namespace sare::synth
