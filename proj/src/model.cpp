#include "sare/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace sare::toy {

namespace {

ParamArray make_array(const std::string& name, Partition part, ad::Shape shape,
                      Rng& rng, double std_dev) {
  ParamArray a;
  a.name = name;
  a.partition = part;
  a.shape = std::move(shape);
  a.value.resize(static_cast<size_t>(ad::numel(a.shape)));
  for (double& v : a.value) v = std_dev > 0.0 ? rng.normal(0.0, std_dev) : 0.0;
  return a;
}

}  // namespace

CaptionModel CaptionModel::init(ModelDims dims, uint64_t seed, double init_std) {
  if (dims.n_objects < 2 || dims.enc_dim < 1 || dims.hidden < 1 || dims.ctx < 2) {
    throw ConfigError("CaptionModel::init: degenerate dims");
  }
  CaptionModel m(dims);
  Rng rng(seed);
  const int v = dims.vocab_size();
  const int h = dims.hidden;
  const int e = dims.enc_dim;

  m.enc_proj = make_array("enc_proj", Partition::Encoder, {e, dims.n_objects}, rng,
                          1.0 / std::sqrt(static_cast<double>(dims.n_objects)));
  m.map_w = make_array("map_w", Partition::Mapping, {h, e}, rng,
                       1.0 / std::sqrt(static_cast<double>(e)));
  m.map_b = make_array("map_b", Partition::Mapping, {h}, rng, 0.0);
  m.emb = make_array("emb", Partition::Decoder, {v, h}, rng, init_std);
  m.pos = make_array("pos", Partition::Decoder, {dims.ctx, h}, rng, init_std);
  const double dec_std = 1.0 / std::sqrt(static_cast<double>(h));
  m.w1 = make_array("w1", Partition::Decoder, {h, h}, rng, dec_std);
  m.b1 = make_array("b1", Partition::Decoder, {h}, rng, 0.0);
  m.wg = make_array("wg", Partition::Decoder, {h, h}, rng, dec_std);
  m.bg = make_array("bg", Partition::Decoder, {h}, rng, 0.0);
  m.w_out = make_array("w_out", Partition::Decoder, {v, h}, rng, dec_std);
  m.b_out = make_array("b_out", Partition::Decoder, {v}, rng, 0.0);
  return m;
}

std::vector<ParamArray*> CaptionModel::trainable_arrays(TrainScope scope) {
  std::vector<ParamArray*> out;
  switch (scope) {
    case TrainScope::None:
      break;
    case TrainScope::MappingOnly:
      out = {&map_w, &map_b};
      break;
    case TrainScope::MappingAndDecoder:
      out = {&map_w, &map_b, &emb, &pos, &w1, &b1, &wg, &bg, &w_out, &b_out};
      break;
    case TrainScope::AdapterOnly:
      if (!adapter) throw ConfigError("trainable_arrays: no adapter attached");
      for (auto& f : adapter->mats) {
        out.push_back(&f.down);
        out.push_back(&f.up);
      }
      break;
  }
  return out;
}

std::vector<const ParamArray*> CaptionModel::trainable_arrays(TrainScope scope) const {
  auto mut = const_cast<CaptionModel*>(this)->trainable_arrays(scope);
  return {mut.begin(), mut.end()};
}

std::vector<ParamArray*> CaptionModel::all_arrays() {
  std::vector<ParamArray*> out = {&enc_proj, &map_w, &map_b, &emb,  &pos,  &w1,
                                  &b1,       &wg,    &bg,    &w_out, &b_out};
  if (adapter) {
    for (auto& f : adapter->mats) {
      out.push_back(&f.down);
      out.push_back(&f.up);
    }
  }
  return out;
}

std::vector<const ParamArray*> CaptionModel::all_arrays() const {
  auto mut = const_cast<CaptionModel*>(this)->all_arrays();
  return {mut.begin(), mut.end()};
}

ad::ParamVector CaptionModel::flatten_trainable(TrainScope scope) const {
  auto arrays = trainable_arrays(scope);
  std::vector<const std::vector<double>*> parts;
  parts.reserve(arrays.size());
  for (const auto* a : arrays) parts.push_back(&a->value);
  return ad::flatten(parts);
}

void CaptionModel::load_trainable(const ad::ParamVector& v, TrainScope scope) {
  auto arrays = trainable_arrays(scope);
  std::vector<std::vector<double>*> parts;
  parts.reserve(arrays.size());
  for (auto* a : arrays) parts.push_back(&a->value);
  ad::unflatten(v, parts);
}

BoundModel CaptionModel::bind(ad::Tape& tape, TrainScope scope) const {
  return BoundModel(*this, tape, scope);
}

// ---------------------------------------------------------------------------

BoundModel::BoundModel(const CaptionModel& model, ad::Tape& tape, TrainScope scope)
    : model_(&model), tape_(&tape), scope_(scope) {
  const bool g_map = scope == TrainScope::MappingOnly || scope == TrainScope::MappingAndDecoder;
  const bool g_dec = scope == TrainScope::MappingAndDecoder;
  const bool g_ada = scope == TrainScope::AdapterOnly;
  if (g_ada && !model.adapter) {
    throw ConfigError("bind: AdapterOnly scope requires an attached adapter");
  }

  auto leaf = [&](const ParamArray& a, bool rg) {
    return tape.leaf(a.shape, a.value, rg);
  };

  enc_proj_ = leaf(model.enc_proj, false);
  map_w_ = leaf(model.map_w, g_map);
  map_b_ = leaf(model.map_b, g_map);
  emb_ = leaf(model.emb, g_dec);
  pos_ = leaf(model.pos, g_dec);
  ad::Tensor w1 = leaf(model.w1, g_dec);
  b1_ = leaf(model.b1, g_dec);
  ad::Tensor wg = leaf(model.wg, g_dec);
  bg_ = leaf(model.bg, g_dec);
  ad::Tensor w_out = leaf(model.w_out, g_dec);
  b_out_ = leaf(model.b_out, g_dec);

  if (g_map) {
    trainable_leaves_ = {map_w_, map_b_};
    if (g_dec) {
      for (ad::Tensor t : {emb_, pos_, w1, b1_, wg, bg_, w_out, b_out_}) {
        trainable_leaves_.push_back(t);
      }
    }
  }

  // Low-rank deltas fold into the decoder matrices in-graph, so adapter
  // training differentiates straight through the composition.
  if (model.adapter) {
    const LoraAdapter& ada = *model.adapter;
    const double s = ada.alpha / static_cast<double>(ada.rank);
    auto apply = [&](ad::Tensor base, const std::string& target) {
      for (const LoraFactors& f : ada.mats) {
        if (f.target != target) continue;
        ad::Tensor down = leaf(f.down, g_ada);
        ad::Tensor up = leaf(f.up, g_ada);
        if (g_ada) {
          trainable_leaves_.push_back(down);
          trainable_leaves_.push_back(up);
        }
        return tape.add(base, tape.scale(tape.matmul(up, down), s));
      }
      return base;
    };
    w1 = apply(w1, "w1");
    wg = apply(wg, "wg");
    w_out = apply(w_out, "w_out");
  }

  w1_ = w1;
  wg_ = wg;
  w_out_ = w_out;
}

ad::Tensor BoundModel::scene_vector(std::span<const double> scene_enc) const {
  const auto& d = model_->dims();
  if (static_cast<int>(scene_enc.size()) != d.n_objects) {
    throw NumericalError("scene_vector: encoding length mismatch");
  }
  ad::Tensor s = tape_->constant({d.n_objects},
                                 std::vector<double>(scene_enc.begin(), scene_enc.end()));
  ad::Tensor e = tape_->matmul(enc_proj_, s);
  return tape_->tanh(tape_->affine(map_w_, e, map_b_));
}

namespace {

ad::Tensor gated_logits(ad::Tape& tape, ad::Tensor f, ad::Tensor w1, ad::Tensor b1,
                        ad::Tensor wg, ad::Tensor bg, ad::Tensor w_out, ad::Tensor b_out) {
  ad::Tensor u = tape.tanh(tape.affine(w1, f, b1));
  ad::Tensor g = tape.sigmoid(tape.affine(wg, f, bg));
  ad::Tensor z = tape.mul(u, g);
  return tape.affine(w_out, tape.add(f, z), b_out);
}

}  // namespace

ad::Tensor BoundModel::position_logits(ad::Tensor scene_vec,
                                       std::span<const int> prefix) const {
  const auto& d = model_->dims();
  const int p = static_cast<int>(prefix.size());
  if (p > d.ctx) throw NumericalError("position_logits: prefix overflow");
  for (int tok : prefix) {
    if (!model_->vocab().is_valid(tok)) {
      throw NumericalError("position_logits: unknown token id");
    }
  }
  ad::Tensor f = tape_->add(tape_->row(pos_, std::min(p, d.ctx - 1)), scene_vec);
  if (p > 0) {
    ad::Tensor prev = tape_->row(emb_, prefix[static_cast<size_t>(p - 1)]);
    ad::Tensor bag = tape_->row(emb_, prefix[0]);
    for (int i = 1; i < p; ++i) {
      bag = tape_->add(bag, tape_->row(emb_, prefix[static_cast<size_t>(i)]));
    }
    bag = tape_->scale(bag, 1.0 / static_cast<double>(p));
    f = tape_->add(f, tape_->add(prev, bag));
  }
  return gated_logits(*tape_, f, w1_, b1_, wg_, bg_, w_out_, b_out_);
}

ad::Tensor BoundModel::span_nll(std::span<const double> scene_enc,
                                std::span<const int> context,
                                std::span<const int> target) const {
  const auto& d = model_->dims();
  if (target.empty()) throw NumericalError("span_nll: empty target");
  const int c = static_cast<int>(context.size());
  const int t = static_cast<int>(target.size());
  if (c + t > d.ctx) throw NumericalError("span_nll: sequence exceeds context length");

  std::vector<int> full(context.begin(), context.end());
  full.insert(full.end(), target.begin(), target.end());
  for (int tok : full) {
    if (!model_->vocab().is_valid(tok)) throw NumericalError("span_nll: unknown token id");
  }

  ad::Tensor s = scene_vector(scene_enc);

  // One sweep over positions; a running embedding sum supplies the causal
  // bag context in O(length) graph nodes.
  ad::Tensor emb_sum;
  std::vector<ad::Tensor> ces;
  ces.reserve(static_cast<size_t>(t));
  for (int p = 0; p < c + t; ++p) {
    if (p >= c) {
      ad::Tensor f = tape_->add(tape_->row(pos_, p), s);
      if (p > 0) {
        ad::Tensor prev = tape_->row(emb_, full[static_cast<size_t>(p - 1)]);
        ad::Tensor bag = tape_->scale(emb_sum, 1.0 / static_cast<double>(p));
        f = tape_->add(f, tape_->add(prev, bag));
      }
      ad::Tensor logits = gated_logits(*tape_, f, w1_, b1_, wg_, bg_, w_out_, b_out_);
      ces.push_back(tape_->cross_entropy(logits, full[static_cast<size_t>(p)]));
    }
    ad::Tensor e_p = tape_->row(emb_, full[static_cast<size_t>(p)]);
    emb_sum = (p == 0) ? e_p : tape_->add(emb_sum, e_p);
  }
  return tape_->mean(tape_->concat(ces));
}

ad::ParamVector BoundModel::trainable_grad() const {
  ad::ParamVector out;
  for (const ad::Tensor& t : trainable_leaves_) {
    const auto& g = t.grad();
    out.insert(out.end(), g.begin(), g.end());
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<double> CaptionModel::next_token_logits(std::span<const double> scene_enc,
                                                    std::span<const int> prefix) const {
  ad::Tape tape;
  BoundModel bm = bind(tape, TrainScope::None);
  ad::Tensor s = bm.scene_vector(scene_enc);
  return bm.position_logits(s, prefix).value();
}

double CaptionModel::sequence_nll(std::span<const double> scene_enc,
                                  std::span<const int> context,
                                  std::span<const int> target) const {
  ad::Tape tape;
  BoundModel bm = bind(tape, TrainScope::None);
  return bm.span_nll(scene_enc, context, target).scalar();
}

std::vector<int> CaptionModel::decode_greedy(std::span<const double> scene_enc,
                                             std::span<const int> prompt,
                                             int max_len) const {
  if (static_cast<int>(prompt.size()) + max_len > dims_.ctx) {
    throw NumericalError("decode_greedy: prompt + max_len exceeds context length");
  }
  std::vector<int> seq(prompt.begin(), prompt.end());
  std::vector<int> out;
  ad::Tape tape;
  for (int step = 0; step < max_len; ++step) {
    tape.reset();
    BoundModel bm = bind(tape, TrainScope::None);
    ad::Tensor s = bm.scene_vector(scene_enc);
    const auto logits = bm.position_logits(s, seq).value();
    const int tok = static_cast<int>(
        std::max_element(logits.begin(), logits.end()) - logits.begin());
    seq.push_back(tok);
    out.push_back(tok);
    if (tok == vocab_.eos()) break;
  }
  return out;
}

std::vector<int> CaptionModel::decode_sample(std::span<const double> scene_enc,
                                             std::span<const int> prompt, int max_len,
                                             double temperature, uint64_t seed) const {
  if (temperature <= 0.0) throw ConfigError("decode_sample: temperature must be > 0");
  if (static_cast<int>(prompt.size()) + max_len > dims_.ctx) {
    throw NumericalError("decode_sample: prompt + max_len exceeds context length");
  }
  Rng rng(seed);
  std::vector<int> seq(prompt.begin(), prompt.end());
  std::vector<int> out;
  ad::Tape tape;
  std::vector<double> probs(static_cast<size_t>(dims_.vocab_size()));
  for (int step = 0; step < max_len; ++step) {
    tape.reset();
    BoundModel bm = bind(tape, TrainScope::None);
    ad::Tensor s = bm.scene_vector(scene_enc);
    const auto logits = bm.position_logits(s, seq).value();
    const double mx = *std::max_element(logits.begin(), logits.end());
    for (size_t i = 0; i < logits.size(); ++i) {
      probs[i] = std::exp((logits[i] - mx) / temperature);
    }
    int tok = rng.categorical(probs);
    if (tok < 0) {  // underflow at extreme temperatures: fall back to argmax
      tok = static_cast<int>(std::max_element(logits.begin(), logits.end()) -
                             logits.begin());
    }
    seq.push_back(tok);
    out.push_back(tok);
    if (tok == vocab_.eos()) break;
  }
  return out;
}

// ---------------------------------------------------------------------------

void CaptionModel::attach_lora(int rank, double alpha, uint64_t seed) {
  if (adapter) throw ConfigError("attach_lora: adapter already attached");
  const int h = dims_.hidden;
  if (rank < 1 || rank > h) throw ConfigError("attach_lora: rank out of range");
  Rng rng(seed);
  LoraAdapter ada;
  ada.rank = rank;
  ada.alpha = alpha;
  auto add_target = [&](const ParamArray& base) {
    const int out_dim = base.shape[0];
    const int in_dim = base.shape[1];
    LoraFactors f;
    f.target = base.name;
    f.down = make_array("lora_" + base.name + "_down", Partition::Adapter,
                        {rank, in_dim}, rng, 1.0 / std::sqrt(static_cast<double>(in_dim)));
    f.up = make_array("lora_" + base.name + "_up", Partition::Adapter,
                      {out_dim, rank}, rng, 0.0);
    ada.mats.push_back(std::move(f));
  };
  add_target(w1);
  add_target(wg);
  add_target(w_out);
  adapter = std::move(ada);
}

void CaptionModel::merge_lora() {
  if (!adapter) throw ConfigError("merge_lora: no adapter attached");
  const double s = adapter->alpha / static_cast<double>(adapter->rank);
  auto target_of = [&](const std::string& name) -> ParamArray& {
    if (name == "w1") return w1;
    if (name == "wg") return wg;
    if (name == "w_out") return w_out;
    throw ConfigError("merge_lora: unknown target " + name);
  };
  for (const LoraFactors& f : adapter->mats) {
    ParamArray& base = target_of(f.target);
    const int out_dim = base.shape[0];
    const int in_dim = base.shape[1];
    const int r = adapter->rank;
    for (int i = 0; i < out_dim; ++i) {
      for (int j = 0; j < in_dim; ++j) {
        double acc = 0.0;
        for (int k = 0; k < r; ++k) {
          acc += f.up.value[static_cast<size_t>(i) * r + k] *
                 f.down.value[static_cast<size_t>(k) * in_dim + j];
        }
        base.value[static_cast<size_t>(i) * in_dim + j] += s * acc;
      }
    }
  }
  adapter.reset();
}

// ---------------------------------------------------------------------------
// Checkpoint format v1: little-endian binary, doubles dumped raw so a
// save/load round trip is bit-exact.

namespace {

constexpr char kMagic[8] = {'S', 'A', 'R', 'E', 'C', 'K', 'P', '1'};

template <class T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw MissingArtifactError("checkpoint: truncated file");
  return v;
}

void write_string(std::ofstream& out, const std::string& s) {
  write_pod<uint32_t>(out, static_cast<uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::ifstream& in) {
  const auto n = read_pod<uint32_t>(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw MissingArtifactError("checkpoint: truncated string");
  return s;
}

void write_array(std::ofstream& out, const ParamArray& a) {
  write_string(out, a.name);
  write_pod<uint8_t>(out, static_cast<uint8_t>(a.partition));
  write_pod<uint32_t>(out, static_cast<uint32_t>(a.shape.size()));
  for (int d : a.shape) write_pod<int32_t>(out, d);
  out.write(reinterpret_cast<const char*>(a.value.data()),
            static_cast<std::streamsize>(a.value.size() * sizeof(double)));
}

ParamArray read_array(std::ifstream& in) {
  ParamArray a;
  a.name = read_string(in);
  a.partition = static_cast<Partition>(read_pod<uint8_t>(in));
  const auto ndim = read_pod<uint32_t>(in);
  a.shape.resize(ndim);
  for (auto& d : a.shape) d = read_pod<int32_t>(in);
  a.value.resize(static_cast<size_t>(ad::numel(a.shape)));
  in.read(reinterpret_cast<char*>(a.value.data()),
          static_cast<std::streamsize>(a.value.size() * sizeof(double)));
  if (!in) throw MissingArtifactError("checkpoint: truncated array data");
  return a;
}

}  // namespace

void save_checkpoint(const CaptionModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MissingArtifactError("save_checkpoint: cannot open " + path);
  out.write(kMagic, sizeof(kMagic));
  write_pod<uint32_t>(out, 1);
  const auto& d = model.dims();
  write_pod<int32_t>(out, d.n_objects);
  write_pod<int32_t>(out, d.enc_dim);
  write_pod<int32_t>(out, d.hidden);
  write_pod<int32_t>(out, d.ctx);

  const std::vector<const ParamArray*> base = {
      &model.enc_proj, &model.map_w, &model.map_b, &model.emb,   &model.pos, &model.w1,
      &model.b1,       &model.wg,    &model.bg,    &model.w_out, &model.b_out};
  write_pod<uint32_t>(out, static_cast<uint32_t>(base.size()));
  for (const auto* a : base) write_array(out, *a);

  write_pod<uint8_t>(out, model.adapter ? 1 : 0);
  if (model.adapter) {
    write_pod<int32_t>(out, model.adapter->rank);
    write_pod<double>(out, model.adapter->alpha);
    write_pod<uint32_t>(out, static_cast<uint32_t>(model.adapter->mats.size()));
    for (const auto& f : model.adapter->mats) {
      write_string(out, f.target);
      write_array(out, f.down);
      write_array(out, f.up);
    }
  }
  if (!out) throw MissingArtifactError("save_checkpoint: write failed for " + path);
}

CaptionModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("load_checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw MissingArtifactError("load_checkpoint: bad magic in " + path);
  }
  const auto version = read_pod<uint32_t>(in);
  if (version != 1) throw MissingArtifactError("load_checkpoint: unsupported version");
  ModelDims d;
  d.n_objects = read_pod<int32_t>(in);
  d.enc_dim = read_pod<int32_t>(in);
  d.hidden = read_pod<int32_t>(in);
  d.ctx = read_pod<int32_t>(in);

  CaptionModel m = CaptionModel::init(d, 0);
  const auto n_arrays = read_pod<uint32_t>(in);
  auto arrays = m.all_arrays();
  if (n_arrays != arrays.size()) {
    throw MissingArtifactError("load_checkpoint: unexpected array count");
  }
  for (auto* slot : arrays) {
    ParamArray a = read_array(in);
    if (a.name != slot->name || a.shape != slot->shape) {
      throw MissingArtifactError("load_checkpoint: array mismatch for " + a.name);
    }
    *slot = std::move(a);
  }

  const auto has_adapter = read_pod<uint8_t>(in);
  if (has_adapter) {
    LoraAdapter ada;
    ada.rank = read_pod<int32_t>(in);
    ada.alpha = read_pod<double>(in);
    const auto n_mats = read_pod<uint32_t>(in);
    for (uint32_t i = 0; i < n_mats; ++i) {
      LoraFactors f;
      f.target = read_string(in);
      f.down = read_array(in);
      f.up = read_array(in);
      ada.mats.push_back(std::move(f));
    }
    m.adapter = std::move(ada);
  }
  return m;
}

}  // namespace sare::toy
