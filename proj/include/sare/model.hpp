#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sare/autodiff.hpp"
#include "sare/rng.hpp"
#include "sare/vocab.hpp"

namespace sare::toy {

enum class Partition : uint8_t { Encoder = 0, Mapping = 1, Decoder = 2, Adapter = 3 };

// Which partitions receive gradients in a bound forward graph.
enum class TrainScope : uint8_t { None, MappingOnly, MappingAndDecoder, AdapterOnly };

struct ParamArray {
  std::string name;
  Partition partition = Partition::Decoder;
  ad::Shape shape;
  std::vector<double> value;

  int64_t size() const { return static_cast<int64_t>(value.size()); }
};

struct ModelDims {
  int n_objects = 24;
  int enc_dim = 64;
  int hidden = 32;
  int ctx = 24;

  int vocab_size() const { return n_objects + Vocab::kNumFunctionTokens; }
  bool operator==(const ModelDims&) const = default;
};

// Low-rank factors for one decoder matrix: effective = base + (alpha/r) up*down,
// down: (r, in), up: (out, r). Freshly attached adapters have up == 0, so they
// change no output until trained.
struct LoraFactors {
  std::string target;  // name of the adapted ParamArray
  ParamArray down;
  ParamArray up;
};

struct LoraAdapter {
  int rank = 0;
  double alpha = 1.0;
  std::vector<LoraFactors> mats;
};

class BoundModel;

// Conditional captioner: frozen random scene encoder, trainable mapping layer
// (one affine + tanh), frozen gated-MLP decoder over token embeddings plus the
// mapped scene vector. The partition is explicit so unlearning can touch the
// mapping layer only.
class CaptionModel {
 public:
  static CaptionModel init(ModelDims dims, uint64_t seed, double init_std = 0.08);

  const ModelDims& dims() const { return dims_; }
  const Vocab& vocab() const { return vocab_; }

  // encoder
  ParamArray enc_proj;  // (enc_dim, n_objects), frozen
  // mapping layer (theta_phi)
  ParamArray map_w;  // (hidden, enc_dim)
  ParamArray map_b;  // (hidden,)
  // decoder
  ParamArray emb;     // (vocab, hidden)
  ParamArray pos;     // (ctx, hidden)
  ParamArray w1, b1;  // gate candidate
  ParamArray wg, bg;  // gate
  ParamArray w_out, b_out;  // (vocab, hidden), (vocab,)

  std::optional<LoraAdapter> adapter;

  // Deterministic ordering of the trainable set for a given scope; defines the
  // flatten/unflatten layout and the optimizer's parameter vector.
  std::vector<ParamArray*> trainable_arrays(TrainScope scope);
  std::vector<const ParamArray*> trainable_arrays(TrainScope scope) const;
  std::vector<const ParamArray*> all_arrays() const;
  std::vector<ParamArray*> all_arrays();

  ad::ParamVector flatten_trainable(TrainScope scope) const;
  void load_trainable(const ad::ParamVector& v, TrainScope scope);

  // Graph construction. The bound view shares one set of leaves across every
  // loss built on the same tape.
  BoundModel bind(ad::Tape& tape, TrainScope scope) const;

  // Convenience value-only entry points (fresh local tape each call).
  std::vector<double> next_token_logits(std::span<const double> scene_enc,
                                        std::span<const int> prefix) const;
  double sequence_nll(std::span<const double> scene_enc,
                      std::span<const int> context,
                      std::span<const int> target) const;
  std::vector<int> decode_greedy(std::span<const double> scene_enc,
                                 std::span<const int> prompt, int max_len) const;
  std::vector<int> decode_sample(std::span<const double> scene_enc,
                                 std::span<const int> prompt, int max_len,
                                 double temperature, uint64_t seed) const;

  // LoRA lifecycle.
  void attach_lora(int rank, double alpha, uint64_t seed);
  void merge_lora();
  void drop_lora() { adapter.reset(); }

 private:
  explicit CaptionModel(ModelDims dims) : dims_(dims), vocab_(dims.n_objects) {}
  ModelDims dims_;
  Vocab vocab_;
};

// Tape-bound view of the model: parameter leaves plus graph builders.
class BoundModel {
 public:
  BoundModel(const CaptionModel& model, ad::Tape& tape, TrainScope scope);

  // tanh(map_w (enc_proj s) + map_b); the only path scene information takes.
  ad::Tensor scene_vector(std::span<const double> scene_enc) const;

  // Logits for the token at position |prefix| of the full sequence.
  ad::Tensor position_logits(ad::Tensor scene_vec, std::span<const int> prefix) const;

  // Mean per-token NLL of `target` given `context` (teacher forcing). The
  // full sequence is context ++ target; only target positions are scored.
  ad::Tensor span_nll(std::span<const double> scene_enc,
                      std::span<const int> context,
                      std::span<const int> target) const;

  // Gradient of the trainable set in flatten order. Call after backward().
  ad::ParamVector trainable_grad() const;

  ad::Tape& tape() const { return *tape_; }

 private:
  const CaptionModel* model_;
  ad::Tape* tape_;
  TrainScope scope_;

  ad::Tensor enc_proj_, map_w_, map_b_;
  ad::Tensor emb_, pos_;
  ad::Tensor w1_, b1_, wg_, bg_, w_out_, b_out_;
  std::vector<ad::Tensor> trainable_leaves_;
};

// Checkpoint io: versioned binary dump of all weight arrays with partition
// labels and the architecture descriptor; round-trip is bit-exact.
void save_checkpoint(const CaptionModel& model, const std::string& path);
CaptionModel load_checkpoint(const std::string& path);

}  // namespace sare::toy
