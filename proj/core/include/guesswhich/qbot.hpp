#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "guesswhich/checkpoint.hpp"
#include "guesswhich/graph.hpp"
#include "guesswhich/param_store.hpp"
#include "guesswhich/rng.hpp"
#include "guesswhich/vocabulary.hpp"
#include "guesswhich/world.hpp"

namespace gw {

struct QBotConfig {
  std::size_t embed_dim = 32;
  std::size_t qa_hidden = 64;
  std::size_t state_dim = 64;  // must equal the world's feature dim
  std::size_t decoder_hidden = 64;
  std::size_t max_question_length = 8;
  std::size_t top_k = 10;
  std::size_t rounds = 5;
  bool learnable_guesser = false;

  /// Throws std::invalid_argument when the config cannot work with a world
  /// of the given feature dim.
  void validate(std::size_t feature_dim) const;
};

nlohmann::json to_json(const QBotConfig& c);
QBotConfig qbot_config_from_json(const nlohmann::json& j);

/// One question/answer exchange as token ids.
struct TokenRound {
  std::vector<TokenId> question;
  std::vector<TokenId> answer;
};

/// The agent's evolving context. `s()` is the state vector compared against
/// image features.
struct DialogState {
  Tensor h;
  Tensor c;
  std::vector<TokenRound> transcript;
  std::vector<std::size_t> guesses;

  const Tensor& s() const { return h; }
  std::size_t round() const { return transcript.size(); }
};

/// Image features addressed by image id; rows follow `ids` order.
struct Database {
  std::vector<std::size_t> ids;
  Tensor features;  // [m, feature_dim]

  static Database from_images(std::span<const SynthImage> images);
  static Database from_ids(const World& world, const std::vector<std::size_t>& ids);
  std::size_t size() const { return ids.size(); }
  std::size_t position(std::size_t image_id) const;  // throws if absent
  Tensor feature(std::size_t position) const;
};

enum class DecodeMode { greedy, sample };

struct DecodedQuestion {
  std::vector<TokenId> tokens;  // always ends with <end>
  double log_prob = 0.0;        // over emitted tokens only
};

struct TopK {
  std::vector<std::size_t> positions;  // database rows, nearest first
  std::vector<std::size_t> ids;
  std::vector<double> distances;
  std::vector<double> probs;
};

class QBot;

/// Graph-side view of the agent: parameters bound once into a Graph, plus
/// the building blocks training composes into per-round losses.
class QBotGraph {
 public:
  struct State {
    Var h;
    Var c;
  };
  struct DecoderState {
    LstmState layer1;
    LstmState layer2;
  };
  enum class Train { all, encoder_and_guesser, encoder_and_decoder, none };

  QBotGraph(Graph& graph, QBot& bot, Train trainable);
  QBotGraph(Graph& graph, const QBot& bot);

  Graph& graph() { return graph_; }

  State zero_state();
  State from_dialog_state(const DialogState& s);
  Var encode_tokens(const std::vector<TokenId>& tokens);
  State init_state(const std::vector<TokenId>& caption);
  State encode_round(State prev, const std::vector<TokenId>& question, const std::vector<TokenId>& answer,
                     const Tensor& guessed_feature);

  DecoderState decoder_init(Var s);
  /// Feeds `token` and returns the next-token distribution.
  Var decoder_step(DecoderState& state, TokenId token);
  /// Teacher-forced sum of -log p over `tokens`.
  Var question_nll(Var s, const std::vector<TokenId>& tokens);

  /// Guesser-embedded rows for the given features.
  Var guesser_rows(const std::vector<Tensor>& features);
  /// -log pi(target | s) over candidate rows, pi = softmax(-d).
  Var policy_nll(Var s, Var rows, std::size_t target);

 private:
  void bind(const ParamStore& store, ParamStore* mutable_store, Train trainable);
  Var bind_one(const ParamStore& store, ParamStore* mutable_store, const std::string& name, bool train);

  Graph& graph_;
  const QBot& bot_;
  Var enc_embed_;
  LstmWeights qa_;
  Var img_w_, img_b_, fuse_w_, fuse_b_;
  LstmWeights hist_;
  Var dec_embed_;
  LstmWeights dec1_, dec2_;
  Var out_w_, out_b_;
  Var guess_w_, guess_b_;
};

/// Question-asking retrieval agent: response encoder, two-layer question
/// decoder and distance-based image guesser.
class QBot {
 public:
  QBot(QBotConfig config, Vocabulary vocabulary, std::size_t feature_dim, Rng& init_rng);
  static QBot from_checkpoint(const Checkpoint& checkpoint);
  Checkpoint to_checkpoint() const;

  const QBotConfig& config() const { return config_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  std::size_t feature_dim() const { return feature_dim_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  DialogState init_state(const std::vector<std::string>& caption) const;
  DialogState init_state_ids(const std::vector<TokenId>& caption) const;
  DialogState encode_round(const DialogState& state, const std::vector<TokenId>& question,
                           const std::vector<TokenId>& answer, const Tensor& guessed_feature,
                           std::size_t guessed_id) const;
  DecodedQuestion decode_question(const DialogState& state, DecodeMode mode, Rng& rng) const;
  /// Teacher-forced log-probability; `tokens` must end with <end>.
  double score_question(const DialogState& state, const std::vector<TokenId>& tokens) const;

  /// Squared euclidean distance from each guesser-embedded feature to s.
  std::vector<double> distances(const Tensor& s, const Database& db) const;
  /// Database position of the nearest image (ties to the lowest image id).
  std::size_t guess(const Tensor& s, const Database& db) const;
  TopK policy_topk(const Tensor& s, const Database& db, std::size_t k) const;
  double rank_percentile(const Tensor& s, const Database& db, std::size_t target_id) const;

 private:
  friend class QBotGraph;
  QBot() = default;

  QBotConfig config_;
  Vocabulary vocab_;
  std::size_t feature_dim_ = 0;
  ParamStore params_;
};

/// Helpers over a precomputed distance vector; shared by QBot and tests.
std::size_t argmin_lowest_id(std::span<const double> d, std::span<const std::size_t> ids);
std::vector<std::size_t> topk_positions(std::span<const double> d, std::span<const std::size_t> ids,
                                        std::size_t k);
double percentile_from_distances(std::span<const double> d, std::size_t target_position);
std::vector<double> softmax_neg(std::span<const double> d);

}  // namespace gw
