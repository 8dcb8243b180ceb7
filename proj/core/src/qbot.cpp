#include "guesswhich/qbot.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace gw {

void QBotConfig::validate(std::size_t feature_dim) const {
  if (embed_dim == 0 || qa_hidden == 0 || state_dim == 0 || decoder_hidden == 0) {
    throw std::invalid_argument("qbot dimensions must be positive");
  }
  if (state_dim != feature_dim) {
    throw std::invalid_argument("qbot state_dim " + std::to_string(state_dim) +
                                " must equal world feature_dim " + std::to_string(feature_dim));
  }
  if (decoder_hidden != state_dim) {
    throw std::invalid_argument("decoder_hidden must equal state_dim (decoder starts from s_t)");
  }
  if (max_question_length == 0) throw std::invalid_argument("max_question_length must be positive");
  if (top_k == 0) throw std::invalid_argument("top_k must be positive");
  if (rounds == 0) throw std::invalid_argument("rounds must be positive");
}

nlohmann::json to_json(const QBotConfig& c) {
  return {{"embed_dim", c.embed_dim},         {"qa_hidden", c.qa_hidden},
          {"state_dim", c.state_dim},         {"decoder_hidden", c.decoder_hidden},
          {"max_question_length", c.max_question_length},
          {"top_k", c.top_k},                 {"rounds", c.rounds},
          {"learnable_guesser", c.learnable_guesser}};
}

QBotConfig qbot_config_from_json(const nlohmann::json& j) {
  QBotConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "embed_dim") c.embed_dim = value.get<std::size_t>();
    else if (key == "qa_hidden") c.qa_hidden = value.get<std::size_t>();
    else if (key == "state_dim") c.state_dim = value.get<std::size_t>();
    else if (key == "decoder_hidden") c.decoder_hidden = value.get<std::size_t>();
    else if (key == "max_question_length") c.max_question_length = value.get<std::size_t>();
    else if (key == "top_k") c.top_k = value.get<std::size_t>();
    else if (key == "rounds") c.rounds = value.get<std::size_t>();
    else if (key == "learnable_guesser") c.learnable_guesser = value.get<bool>();
    else throw std::invalid_argument("unknown qbot config key '" + key + "'");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Database and ranking helpers

Database Database::from_images(std::span<const SynthImage> images) {
  Database db;
  if (images.empty()) return db;
  const std::size_t dim = images.front().feature.size();
  std::vector<double> data;
  data.reserve(images.size() * dim);
  for (const auto& img : images) {
    db.ids.push_back(img.id);
    data.insert(data.end(), img.feature.raw().begin(), img.feature.raw().end());
  }
  db.features = Tensor::matrix(images.size(), dim, std::move(data));
  return db;
}

Database Database::from_ids(const World& world, const std::vector<std::size_t>& ids) {
  std::vector<SynthImage> imgs;
  imgs.reserve(ids.size());
  for (auto id : ids) imgs.push_back(world.image(id));
  return from_images(imgs);
}

std::size_t Database::position(std::size_t image_id) const {
  auto it = std::find(ids.begin(), ids.end(), image_id);
  if (it == ids.end()) throw std::out_of_range("image " + std::to_string(image_id) + " not in database");
  return static_cast<std::size_t>(it - ids.begin());
}

Tensor Database::feature(std::size_t pos) const {
  auto r = features.row(pos);
  return Tensor::vector(std::vector<double>(r.begin(), r.end()));
}

std::size_t argmin_lowest_id(std::span<const double> d, std::span<const std::size_t> ids) {
  if (d.empty()) throw std::invalid_argument("guess over an empty database");
  std::size_t best = 0;
  for (std::size_t k = 1; k < d.size(); ++k) {
    if (d[k] < d[best] || (d[k] == d[best] && ids[k] < ids[best])) best = k;
  }
  return best;
}

std::vector<std::size_t> topk_positions(std::span<const double> d, std::span<const std::size_t> ids,
                                        std::size_t k) {
  if (k == 0) throw std::invalid_argument("top-K needs K >= 1");
  if (k > d.size()) throw std::invalid_argument("top-K larger than database");
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  auto less = [&](std::size_t a, std::size_t b) { return d[a] < d[b] || (d[a] == d[b] && ids[a] < ids[b]); };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), less);
  order.resize(k);
  return order;
}

double percentile_from_distances(std::span<const double> d, std::size_t target_position) {
  if (target_position >= d.size()) throw std::out_of_range("target outside database");
  if (d.size() == 1) return 1.0;
  const double dt = d[target_position];
  std::size_t farther = 0;
  for (double v : d) farther += v > dt ? 1 : 0;
  return static_cast<double>(farther) / static_cast<double>(d.size() - 1);
}

std::vector<double> softmax_neg(std::span<const double> d) {
  if (d.empty()) return {};
  const double lo = *std::min_element(d.begin(), d.end());
  std::vector<double> p(d.size());
  double total = 0.0;
  for (std::size_t k = 0; k < d.size(); ++k) {
    p[k] = std::exp(-(d[k] - lo));
    total += p[k];
  }
  for (auto& v : p) v /= total;
  return p;
}

// ---------------------------------------------------------------------------
// QBot

namespace {

void add_lstm(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t hidden,
              Partition part, Rng& rng) {
  store.add_uniform(prefix + ".wx", {4 * hidden, in}, in, part, rng);
  store.add_uniform(prefix + ".wh", {4 * hidden, hidden}, hidden, part, rng);
  const ParamId b = store.add_uniform(prefix + ".b", {4 * hidden}, hidden, part, rng);
  Tensor& bias = store.value(b);
  for (std::size_t k = hidden; k < 2 * hidden; ++k) bias[k] = 1.0;  // forget gate
}

}  // namespace

QBot::QBot(QBotConfig config, Vocabulary vocabulary, std::size_t feature_dim, Rng& rng)
    : config_(config), vocab_(std::move(vocabulary)), feature_dim_(feature_dim) {
  config_.validate(feature_dim);
  const std::size_t v = vocab_.size();
  const std::size_t e = config_.embed_dim;
  const std::size_t q = config_.qa_hidden;
  const std::size_t s = config_.state_dim;
  const std::size_t d = config_.decoder_hidden;
  const std::size_t f = feature_dim;
  auto enc = Partition::encoder;
  auto dec = Partition::decoder;

  params_.add_uniform("enc.embed", {v, e}, e, enc, rng);
  add_lstm(params_, "enc.qa", e, q, enc, rng);
  params_.add_uniform("enc.img.w", {s, f}, f, enc, rng);
  params_.add_uniform("enc.img.b", {s}, f, enc, rng);
  params_.add_uniform("enc.fuse.w", {s, q + s}, q + s, enc, rng);
  params_.add_uniform("enc.fuse.b", {s}, q + s, enc, rng);
  add_lstm(params_, "enc.hist", s, s, enc, rng);

  params_.add_uniform("dec.embed", {v, e}, e, dec, rng);
  add_lstm(params_, "dec.l1", e, d, dec, rng);
  add_lstm(params_, "dec.l2", d, d, dec, rng);
  params_.add_uniform("dec.out.w", {v, d}, d, dec, rng);
  params_.add_uniform("dec.out.b", {v}, d, dec, rng);

  if (config_.learnable_guesser) {
    Tensor eye({f, f});
    for (std::size_t k = 0; k < f; ++k) eye.at(k, k) = 1.0;
    params_.add("guess.w", std::move(eye), Partition::guesser);
    params_.add("guess.b", Tensor({f}), Partition::guesser);
  }
}

QBot QBot::from_checkpoint(const Checkpoint& ck) {
  QBot bot;
  if (!ck.config.contains("qbot")) throw CheckpointError("checkpoint has no qbot config");
  bot.config_ = qbot_config_from_json(ck.config.at("qbot"));
  bot.vocab_ = Vocabulary(ck.vocabulary);
  bot.feature_dim_ = ck.meta.value("feature_dim", bot.config_.state_dim);
  bot.config_.validate(bot.feature_dim_);
  // shape check against a freshly built reference
  Rng scratch(0);
  QBot reference(bot.config_, bot.vocab_, bot.feature_dim_, scratch);
  if (reference.params_.size() != ck.params.size()) throw CheckpointError("checkpoint parameter set mismatch");
  for (ParamId id : reference.params_.ids()) {
    const auto& name = reference.params_.name(id);
    if (!ck.params.contains(name)) throw CheckpointError("checkpoint lacks parameter '" + name + "'");
    const ParamId other = ck.params.id(name);
    if (ck.params.value(other).shape() != reference.params_.value(id).shape() ||
        ck.params.partition(other) != reference.params_.partition(id)) {
      throw CheckpointError("parameter '" + name + "' has the wrong shape or partition");
    }
  }
  bot.params_ = ck.params;
  bot.params_.zero_grad();
  return bot;
}

Checkpoint QBot::to_checkpoint() const {
  Checkpoint ck;
  ck.vocabulary = vocab_.tokens();
  ck.params = params_;
  ck.params.zero_grad();
  ck.config["qbot"] = to_json(config_);
  ck.meta["feature_dim"] = feature_dim_;
  return ck;
}

DialogState QBot::init_state(const std::vector<std::string>& caption) const {
  return init_state_ids(vocab_.encode(caption));
}

DialogState QBot::init_state_ids(const std::vector<TokenId>& caption) const {
  Graph g(false);
  QBotGraph qg(g, *this);
  auto st = qg.init_state(caption);
  DialogState out;
  out.h = g.value(st.h);
  out.c = g.value(st.c);
  return out;
}

DialogState QBot::encode_round(const DialogState& state, const std::vector<TokenId>& question,
                               const std::vector<TokenId>& answer, const Tensor& guessed_feature,
                               std::size_t guessed_id) const {
  Graph g(false);
  QBotGraph qg(g, *this);
  auto st = qg.encode_round(qg.from_dialog_state(state), question, answer, guessed_feature);
  DialogState out;
  out.h = g.value(st.h);
  out.c = g.value(st.c);
  out.transcript = state.transcript;
  out.transcript.push_back({question, answer});
  out.guesses = state.guesses;
  out.guesses.push_back(guessed_id);
  return out;
}

DecodedQuestion QBot::decode_question(const DialogState& state, DecodeMode mode, Rng& rng) const {
  Graph g(false);
  QBotGraph qg(g, *this);
  auto dec = qg.decoder_init(g.constant(state.h));
  DecodedQuestion out;
  TokenId prev = Vocabulary::start;
  for (std::size_t step = 0; step < config_.max_question_length; ++step) {
    const Var probs = qg.decoder_step(dec, prev);
    const Tensor& p = g.value(probs);
    TokenId next = 0;
    if (mode == DecodeMode::greedy) {
      next = static_cast<TokenId>(std::max_element(p.raw().begin(), p.raw().end()) - p.raw().begin());
    } else {
      next = rng.categorical(p.values());
    }
    out.log_prob -= g.scalar(g.cross_entropy(probs, next));
    out.tokens.push_back(next);
    if (next == Vocabulary::end) return out;
    prev = next;
  }
  out.tokens.push_back(Vocabulary::end);
  return out;
}

double QBot::score_question(const DialogState& state, const std::vector<TokenId>& tokens) const {
  if (tokens.empty()) throw std::invalid_argument("score_question on an empty sequence");
  if (tokens.back() != Vocabulary::end) throw std::invalid_argument("question must end with <end>");
  Graph g(false);
  QBotGraph qg(g, *this);
  return -g.scalar(qg.question_nll(g.constant(state.h), tokens));
}

std::vector<double> QBot::distances(const Tensor& s, const Database& db) const {
  if (db.size() == 0) throw std::invalid_argument("distances over an empty database");
  if (s.size() != db.features.cols()) throw ShapeError("state dim does not match feature dim");
  const std::size_t dim = s.size();
  std::vector<double> d(db.size());
  if (!config_.learnable_guesser) {
    const double* f = db.features.raw().data();
    for (std::size_t k = 0; k < db.size(); ++k) {
      double acc = 0.0;
      const double* row = f + k * dim;
      for (std::size_t j = 0; j < dim; ++j) {
        const double diff = row[j] - s[j];
        acc += diff * diff;
      }
      d[k] = acc;
    }
    return d;
  }
  const Tensor& w = params_.value(params_.id("guess.w"));
  const Tensor& b = params_.value(params_.id("guess.b"));
  std::vector<double> g(dim);
  for (std::size_t k = 0; k < db.size(); ++k) {
    auto z = db.features.row(k);
    double acc = 0.0;
    for (std::size_t r = 0; r < dim; ++r) {
      double v = b[r];
      for (std::size_t c = 0; c < dim; ++c) v += w.at(r, c) * z[c];
      const double diff = v - s[r];
      acc += diff * diff;
    }
    d[k] = acc;
  }
  return d;
}

std::size_t QBot::guess(const Tensor& s, const Database& db) const {
  const auto d = distances(s, db);
  return argmin_lowest_id(d, db.ids);
}

TopK QBot::policy_topk(const Tensor& s, const Database& db, std::size_t k) const {
  const auto d = distances(s, db);
  TopK out;
  out.positions = topk_positions(d, db.ids, k);
  for (auto p : out.positions) {
    out.ids.push_back(db.ids[p]);
    out.distances.push_back(d[p]);
  }
  out.probs = softmax_neg(out.distances);
  return out;
}

double QBot::rank_percentile(const Tensor& s, const Database& db, std::size_t target_id) const {
  const std::size_t pos = db.position(target_id);
  return percentile_from_distances(distances(s, db), pos);
}

// ---------------------------------------------------------------------------
// QBotGraph

QBotGraph::QBotGraph(Graph& graph, QBot& bot, Train trainable) : graph_(graph), bot_(bot) {
  bind(bot.params_, &bot.params_, trainable);
}

QBotGraph::QBotGraph(Graph& graph, const QBot& bot) : graph_(graph), bot_(bot) {
  bind(bot.params_, nullptr, Train::none);
}

Var QBotGraph::bind_one(const ParamStore& store, ParamStore* mutable_store, const std::string& name,
                        bool train) {
  const ParamId id = store.id(name);
  if (train && mutable_store && graph_.records_gradients()) return graph_.param(*mutable_store, id);
  return graph_.frozen_param(store, id);
}

void QBotGraph::bind(const ParamStore& store, ParamStore* ms, Train trainable) {
  const bool enc = trainable == Train::all || trainable == Train::encoder_and_guesser ||
                   trainable == Train::encoder_and_decoder;
  const bool dec = trainable == Train::all || trainable == Train::encoder_and_decoder;
  const bool gue = trainable == Train::all || trainable == Train::encoder_and_guesser;
  auto lstm = [&](const std::string& p, bool t) {
    return LstmWeights{bind_one(store, ms, p + ".wx", t), bind_one(store, ms, p + ".wh", t),
                       bind_one(store, ms, p + ".b", t)};
  };
  enc_embed_ = bind_one(store, ms, "enc.embed", enc);
  qa_ = lstm("enc.qa", enc);
  img_w_ = bind_one(store, ms, "enc.img.w", enc);
  img_b_ = bind_one(store, ms, "enc.img.b", enc);
  fuse_w_ = bind_one(store, ms, "enc.fuse.w", enc);
  fuse_b_ = bind_one(store, ms, "enc.fuse.b", enc);
  hist_ = lstm("enc.hist", enc);
  dec_embed_ = bind_one(store, ms, "dec.embed", dec);
  dec1_ = lstm("dec.l1", dec);
  dec2_ = lstm("dec.l2", dec);
  out_w_ = bind_one(store, ms, "dec.out.w", dec);
  out_b_ = bind_one(store, ms, "dec.out.b", dec);
  if (bot_.config_.learnable_guesser) {
    guess_w_ = bind_one(store, ms, "guess.w", gue);
    guess_b_ = bind_one(store, ms, "guess.b", gue);
  }
}

QBotGraph::State QBotGraph::zero_state() {
  const std::size_t s = bot_.config_.state_dim;
  return State{graph_.constant(Tensor({s})), graph_.constant(Tensor({s}))};
}

QBotGraph::State QBotGraph::from_dialog_state(const DialogState& s) {
  return State{graph_.constant(s.h), graph_.constant(s.c)};
}

Var QBotGraph::encode_tokens(const std::vector<TokenId>& tokens) {
  const std::size_t q = bot_.config_.qa_hidden;
  LstmState st{graph_.constant(Tensor({q})), graph_.constant(Tensor({q}))};
  for (TokenId t : tokens) st = graph_.lstm_step(graph_.embed(t, enc_embed_), st, qa_);
  return st.h;
}

QBotGraph::State QBotGraph::init_state(const std::vector<TokenId>& caption) {
  return encode_round(zero_state(), caption, {}, Tensor({bot_.feature_dim_}));
}

QBotGraph::State QBotGraph::encode_round(State prev, const std::vector<TokenId>& question,
                                         const std::vector<TokenId>& answer, const Tensor& guessed_feature) {
  std::vector<TokenId> tokens = question;
  tokens.insert(tokens.end(), answer.begin(), answer.end());
  const Var f = encode_tokens(tokens);
  const Var z = graph_.linear(graph_.constant(guessed_feature), img_w_, img_b_);
  const Var h = graph_.linear(graph_.concat(f, z), fuse_w_, fuse_b_);
  const LstmState next = graph_.lstm_step(h, LstmState{prev.h, prev.c}, hist_);
  return State{next.h, next.c};
}

QBotGraph::DecoderState QBotGraph::decoder_init(Var s) {
  const std::size_t d = bot_.config_.decoder_hidden;
  return DecoderState{LstmState{s, graph_.constant(Tensor({d}))}, LstmState{s, graph_.constant(Tensor({d}))}};
}

Var QBotGraph::decoder_step(DecoderState& state, TokenId token) {
  state.layer1 = graph_.lstm_step(graph_.embed(token, dec_embed_), state.layer1, dec1_);
  state.layer2 = graph_.lstm_step(state.layer1.h, state.layer2, dec2_);
  return graph_.softmax(graph_.linear(state.layer2.h, out_w_, out_b_));
}

Var QBotGraph::question_nll(Var s, const std::vector<TokenId>& tokens) {
  auto dec = decoder_init(s);
  std::vector<Var> terms;
  terms.reserve(tokens.size());
  TokenId prev = Vocabulary::start;
  for (TokenId t : tokens) {
    terms.push_back(graph_.cross_entropy(decoder_step(dec, prev), t));
    prev = t;
  }
  return graph_.sum(terms);
}

Var QBotGraph::guesser_rows(const std::vector<Tensor>& features) {
  if (features.empty()) throw std::invalid_argument("guesser_rows of nothing");
  if (!bot_.config_.learnable_guesser) {
    const std::size_t dim = features.front().size();
    std::vector<double> data;
    data.reserve(dim * features.size());
    for (const auto& f : features) data.insert(data.end(), f.raw().begin(), f.raw().end());
    return graph_.constant(Tensor::matrix(features.size(), dim, std::move(data)));
  }
  std::vector<Var> rows;
  rows.reserve(features.size());
  for (const auto& f : features) rows.push_back(graph_.linear(graph_.constant(f), guess_w_, guess_b_));
  return graph_.stack_rows(rows);
}

Var QBotGraph::policy_nll(Var s, Var rows, std::size_t target) {
  const Var logits = graph_.scale(graph_.sq_distances(s, rows), -1.0);
  return graph_.cross_entropy(graph_.softmax(logits), target);
}

}  // namespace gw
