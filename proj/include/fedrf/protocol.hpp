#pragma once

// Federated RF-TCA: source and target local steps, server aggregation, the
// round orchestration, one-shot hard voting, and the two reference baselines
// (source-only training and plain parameter averaging).

#include "fedrf/core.hpp"
#include "fedrf/data_io.hpp"
#include "fedrf/kernel_rff.hpp"
#include "fedrf/learners.hpp"
#include "fedrf/mmd.hpp"
#include "fedrf/net_sim.hpp"
#include "fedrf/random.hpp"
#include "fedrf/wire.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace fedrf {

using ClientSet = std::vector<std::uint32_t>;  // ascending ids

/// |S| ~ Unif{0..K}, then |S| distinct ids from 1..K.
inline ClientSet sample_participants(std::size_t k, rng::CounterRng& gen) {
  if (k < 1) throw InvalidInputError("sample_participants: K must be >= 1");
  const std::size_t size = gen.below(k + 1);
  ClientSet out;
  for (std::size_t i : gen.sample_without_replacement(k, size)) out.push_back(static_cast<std::uint32_t>(i + 1));
  std::sort(out.begin(), out.end());
  return out;
}

/// Random subset of `parent` drawn the same way (uniform cardinality).
inline ClientSet sample_subset(const ClientSet& parent, rng::CounterRng& gen) {
  if (parent.empty()) return {};
  const std::size_t size = gen.below(parent.size() + 1);
  ClientSet out;
  for (std::size_t i : gen.sample_without_replacement(parent.size(), size)) out.push_back(parent[i]);
  std::sort(out.begin(), out.end());
  return out;
}

enum class OrderingMode { all, ordered, random };

/// all: every message. ordered: one message per round, from sender
/// ((round - 1) mod K) + 1, or the next present sender in cyclic order.
/// random: one uniformly chosen message.
inline std::vector<ProtocolMessage> apply_ordering_mode(const std::vector<ProtocolMessage>& msgs, OrderingMode mode,
                                                        std::uint32_t round, std::size_t k, rng::CounterRng& gen) {
  if (mode == OrderingMode::all || msgs.empty()) return msgs;
  if (mode == OrderingMode::random) return {msgs[gen.below(msgs.size())]};
  if (k < 1 || round < 1) throw InvalidInputError("apply_ordering_mode: ordered mode needs K >= 1 and round >= 1");
  const std::size_t start = (round - 1) % k;
  for (std::size_t off = 0; off < k; ++off) {
    const auto want = static_cast<std::uint32_t>((start + off) % k + 1);
    for (const auto& msg : msgs) {
      if (msg.sender == want) return {msg};
    }
  }
  return {};
}

/// Which nested subset A ⊇ B ⊇ C carries each message kind, plus ordering
/// modes for the summed-feature and layer-weight messages.
struct DropoutPolicy {
  // 0 = A, 1 = B, 2 = C, indexed by kind_index().
  std::array<int, kMessageKinds> level{0, 0, 0};
  OrderingMode feature_order = OrderingMode::all;
  OrderingMode weight_order = OrderingMode::all;

  static DropoutPolicy nested(int feature, int weights, int classifier) {
    DropoutPolicy p;
    p.level = {feature, weights, classifier};
    return p;
  }

  void validate() const {
    for (int l : level) {
      if (l < 0 || l > 2) throw InvalidInputError("DropoutPolicy: level must be 0 (A), 1 (B) or 2 (C)");
    }
    if (level[0] > level[1] || level[1] > level[2]) {
      throw InvalidInputError("DropoutPolicy: levels must nest as features >= weights >= classifier");
    }
  }
};

enum class Participation { full, sampled };
enum class ClassifierMode { interval, hard_vote };

struct RoundPlan {
  std::uint32_t round = 0;
  ClientSet participants;  // S_t = A
  std::array<ClientSet, 3> nested;  // A, B, C
  bool aggregate_classifier = false;
};

struct ProtocolConfig {
  std::size_t rounds = 400;
  std::size_t classifier_interval = 50;  // T_C
  double lambda = 1.0;
  Participation participation = Participation::sampled;
  ClassifierMode classifier_mode = ClassifierMode::interval;
  DropoutPolicy policy;
  NetworkConfig network;
  SgdConfig sgd;
  std::size_t n_features = 1000;  // N
  std::size_t m = 100;
  double sigma = 0.0;  // RFF bandwidth; 0 selects the median heuristic
  double median_scale = 1.0;  // multiplier on the median heuristic
  std::vector<Index> hidden{64};
  Index feature_dim = 16;
  // Stands in for a shared pretrained backbone: with no hidden layers and
  // feature_dim equal to the input dimension the extractor starts as the
  // identity map.
  bool identity_init = false;
  std::size_t classes = 0;  // 0: inferred from the source labels
  bool aligner_from_classification = false;
  std::size_t eval_every = 1;
  // The target's extractor is its only aligned component and learns at the
  // full rate; sources fine-tune theirs at this multiple.
  double source_extractor_lr_scale = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (rounds < 1) throw InvalidInputError("ProtocolConfig: rounds must be >= 1");
    if (classifier_interval < 1) throw InvalidInputError("ProtocolConfig: T_C must be >= 1");
    if (!(lambda >= 0.0)) throw InvalidInputError("ProtocolConfig: lambda must be >= 0");
    if (n_features < 1 || m < 1 || m > 2 * n_features) {
      throw InvalidInputError("ProtocolConfig: need N >= 1 and 1 <= m <= 2N");
    }
    if (sigma < 0.0 || !(median_scale > 0.0)) throw InvalidInputError("ProtocolConfig: sigma >= 0, median_scale > 0");
    if (!(source_extractor_lr_scale >= 0.0)) throw InvalidInputError("ProtocolConfig: lr scale must be >= 0");
    if (feature_dim < 1 || eval_every < 1) throw InvalidInputError("ProtocolConfig: feature_dim, eval_every >= 1");
    policy.validate();
    network.validate();
    sgd.validate();
  }

  bool classifier_boundary(std::uint32_t round) const {
    return classifier_mode == ClassifierMode::interval && round % classifier_interval == 0;
  }
};

inline RoundPlan plan_round(const ProtocolConfig& cfg, std::size_t k, std::uint32_t round) {
  RoundPlan plan;
  plan.round = round;
  rng::CounterRng gen(cfg.seed, "round-plan", {round});
  if (cfg.participation == Participation::full) {
    for (std::uint32_t i = 1; i <= k; ++i) plan.participants.push_back(i);
  } else {
    plan.participants = sample_participants(k, gen);
  }
  plan.nested[0] = plan.participants;
  plan.nested[1] = sample_subset(plan.nested[0], gen);
  plan.nested[2] = sample_subset(plan.nested[1], gen);
  plan.aggregate_classifier = cfg.classifier_boundary(round);
  return plan;
}

inline bool contains(const ClientSet& set, std::uint32_t id) { return std::binary_search(set.begin(), set.end(), id); }

struct CachedMessage {
  Vector payload;
  std::uint32_t round = 0;  // origin round, for staleness
};

enum class Role { source, target };

struct ClientState {
  std::uint32_t id = 0;
  Role role = Role::source;
  LocalModel model;
  ModelOptimizer optimizer;
  const DomainDataset* data = nullptr;
  std::vector<Index> train;
  std::map<std::uint32_t, CachedMessage> inbox;  // latest message per sender

  ClientState(std::uint32_t id_, Role role_, LocalModel model_, const DomainDataset& data_)
      : id(id_), role(role_), model(std::move(model_)), optimizer(model), data(&data_), train(data_.indices(Split::train)) {
    if (role == Role::target) {
      train.resize(static_cast<std::size_t>(data_.samples()));
      for (std::size_t i = 0; i < train.size(); ++i) train[i] = static_cast<Index>(i);
    }
    if (train.empty()) throw InvalidInputError("ClientState: client " + std::to_string(id) + " has no training samples");
  }
};

struct StepOutcome {
  LossReport report;  // measured on the first local batch, before updating
  Vector summed;      // the outgoing summed-feature message
  bool updated = false;
  bool flagged = false;  // in the round but no target message available
};

namespace detail {

inline std::vector<Index> draw_batch(const ClientState& st, std::uint64_t seed, std::uint32_t round, std::size_t step,
                                     std::size_t batch) {
  rng::CounterRng gen(seed, "batch", {st.id, round, step});
  std::vector<Index> out;
  for (std::size_t i : gen.sample_without_replacement(st.train.size(), std::min(batch, st.train.size()))) {
    out.push_back(st.train[i]);
  }
  return out;
}

}  // namespace detail

/// Local source training for one round. With a target message and in_round,
/// minimises L_C + lambda L_MMD; otherwise L_C only with W_RF left untouched.
inline StepOutcome source_step(ClientState& st, const CachedMessage* target_msg, bool in_round,
                               const RffProjection& proj, const ProtocolConfig& cfg, std::uint32_t round) {
  if (st.role != Role::source) throw InvalidInputError("source_step: client is not a source");
  const bool align = in_round && target_msg != nullptr && cfg.lambda > 0.0;
  LossSpec spec;
  spec.classification = true;
  spec.side = Side::source;
  spec.aligner_from_classification = cfg.aligner_from_classification;
  if (align) {
    spec.lambda = cfg.lambda;
    spec.remote = {target_msg->payload};
  }
  TrainMask mask;
  mask.aligner = align || cfg.aligner_from_classification;

  SgdConfig sgd = cfg.sgd;
  sgd.extractor_lr_scale = cfg.source_extractor_lr_scale;

  StepOutcome out;
  out.flagged = in_round && target_msg == nullptr;
  for (std::size_t s = 0; s < std::max<std::size_t>(cfg.sgd.steps, 1); ++s) {
    const auto idx = detail::draw_batch(st, cfg.seed, round, s, cfg.sgd.batch_size);
    const Matrix x = select_columns(st.data->features.data, idx);
    const auto y = select_labels(st.data->labels, idx);
    auto [grads, report] = backward_through(st.model, proj, x, y, spec);
    if (s == 0) {
      out.report = report;
      out.summed = report.summed;
    }
    st.optimizer.step(st.model, grads, sgd, mask);
  }
  out.updated = true;
  return out;
}

/// Local target training: G_T and W_RF_T minimise the sum of MMD losses
/// against every cached source message. No cache, no update.
inline StepOutcome target_step(ClientState& st, const RffProjection& proj, const ProtocolConfig& cfg,
                               std::uint32_t round) {
  if (st.role != Role::target) throw InvalidInputError("target_step: client is not the target");
  LossSpec spec;
  spec.classification = false;
  spec.side = Side::target;
  spec.lambda = cfg.lambda;
  for (const auto& [sender, msg] : st.inbox) spec.remote.push_back(msg.payload);
  const bool update = !spec.remote.empty() && cfg.lambda > 0.0;
  TrainMask mask;
  mask.classifier = false;

  StepOutcome out;
  const std::size_t steps = update ? std::max<std::size_t>(cfg.sgd.steps, 1) : 1;
  for (std::size_t s = 0; s < steps; ++s) {
    const auto idx = detail::draw_batch(st, cfg.seed, round, s, cfg.sgd.batch_size);
    const Matrix x = select_columns(st.data->features.data, idx);
    if (!update) {
      out.summed = summed_feature(rff_map(forward_extract(st.model.g, x), proj), Side::target);
      break;
    }
    auto [grads, report] = backward_through(st.model, proj, x, {}, spec);
    if (s == 0) {
      out.report = report;
      out.summed = report.summed;
    }
    st.optimizer.step(st.model, grads, cfg.sgd, mask);
  }
  out.updated = update;
  return out;
}

struct Aggregate {
  std::optional<Matrix> w;
  std::optional<SoftmaxClassifier> c;
};

/// Unweighted means, summed in ascending client id. W over the given sources
/// plus the target (if present); C over the given sources on classifier
/// boundaries only.
inline Aggregate aggregate(const RoundPlan& plan, std::vector<std::pair<std::uint32_t, const Matrix*>> source_w,
                           const Matrix* target_w,
                           std::vector<std::pair<std::uint32_t, const SoftmaxClassifier*>> source_c) {
  auto by_id = [](const auto& a, const auto& b) { return a.first < b.first; };
  std::sort(source_w.begin(), source_w.end(), by_id);
  std::sort(source_c.begin(), source_c.end(), by_id);
  Aggregate out;
  std::vector<const Matrix*> ws;
  if (target_w) ws.push_back(target_w);
  for (const auto& [id, w] : source_w) ws.push_back(w);
  if (!ws.empty()) {
    // Target first, then sources by id: the summation order is fixed.
    out.w = average(ws);
  }
  if (plan.aggregate_classifier && !source_c.empty()) {
    std::vector<const Matrix*> weights, biases;
    std::vector<Matrix> bias_cols;
    bias_cols.reserve(source_c.size());
    for (const auto& [id, c] : source_c) {
      weights.push_back(&c->weight);
      bias_cols.push_back(c->bias);
    }
    for (const auto& b : bias_cols) biases.push_back(&b);
    out.c = SoftmaxClassifier{average(weights), average(biases)};
  }
  return out;
}

/// Per-sample majority over the classifiers' argmax labels, ties to the
/// lowest class.
inline std::vector<int> hard_vote_predict(const std::vector<const SoftmaxClassifier*>& classifiers, const Matrix& f) {
  if (classifiers.empty()) throw InvalidInputError("hard_vote_predict: need at least one classifier");
  const Index c = classifiers.front()->classes();
  Eigen::MatrixXi votes = Eigen::MatrixXi::Zero(c, f.cols());
  for (const auto* clf : classifiers) {
    require_shape(clf->classes() == c, "hard_vote_predict: classifiers disagree on class count");
    const auto pred = predict(*clf, f);
    for (Index j = 0; j < f.cols(); ++j) ++votes(pred[static_cast<std::size_t>(j)], j);
  }
  std::vector<int> out(static_cast<std::size_t>(f.cols()));
  for (Index j = 0; j < f.cols(); ++j) {
    Index arg = 0;
    votes.col(j).maxCoeff(&arg);
    out[static_cast<std::size_t>(j)] = static_cast<int>(arg);
  }
  return out;
}

/// One routed message as observed on the wire.
struct TraceEntry {
  std::uint32_t round = 0;
  MessageKind kind = MessageKind::summed_feature;
  std::uint32_t sender = 0;
  std::uint32_t recipient = 0;
  std::size_t volume = 0;
  bool delivered = false;
};

struct ProtocolResult {
  std::vector<RoundMetrics> metrics;
  CommLedger ledger;
  std::vector<TraceEntry> trace;
  LocalModel target_model;
  std::vector<LocalModel> source_models;
  std::size_t flagged_rounds = 0;
  double final_accuracy = 0.0;
  double sigma = 0.0;
};

/// Shared initial model (every client derives it from the common seed).
inline LocalModel initial_model(Index input_dim, const ProtocolConfig& cfg, Index classes) {
  LocalModel model;
  model.g = make_mlp(input_dim, cfg.hidden, cfg.feature_dim, cfg.seed);
  if (cfg.identity_init) {
    if (!cfg.hidden.empty() || cfg.feature_dim != input_dim) {
      throw InvalidInputError("initial_model: identity_init needs no hidden layers and feature_dim = input dim");
    }
    model.g.layers.front().weight.setIdentity();
  }
  const auto rows = static_cast<Index>(2 * cfg.n_features);
  const auto cols = static_cast<Index>(cfg.m);
  const rng::CounterRng gen(cfg.seed, "aligner-init", {static_cast<std::uint64_t>(rows), static_cast<std::uint64_t>(cols)});
  model.w.resize(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) model.w(i, j) = gen.normal_at(static_cast<std::uint64_t>(j * rows + i));
  model.c = make_classifier(cols, classes, cfg.seed);
  return model;
}

inline Index infer_classes(const std::vector<DomainDataset>& domains, std::size_t configured) {
  if (configured > 0) return static_cast<Index>(configured);
  int top = -1;
  for (const auto& d : domains)
    for (int y : d.labels) top = std::max(top, y);
  if (top < 0) throw InvalidInputError("infer_classes: no labelled source data");
  return top + 1;
}

/// The RFF projection every client regenerates from the shared seed. A zero
/// bandwidth resolves to the median pairwise distance of the initial
/// extractor's outputs on the first source.
inline RffProjection shared_projection(const std::vector<DomainDataset>& domains, const LocalModel& init,
                                       const ProtocolConfig& cfg) {
  double sigma = cfg.sigma;
  if (sigma <= 0.0) {
    const auto& first = domains.front();
    sigma = cfg.median_scale * median_bandwidth(forward_extract(init.g, first.features.data), 256, cfg.seed);
  }
  return make_projection({sigma, cfg.n_features, cfg.seed}, cfg.feature_dim);
}

inline double evaluate_target(const LocalModel& target, const std::vector<const SoftmaxClassifier*>& voters,
                              const RffProjection& proj, const DomainDataset& data, ClassifierMode mode) {
  const Matrix f = aligned_features(target, proj, data.features.data);
  const auto pred = mode == ClassifierMode::hard_vote ? hard_vote_predict(voters, f) : predict(target.c, f);
  return accuracy(pred, data.evaluation_labels());
}

/// Runs rounds 1..T. `domains` holds the K sources followed by the target.
inline ProtocolResult run_protocol(const std::vector<DomainDataset>& domains, const ProtocolConfig& cfg) {
  cfg.validate();
  if (domains.size() < 2) throw InvalidInputError("run_protocol: need at least one source and a target");
  const std::size_t k = domains.size() - 1;
  const Index classes = infer_classes(domains, cfg.classes);
  const Index p = domains.front().features.dim();
  for (std::size_t i = 0; i < domains.size(); ++i) {
    require_shape(domains[i].features.dim() == p, "run_protocol: domains differ in feature dimension");
    if (i < k && !domains[i].labelled()) throw InvalidInputError("run_protocol: source " + domains[i].name + " is unlabelled");
    if (i == k && domains[i].labelled()) throw InvalidInputError("run_protocol: target labels must be hidden");
    domains[i].validate(classes);
  }

  const LocalModel init = initial_model(p, cfg, classes);
  const RffProjection proj = shared_projection(domains, init, cfg);
  ClientState target(kTargetId, Role::target, init, domains[k]);
  std::vector<ClientState> sources;
  for (std::size_t i = 0; i < k; ++i) sources.emplace_back(static_cast<std::uint32_t>(i + 1), Role::source, init, domains[i]);

  ProtocolResult result;
  result.sigma = proj.sigma;
  std::optional<CachedMessage> target_broadcast;  // what the sources hold
  double last_accuracy = 0.0;

  auto route = [&](std::uint32_t round, std::vector<ProtocolMessage> msgs) {
    std::vector<ProtocolMessage> delivered;
    for (const auto& msg : msgs) {
      const bool ok = message_survives(cfg.network, msg);
      result.ledger.record(round, msg, ok);
      result.trace.push_back({round, msg.kind, msg.sender, msg.recipient, msg.volume(), ok});
      if (ok) delivered.push_back(msg);
    }
    return delivered;
  };

  for (std::uint32_t t = 1; t <= cfg.rounds; ++t) {
    const RoundPlan plan = plan_round(cfg, k, t);
    result.ledger.touch(t);
    rng::CounterRng order_gen(cfg.seed, "ordering", {t});
    const auto& level = cfg.policy.level;
    const ClientSet& feature_set = plan.nested[static_cast<std::size_t>(level[0])];
    const ClientSet& weight_set = plan.nested[static_cast<std::size_t>(level[1])];
    const ClientSet& classifier_set = plan.nested[static_cast<std::size_t>(level[2])];

    // Sources, in id order, against the target message they currently hold.
    std::vector<ProtocolMessage> feature_msgs, weight_msgs, classifier_msgs;
    double classif_sum = 0.0;
    for (auto& src : sources) {
      const bool in_round = contains(plan.participants, src.id);
      const CachedMessage* tmsg = target_broadcast ? &*target_broadcast : nullptr;
      const StepOutcome out = source_step(src, tmsg, in_round, proj, cfg, t);
      result.flagged_rounds += out.flagged;
      classif_sum += out.report.classification;
      if (contains(feature_set, src.id)) {
        feature_msgs.push_back({MessageKind::summed_feature, src.id, t, kTargetId, out.summed});
      }
      if (contains(weight_set, src.id)) {
        weight_msgs.push_back({MessageKind::layer_weights, src.id, t, kServerId, flatten(src.model.w)});
      }
      if (plan.aggregate_classifier && contains(classifier_set, src.id)) {
        Vector payload(src.model.c.weight.size() + src.model.c.bias.size());
        payload << flatten(src.model.c.weight), src.model.c.bias;
        classifier_msgs.push_back({MessageKind::classifier_weights, src.id, t, kServerId, payload});
      }
    }
    feature_msgs = apply_ordering_mode(feature_msgs, cfg.policy.feature_order, t, k, order_gen);
    weight_msgs = apply_ordering_mode(weight_msgs, cfg.policy.weight_order, t, k, order_gen);

    for (const auto& msg : route(t, feature_msgs)) target.inbox[msg.sender] = {msg.payload, msg.round};

    // Target trains on every cached source message, then broadcasts.
    const StepOutcome tout = target_step(target, proj, cfg, t);
    const ProtocolMessage broadcast{MessageKind::summed_feature, kTargetId, t, kAllSources, tout.summed};
    if (!route(t, {broadcast}).empty()) target_broadcast = CachedMessage{tout.summed, t};

    weight_msgs.push_back({MessageKind::layer_weights, kTargetId, t, kServerId, flatten(target.model.w)});
    const auto weights_in = route(t, weight_msgs);
    const auto classifiers_in = route(t, classifier_msgs);

    // Server side.
    std::vector<Matrix> w_store;
    std::vector<SoftmaxClassifier> c_store;
    w_store.reserve(weights_in.size());
    c_store.reserve(classifiers_in.size());
    std::vector<std::pair<std::uint32_t, const Matrix*>> source_w;
    const Matrix* target_w = nullptr;
    const auto rows = static_cast<Index>(2 * cfg.n_features), cols = static_cast<Index>(cfg.m);
    for (const auto& msg : weights_in) {
      w_store.push_back(unflatten(msg.payload, rows, cols));
      if (msg.sender == kTargetId) {
        target_w = &w_store.back();
      } else {
        source_w.emplace_back(msg.sender, &w_store.back());
      }
    }
    std::vector<std::pair<std::uint32_t, const SoftmaxClassifier*>> source_c;
    for (const auto& msg : classifiers_in) {
      const Index wsize = cols * classes;
      c_store.push_back({unflatten(msg.payload.head(wsize), cols, classes), msg.payload.tail(classes)});
      source_c.emplace_back(msg.sender, &c_store.back());
    }
    const Aggregate agg = aggregate(plan, source_w, target_w, source_c);
    if (agg.w) {
      target.model.w = *agg.w;
      target.optimizer.reset_aligner();
      for (const auto& [id, w] : source_w) {
        sources[id - 1].model.w = *agg.w;
        sources[id - 1].optimizer.reset_aligner();
      }
    }
    if (agg.c) {
      target.model.c = *agg.c;
      for (const auto& [id, c] : source_c) {
        sources[id - 1].model.c = *agg.c;
        sources[id - 1].optimizer.reset_classifier();
      }
    }

    RoundMetrics rm;
    rm.round = t;
    rm.participant_count = plan.participants.size();
    rm.mmd_loss = target.inbox.empty() ? 0.0 : tout.report.mmd / static_cast<double>(target.inbox.size());
    rm.classif_loss = classif_sum / static_cast<double>(k);
    // Files without a target label column train normally and report accuracy 0.
    const bool evaluable = !domains[k].evaluation_labels().empty();
    if (evaluable && (t % cfg.eval_every == 0 || t == cfg.rounds)) {
      std::vector<const SoftmaxClassifier*> voters;
      for (const auto& s : sources) voters.push_back(&s.model.c);
      last_accuracy = evaluate_target(target.model, voters, proj, domains[k], cfg.classifier_mode);
    }
    rm.target_accuracy = last_accuracy;
    rm.volume_sent = result.ledger.round_volume(t);
    rm.volume_delivered = result.ledger.round_volume_delivered(t);
    result.metrics.push_back(rm);
  }

  result.final_accuracy = last_accuracy;
  result.target_model = target.model;
  for (const auto& s : sources) result.source_models.push_back(s.model);
  return result;
}

/// No communication at all: each source trains on its own labels for the same
/// number of rounds, and its own model is applied to the target. Returns the
/// mean target accuracy over sources and the mean held-out source accuracy.
struct BaselineResult {
  double target_accuracy = 0.0;
  double source_accuracy = 0.0;
};

inline BaselineResult run_source_only(const std::vector<DomainDataset>& domains, const ProtocolConfig& cfg) {
  cfg.validate();
  const std::size_t k = domains.size() - 1;
  const Index classes = infer_classes(domains, cfg.classes);
  const LocalModel init = initial_model(domains.front().features.dim(), cfg, classes);
  const RffProjection proj = shared_projection(domains, init, cfg);
  BaselineResult out;
  for (std::size_t i = 0; i < k; ++i) {
    ClientState src(static_cast<std::uint32_t>(i + 1), Role::source, init, domains[i]);
    for (std::uint32_t t = 1; t <= cfg.rounds; ++t) source_step(src, nullptr, false, proj, cfg, t);
    const Matrix ft = aligned_features(src.model, proj, domains[k].features.data);
    out.target_accuracy += accuracy(predict(src.model.c, ft), domains[k].evaluation_labels());
    const auto test = domains[i].indices(Split::test);
    const auto& idx = test.empty() ? src.train : test;
    const Matrix fs = aligned_features(src.model, proj, select_columns(domains[i].features.data, idx));
    out.source_accuracy += accuracy(predict(src.model.c, fs), select_labels(domains[i].labels, idx));
  }
  out.target_accuracy /= static_cast<double>(k);
  out.source_accuracy /= static_cast<double>(k);
  return out;
}

/// Plain parameter averaging: every source trains its whole model on L_C at
/// the base learning rate, and on T_C boundaries G, W_RF and C are averaged
/// over the round's participants and handed back to them. The target uses
/// the latest average (the shared initialisation before the first one).
inline double run_fedavg(const std::vector<DomainDataset>& domains, const ProtocolConfig& cfg) {
  cfg.validate();
  const std::size_t k = domains.size() - 1;
  const Index classes = infer_classes(domains, cfg.classes);
  const LocalModel init = initial_model(domains.front().features.dim(), cfg, classes);
  const RffProjection proj = shared_projection(domains, init, cfg);
  ProtocolConfig local = cfg;
  local.aligner_from_classification = true;
  local.source_extractor_lr_scale = 1.0;
  std::vector<ClientState> sources;
  for (std::size_t i = 0; i < k; ++i) sources.emplace_back(static_cast<std::uint32_t>(i + 1), Role::source, init, domains[i]);
  LocalModel global = init;
  for (std::uint32_t t = 1; t <= cfg.rounds; ++t) {
    for (auto& src : sources) source_step(src, nullptr, false, proj, local, t);
    if (t % cfg.classifier_interval != 0) continue;
    const ClientSet participants = plan_round(cfg, k, t).participants;
    if (participants.empty()) continue;
    ModelGrads sum = ModelGrads::zeros_like(global);
    for (std::uint32_t id : participants) {
      for_each_tensor(sources[id - 1].model, sum, [](auto& param, auto& acc) { acc += param; });
    }
    const auto count = static_cast<double>(participants.size());
    for_each_tensor(global, sum, [count](auto& param, auto& acc) { param = acc / count; });
    for (std::uint32_t id : participants) {
      sources[id - 1].model = global;
      sources[id - 1].optimizer = ModelOptimizer(global);
    }
  }
  const Matrix ft = aligned_features(global, proj, domains[k].features.data);
  return accuracy(predict(global.c, ft), domains[k].evaluation_labels());
}

}  // namespace fedrf
