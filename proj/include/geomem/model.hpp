#ifndef GEOMEM_MODEL_HPP_
#define GEOMEM_MODEL_HPP_

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "geomem/dualmem.hpp"
#include "geomem/episode_io.hpp"
#include "geomem/ioutil.hpp"
#include "geomem/rep3d.hpp"
#include "geomem/scenegen.hpp"

namespace geomem {

// ---- question and option embeddings ---------------------------------------
//
// Questions are embedded with the same fixed random vocabulary used for the
// visual tokens: a kind vector plus role-modulated class vectors, normalized
// to unit length. Reserved id ranges keep kinds, roles, and direction codes
// disjoint from object classes.

constexpr int kKindEmbBase = 1000;
constexpr int kRoleEmbBase = 2000;
constexpr int kDirectionEmbBase = 3000;

template <class S>
TensorT<S> unit_normalize(TensorT<S> v) {
  const S n = norm2(v);
  if (n > S(0))
    for (auto& x : v.data) x /= n;
  return v;
}

template <class S>
TensorT<S> compose_class_set(const std::vector<int>& classes, int c, std::uint64_t vocab_seed) {
  TensorT<S> acc({c});
  for (size_t r = 0; r < classes.size(); ++r) {
    const TensorT<S> role = class_embedding<S>(kRoleEmbBase + static_cast<int>(r), c, vocab_seed);
    const TensorT<S> cls = class_embedding<S>(classes[r], c, vocab_seed);
    for (int k = 0; k < c; ++k) acc[k] += role[k] * cls[k] * static_cast<S>(std::sqrt((double)c));
  }
  return acc;
}

template <class S>
TensorT<S> question_embedding(const QARecord& qa, int c, std::uint64_t vocab_seed) {
  TensorT<S> q = class_embedding<S>(kKindEmbBase + static_cast<int>(qa.kind), c, vocab_seed);
  const TensorT<S> cls = compose_class_set<S>(qa.query, c, vocab_seed);
  for (int k = 0; k < c; ++k) q[k] += cls[k];
  return unit_normalize(std::move(q)).reshaped({1, c});
}

template <class S>
TensorT<S> option_embedding(TaskKind kind, const std::vector<int>& payload, int c,
                            std::uint64_t vocab_seed) {
  if (kind == TaskKind::RelativeDirection) {
    if (payload.size() != 1) throw DataError("direction option must hold one code");
    return unit_normalize(class_embedding<S>(kDirectionEmbBase + payload[0], c, vocab_seed));
  }
  return unit_normalize(compose_class_set<S>(payload, c, vocab_seed));
}

// ---- model ---------------------------------------------------------------

// Readout context assembled from three question-conditioned routes over the
// memory bank: plain softmax attention with the question query, role-probe
// attention (one query per class the question or an answer option mentions,
// plus entrywise products for pairwise geometry), and a sigmoid-gated sum
// whose magnitude can grow with the number of matching tokens (softmax
// renormalizes away counts). Choice questions score each option with the
// shared per-kind head over the question features plus that option's probe
// contexts and gated masses.
template <class S>
struct ModelParamsT {
  Rep3DParamsT<S> rep3d;
  DualMemParamsT<S> dualmem;
  CrossAttentionT<S> readout;     // question query over the memory token bank
  CrossAttentionT<S> probe_attn;  // per-role class probes over the bank
  LinearT<S> count_q, count_k, count_v;  // gated-sum route
  ParameterT<S> count_sharp, count_bias;  // gate logit scale and threshold
  // one classification head per multiple-choice kind, one regression head per
  // numeric kind (indexed by TaskKind)
  Mlp2T<S> mc_heads[3];   // relative_distance, relative_direction, appearance_order
  Mlp2T<S> reg_heads[2];  // object_count, absolute_distance

  static constexpr int kRoles = 3;       // probe rows per question or option
  static constexpr int kFeatWidth = 16;  // multiples of c in the question features
  static constexpr int kOptWidth = 10;   // additional multiples of c per option

  static int mc_index(TaskKind k) {
    switch (k) {
      case TaskKind::RelativeDistance: return 0;
      case TaskKind::RelativeDirection: return 1;
      case TaskKind::AppearanceOrder: return 2;
      default: throw DataError("not a multiple-choice kind");
    }
  }
  static int reg_index(TaskKind k) {
    switch (k) {
      case TaskKind::ObjectCount: return 0;
      case TaskKind::AbsoluteDistance: return 1;
      default: throw DataError("not a numeric kind");
    }
  }

  ModelParamsT() = default;
  ModelParamsT(const DimsConfig& d, Rng& rng)
      : rep3d(d, rng),
        dualmem(d, rng),
        // Sharp temperature inits: with identity projections the matching-key
        // similarity margin is ~1/sqrt(c) of a logit, so selective retrieval
        // over a few hundred bank rows needs tau in the tens. A scalar under
        // an adaptive optimizer cannot travel that far in a toy step budget,
        // so the modules start at working sharpness and fine-tune from there.
        readout(CrossAttentionT<S>::aligned("readout", d.c, d.c, d.c, d.c, 8.0)),
        probe_attn(CrossAttentionT<S>::aligned("probe_attn", d.c, d.c, d.c, d.c, 64.0)),
        count_q(LinearT<S>::aligned("count_q", d.c, d.c)),
        count_k(LinearT<S>::aligned("count_k", d.c, d.c)),
        count_v(LinearT<S>::aligned("count_v", d.c, d.c)),
        count_sharp("count_sharp", TensorT<S>::full({1, 1}, S(48))),
        count_bias("count_bias", TensorT<S>::full({1, 1}, S(-2))),
        mc_heads{Mlp2T<S>("mc_head.relative_distance", (kFeatWidth + kOptWidth) * d.c, 2 * d.c, 1,
                          rng),
                 Mlp2T<S>("mc_head.relative_direction", (kFeatWidth + kOptWidth) * d.c, 2 * d.c, 1,
                          rng),
                 Mlp2T<S>("mc_head.appearance_order", (kFeatWidth + kOptWidth) * d.c, 2 * d.c, 1,
                          rng)},
        reg_heads{Mlp2T<S>("reg_head.object_count", kFeatWidth * d.c, 2 * d.c, 1, rng),
                  Mlp2T<S>("reg_head.absolute_distance", kFeatWidth * d.c, 2 * d.c, 1, rng)} {}

  void collect(ParamList<S>& out) {
    rep3d.collect(out);
    dualmem.collect(out);
    readout.collect(out);
    probe_attn.collect(out);
    count_q.collect(out);
    count_k.collect(out);
    count_v.collect(out);
    out.push_back(&count_sharp);
    out.push_back(&count_bias);
    for (auto& h : mc_heads) h.collect(out);
    for (auto& h : reg_heads) h.collect(out);
  }
};

struct ModelOptions {
  Rep3DOptions rep3d;
  DualMemOptions dualmem;
  int working_capacity = 8;
  int episodic_capacity = 32;

  static ModelOptions from_config(const ExperimentConfig& cfg) {
    ModelOptions o;
    o.rep3d.enabled = cfg.ablation.rep3d;
    o.rep3d.injection = injection_from_string(cfg.ablation.injection);
    o.rep3d.fusion = fusion_from_string(cfg.ablation.fusion);
    o.dualmem.working_enabled = cfg.ablation.working_memory;
    o.dualmem.episodic_enabled = cfg.ablation.episodic_memory;
    o.dualmem.similarity = similarity_from_string(cfg.memory.episodic_similarity);
    o.working_capacity = cfg.memory.working_capacity;
    o.episodic_capacity = cfg.memory.episodic_capacity;
    return o;
  }
};

struct Prediction {
  TaskKind kind = TaskKind::ObjectCount;
  bool is_numeric = false;
  bool correct = false;   // choice kinds
  double pred = 0;        // numeric kinds: exp(link); choice kinds: argmax index
  double truth = 0;
  double loss = 0;
};

template <class S>
struct EpisodeForwardT {
  VarT<S> loss;
  std::vector<Prediction> predictions;
  std::vector<MemoryStepDiag> memory_diags;
};

// Replaying against recorded pre-step states keeps memory writes out of the
// differentiated path on both the tape and finite-difference routes.
template <class S>
struct MemoryTraceT {
  std::vector<DualMemoryStateT<S>> pre_states;
  bool replay = false;
};

// Per-role class probes: row r holds the class embedding named in role r,
// falling back to the given vector for unused roles.
template <class S>
TensorT<S> role_rows(const std::vector<int>& classes, const TensorT<S>& fallback, int c,
                     std::uint64_t vocab_seed) {
  TensorT<S> rows({ModelParamsT<S>::kRoles, c});
  for (int r = 0; r < ModelParamsT<S>::kRoles; ++r) {
    TensorT<S> e = r < static_cast<int>(classes.size())
                       ? unit_normalize(class_embedding<S>(classes[r], c, vocab_seed))
                       : fallback;
    for (int k = 0; k < c; ++k) rows.at(r, k) = e[k];
  }
  return rows;
}

template <class S>
TensorT<S> option_role_rows(TaskKind kind, const std::vector<int>& payload,
                            const TensorT<S>& fallback, int c, std::uint64_t vocab_seed) {
  if (kind == TaskKind::RelativeDirection)
    return role_rows<S>({}, option_embedding<S>(kind, payload, c, vocab_seed), c, vocab_seed);
  return role_rows<S>(payload, fallback, c, vocab_seed);
}

template <class S>
struct ReadoutOutT {
  VarT<S> feat;                    // 1 x kFeatWidth*c question features
  std::vector<VarT<S>> opt_feats;  // per option, 1 x kOptWidth*c
};

// Question-conditioned readout over the memory bank. Probe attention and the
// gated-mass route run once over the stacked question and option probe rows,
// then rows are sliced back out per consumer.
template <class S>
ReadoutOutT<S> readout_forward(TapeT<S>& tape, ModelParamsT<S>& params, VarT<S> bank, VarT<S> q,
                               const QARecord& qa, const DimsConfig& d, std::uint64_t vocab_seed,
                               int n_frames) {
  const int c = d.c;
  constexpr int R = ModelParamsT<S>::kRoles;
  const TensorT<S> fb = question_embedding<S>(qa, c, vocab_seed).reshaped({c});
  std::vector<TensorT<S>> stacked = {role_rows<S>(qa.query, fb, c, vocab_seed)};
  for (const auto& payload : qa.options)
    stacked.push_back(option_role_rows<S>(qa.kind, payload, fb, c, vocab_seed));
  const int n_probe_rows = static_cast<int>(stacked.size()) * R;
  VarT<S> probe_q = tape.constant(concat(stacked, 0));
  VarT<S> probes = params.probe_attn.apply(tape, probe_q, bank);

  const S inv_scale = S(1) / static_cast<S>(std::sqrt(static_cast<double>(c)));
  VarT<S> count_queries = params.count_q.apply(tape, concat_rows<S>({q, probe_q}));
  // Gate logits get a learnable scale and threshold: raw similarity margins
  // live well inside the sigmoid's linear region, where matching and
  // non-matching tokens gate almost identically. A sharp scale and a negative
  // threshold turn the gate into a soft match detector from the start.
  VarT<S> gate_sim = scale(matmul_nt(count_queries, params.count_k.apply(tape, bank)), inv_scale);
  const int n_gq = gate_sim.val().dim(0);
  const int n_gk = gate_sim.val().dim(1);
  VarT<S> ones_gq = tape.constant(TensorT<S>::full({n_gq, 1}, S(1)));
  VarT<S> sharp_col = matmul(ones_gq, tape.param(params.count_sharp));
  VarT<S> bias_full = matmul(matmul(ones_gq, tape.param(params.count_bias)),
                             tape.constant(TensorT<S>::full({1, n_gk}, S(1))));
  VarT<S> gates = sigmoid(add(mul_bcast_col(gate_sim, sharp_col), bias_full));
  VarT<S> masses = scale(matmul(gates, params.count_v.apply(tape, bank)),
                         S(1) / static_cast<S>(n_frames));

  auto row = [&](VarT<S> M, int r, int nrows) {
    TensorT<S> sel({1, nrows});
    sel.at(0, r) = S(1);
    return matmul(tape.constant(sel), M);
  };
  // Circular channel shift. Same-channel products of two probe contexts give
  // only symmetric (cosine-difference) features of the injected position
  // codes; products against a shifted copy add cross-channel terms, so signed
  // (sine-difference) geometry such as left-vs-right becomes representable.
  TensorT<S> rot_m({c, c});
  for (int k = 0; k < c; ++k) rot_m.at(k, (k + 1) % c) = S(1);
  VarT<S> rot_const = tape.constant(rot_m);
  auto rot = [&](VarT<S> x) { return matmul(x, rot_const); };
  VarT<S> ctx = params.readout.apply(tape, q, bank);
  VarT<S> a = row(probes, 0, n_probe_rows);
  VarT<S> b = row(probes, 1, n_probe_rows);
  VarT<S> cc = row(probes, 2, n_probe_rows);
  VarT<S> mq = row(masses, 0, n_probe_rows + 1);

  ReadoutOutT<S> out;
  VarT<S> feat = concat_cols(ctx, mq);
  feat = concat_cols(feat, a);
  feat = concat_cols(feat, b);
  feat = concat_cols(feat, cc);
  feat = concat_cols(feat, mul(a, b));
  feat = concat_cols(feat, mul(a, cc));
  feat = concat_cols(feat, mul(b, cc));
  feat = concat_cols(feat, mul(a, rot(b)));
  feat = concat_cols(feat, mul(b, rot(a)));
  feat = concat_cols(feat, mul(a, rot(cc)));
  feat = concat_cols(feat, mul(cc, rot(a)));
  feat = concat_cols(feat, row(masses, 1, n_probe_rows + 1));
  feat = concat_cols(feat, row(masses, 2, n_probe_rows + 1));
  feat = concat_cols(feat, row(masses, 3, n_probe_rows + 1));
  out.feat = concat_cols(feat, q);  // 1 x kFeatWidth*c

  for (size_t i = 0; i < qa.options.size(); ++i) {
    const int base = R + static_cast<int>(i) * R;
    VarT<S> o0 = row(probes, base, n_probe_rows);
    VarT<S> o1 = row(probes, base + 1, n_probe_rows);
    VarT<S> o2 = row(probes, base + 2, n_probe_rows);
    VarT<S> of = concat_cols(o0, o1);
    of = concat_cols(of, o2);
    of = concat_cols(of, row(masses, base + 1, n_probe_rows + 1));
    of = concat_cols(of, row(masses, base + 2, n_probe_rows + 1));
    of = concat_cols(of, row(masses, base + 3, n_probe_rows + 1));
    of = concat_cols(of, mul(o0, a));
    of = concat_cols(of, mul(o0, rot(a)));
    of = concat_cols(of, mul(a, rot(o0)));
    of = concat_cols(
        of, tape.constant(option_embedding<S>(qa.kind, qa.options[i], c, vocab_seed)
                              .reshaped({1, c})));
    out.opt_feats.push_back(of);  // 1 x kOptWidth*c
  }
  return out;
}

template <class S>
EpisodeForwardT<S> forward_episode(TapeT<S>& tape, const EpisodeT<S>& ep, ModelParamsT<S>& params,
                                   const DimsConfig& d, const ModelOptions& opt,
                                   std::uint64_t vocab_seed, MemoryTraceT<S>* trace = nullptr) {
  EpisodeForwardT<S> out;
  DualMemoryStateT<S> st;
  st.l_w = opt.working_capacity;
  st.l_e = opt.episodic_capacity;
  std::vector<VarT<S>> memories;
  for (size_t t = 0; t < ep.frames.size(); ++t) {
    if (trace) {
      if (trace->replay)
        st = trace->pre_states.at(t);
      else
        trace->pre_states.push_back(st);
    }
    VarT<S> H = rep3d_forward(tape, ep.frames[t], params.rep3d, d, opt.rep3d);
    auto step = dualmem_step(tape, H, st, params.dualmem, opt.dualmem);
    memories.push_back(step.M);
    out.memory_diags.push_back(step.diag);
  }
  VarT<S> bank = memories.size() == 1 ? memories[0] : concat_rows(memories);

  VarT<S> total = tape.constant(TensorT<S>::scalar(S(0)));
  for (const auto& qa : ep.qa) {
    VarT<S> q = tape.constant(question_embedding<S>(qa, d.c, vocab_seed));
    ReadoutOutT<S> ro = readout_forward(tape, params, bank, q, qa, d, vocab_seed,
                                        static_cast<int>(ep.frames.size()));
    Prediction pred;
    pred.kind = qa.kind;
    pred.is_numeric = task_is_numeric(qa.kind);
    VarT<S> loss;
    if (pred.is_numeric) {
      VarT<S> reg = params.reg_heads[ModelParamsT<S>::reg_index(qa.kind)].apply(tape, ro.feat);
      VarT<S> s = sum_all(reg);
      const double y = qa.numeric_answer;
      if (!(y > 0)) throw DataError("numeric answer must be positive");
      VarT<S> diff = add_const(s, static_cast<S>(-std::log(y)));
      loss = mul(diff, diff);
      pred.pred = std::exp(static_cast<double>(s.val()[0]));
      pred.truth = y;
    } else {
      auto& head = params.mc_heads[ModelParamsT<S>::mc_index(qa.kind)];
      std::vector<VarT<S>> per_option;
      for (const auto& of : ro.opt_feats)
        per_option.push_back(head.apply(tape, concat_cols(ro.feat, of)));
      VarT<S> logits = reshape(per_option.size() == 1 ? per_option[0] : concat_rows(per_option),
                               {static_cast<int>(qa.options.size())});
      loss = cross_entropy(logits, qa.answer_index);
      int argmax = 0;
      for (int i = 1; i < logits.val().size(); ++i)
        if (logits.val()[i] > logits.val()[argmax]) argmax = i;
      pred.pred = argmax;
      pred.truth = qa.answer_index;
      pred.correct = argmax == qa.answer_index;
    }
    pred.loss = static_cast<double>(loss.val()[0]);
    out.predictions.push_back(pred);
    total = add(total, loss);
  }
  const S inv = S(1) / static_cast<S>(std::max<size_t>(1, ep.qa.size()));
  out.loss = scale(total, inv);
  return out;
}

// ---- metrics -------------------------------------------------------------

// Mean relative accuracy: fraction of confidence thresholds
// theta in {0.50, 0.55, ..., 0.95} at which |pred - truth| / truth < 1 - theta.
inline double mra(double pred, double truth) {
  if (truth <= 0) throw DataError("mra: truth must be positive");
  // theta_i = (10 + i) / 20; rel < 1 - theta_i is evaluated in a scaled form
  // so boundary cases like a relative error of exactly 0.30 stay strict.
  const double err = std::abs(pred - truth);
  int hits = 0;
  for (int i = 0; i < 10; ++i)
    if (20.0 * err < (10 - i) * truth) ++hits;
  return hits / 10.0;
}

inline const char* length_group_name(int frames) {
  if (frames <= 16) return "short";
  if (frames <= 32) return "mid";
  return "long";
}

struct MetricCell {
  int count = 0;
  double sum = 0;  // accuracy indicator or per-record MRA

  double mean() const { return count == 0 ? 0.0 : sum / count; }
};

struct EvalResult {
  // [task kind][length group 0..2]
  MetricCell cells[5][3];
  double mean_loss = 0;
  int records = 0;

  static int group_index(int frames) { return frames <= 16 ? 0 : (frames <= 32 ? 1 : 2); }

  MetricCell task_total(TaskKind k) const {
    MetricCell m;
    for (int g = 0; g < 3; ++g) {
      m.count += cells[static_cast<int>(k)][g].count;
      m.sum += cells[static_cast<int>(k)][g].sum;
    }
    return m;
  }
  MetricCell overall() const {
    MetricCell m;
    for (int k = 0; k < 5; ++k)
      for (int g = 0; g < 3; ++g) {
        m.count += cells[k][g].count;
        m.sum += cells[k][g].sum;
      }
    return m;
  }
  MetricCell group_total(int g) const {
    MetricCell m;
    for (int k = 0; k < 5; ++k) {
      m.count += cells[k][g].count;
      m.sum += cells[k][g].sum;
    }
    return m;
  }
};

template <class S>
EvalResult evaluate(ModelParamsT<S>& params, const DatasetT<S>& ds, const ModelOptions& opt,
                    std::uint64_t vocab_seed) {
  EvalResult res;
  double loss_sum = 0;
  int loss_n = 0;
  for (const auto& ep : ds.episodes) {
    TapeT<S> tape;
    auto fwd = forward_episode(tape, ep, params, ds.dims, opt, vocab_seed);
    loss_sum += static_cast<double>(fwd.loss.val()[0]);
    ++loss_n;
    const int g = EvalResult::group_index(static_cast<int>(ep.frames.size()));
    for (const auto& p : fwd.predictions) {
      auto& cell = res.cells[static_cast<int>(p.kind)][g];
      ++cell.count;
      cell.sum += p.is_numeric ? mra(p.pred, p.truth) : (p.correct ? 1.0 : 0.0);
      ++res.records;
    }
  }
  res.mean_loss = loss_n == 0 ? 0.0 : loss_sum / loss_n;
  return res;
}

// ---- optimizer -----------------------------------------------------------

template <class S>
struct AdamWT {
  double lr = 3e-4, weight_decay = 0.01, beta1 = 0.9, beta2 = 0.999, eps = 1e-8, clip_norm = 1.0;
  std::vector<TensorT<S>> m, v;
  std::int64_t t = 0;

  explicit AdamWT(const TrainConfig& tc)
      : lr(tc.lr), weight_decay(tc.weight_decay), beta1(tc.beta1), beta2(tc.beta2),
        clip_norm(tc.clip_norm) {}
  AdamWT() = default;

  void step(ParamList<S>& params) {
    if (m.empty()) {
      for (auto* p : params) {
        m.push_back(TensorT<S>::zeros(p->value.shape));
        v.push_back(TensorT<S>::zeros(p->value.shape));
      }
    }
    double sq = 0;
    for (auto* p : params)
      for (auto g : p->gradient.data) {
        if (!std::isfinite(static_cast<double>(g)))
          throw NumericalError("non-finite gradient in " + p->name);
        sq += static_cast<double>(g) * static_cast<double>(g);
      }
    const double gnorm = std::sqrt(sq);
    const double scale_g = (clip_norm > 0 && gnorm > clip_norm) ? clip_norm / gnorm : 1.0;
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (size_t i = 0; i < params.size(); ++i) {
      auto* p = params[i];
      for (std::int64_t j = 0; j < p->value.size(); ++j) {
        const double g = static_cast<double>(p->gradient[j]) * scale_g;
        const double mj = beta1 * static_cast<double>(m[i][j]) + (1 - beta1) * g;
        const double vj = beta2 * static_cast<double>(v[i][j]) + (1 - beta2) * g * g;
        m[i][j] = static_cast<S>(mj);
        v[i][j] = static_cast<S>(vj);
        const double update = (mj / bc1) / (std::sqrt(vj / bc2) + eps);
        p->value[j] = static_cast<S>(static_cast<double>(p->value[j]) -
                                     lr * (update + weight_decay * static_cast<double>(p->value[j])));
      }
    }
  }
};

// ---- training loop -------------------------------------------------------

struct TrainStepInfo {
  int step = 0;
  double loss = 0;
  int episode_index = 0;
};

template <class S, class Callback>
void train(ModelParamsT<S>& params, const DatasetT<S>& ds, const ModelOptions& opt,
           const TrainConfig& tc, std::uint64_t vocab_seed, Callback&& on_step) {
  if (ds.episodes.empty()) throw DataError("train: empty dataset");
  if (tc.lr_schedule != "cosine" && tc.lr_schedule != "constant")
    throw ConfigError("train: unknown lr_schedule: " + tc.lr_schedule);
  const bool cosine = tc.lr_schedule == "cosine";
  ParamList<S> ps;
  params.collect(ps);
  AdamWT<S> adamw(tc);
  Rng order_rng(tc.seed ^ 0x7f4a7c15ULL);
  std::vector<int> order(ds.episodes.size());
  std::iota(order.begin(), order.end(), 0);
  size_t cursor = order.size();
  for (int step = 0; step < tc.steps; ++step) {
    if (cursor == order.size()) {
      for (size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[static_cast<size_t>(order_rng.uniform_int(
                                    0, static_cast<int>(i) - 1))]);
      cursor = 0;
    }
    const int ep_idx = order[cursor++];
    for (auto* p : ps) p->reset_grad();
    TapeT<S> tape;
    auto fwd = forward_episode(tape, ds.episodes[static_cast<size_t>(ep_idx)], params, ds.dims, opt,
                               vocab_seed);
    const double loss = static_cast<double>(fwd.loss.val()[0]);
    if (!std::isfinite(loss)) throw NumericalError("non-finite loss at step " + std::to_string(step));
    tape.backward(fwd.loss);
    // cosine decay to a 10% floor; the late-training iterates are otherwise
    // noisy enough to dominate the final scores
    if (cosine && tc.steps > 1)
      adamw.lr = tc.lr * (0.1 + 0.45 * (1.0 + std::cos(M_PI * static_cast<double>(step) /
                                                       static_cast<double>(tc.steps - 1))));
    adamw.step(ps);
    on_step(TrainStepInfo{step, loss, ep_idx});
  }
}

// ---- checkpoints ---------------------------------------------------------

constexpr std::uint32_t kCheckpointMagic = 0x4b434d47u;  // "GMCK"
constexpr std::uint32_t kCheckpointVersion = 1;

template <class S>
std::vector<std::uint8_t> serialize_checkpoint(ParamList<S>& params) {
  ByteWriter w;
  w.pod(kCheckpointMagic);
  w.pod(kCheckpointVersion);
  w.pod(scalar_code<S>());
  w.pod(static_cast<std::uint32_t>(params.size()));
  for (auto* p : params) {
    w.str(p->name);
    write_tensor(w, p->value);
  }
  const auto& b = w.bytes();
  const std::uint32_t crc = crc32(b.data(), b.size());
  w.pod(crc);
  return w.take();
}

template <class S>
void load_checkpoint_bytes(const std::vector<std::uint8_t>& bytes, ParamList<S>& params) {
  if (bytes.size() < 4) throw DataError("checkpoint too short");
  const std::uint32_t stored_crc =
      static_cast<std::uint32_t>(bytes[bytes.size() - 4]) |
      (static_cast<std::uint32_t>(bytes[bytes.size() - 3]) << 8) |
      (static_cast<std::uint32_t>(bytes[bytes.size() - 2]) << 16) |
      (static_cast<std::uint32_t>(bytes[bytes.size() - 1]) << 24);
  if (stored_crc != crc32(bytes.data(), bytes.size() - 4))
    throw DataError("checkpoint checksum failure");
  ByteReader r(bytes.data(), bytes.size() - 4);
  if (r.pod<std::uint32_t>() != kCheckpointMagic) throw DataError("not a checkpoint (bad magic)");
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  if (r.pod<std::uint8_t>() != scalar_code<S>())
    throw DataError("checkpoint scalar width mismatch");
  const auto count = r.pod<std::uint32_t>();
  std::vector<std::pair<std::string, TensorT<S>>> blocks;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    blocks.emplace_back(std::move(name), read_tensor<S>(r));
  }
  for (auto* p : params) {
    auto it = std::find_if(blocks.begin(), blocks.end(),
                           [&](const auto& b) { return b.first == p->name; });
    if (it == blocks.end()) throw DataError("checkpoint missing parameter " + p->name);
    if (it->second.shape != p->value.shape)
      throw DataError("checkpoint shape mismatch for " + p->name);
    p->value = it->second;
  }
  if (blocks.size() != params.size())
    throw DataError("checkpoint holds " + std::to_string(blocks.size()) + " parameters, model has " +
                    std::to_string(params.size()));
}

template <class S>
void save_checkpoint(const std::string& path, ParamList<S>& params) {
  write_file(path, serialize_checkpoint(params));
}

template <class S>
void load_checkpoint(const std::string& path, ParamList<S>& params) {
  load_checkpoint_bytes(read_file(path), params);
}

// ---- metrics CSV ---------------------------------------------------------

struct MetricsWriter {
  std::string buffer = "step,task_kind,length_group,metric_name,value,seed\n";

  void row(int step, const std::string& task, const std::string& group, const std::string& metric,
           double value, std::uint64_t seed) {
    char num[64];
    std::snprintf(num, sizeof(num), "%.17g", value);
    buffer += std::to_string(step) + "," + task + "," + group + "," + metric + "," + num + "," +
              std::to_string(seed) + "\n";
  }

  void eval_rows(int step, const EvalResult& res, std::uint64_t seed) {
    static const char* groups[3] = {"short", "mid", "long"};
    for (int k = 0; k < 5; ++k) {
      const TaskKind kind = static_cast<TaskKind>(k);
      const char* metric = task_is_numeric(kind) ? "mra" : "accuracy";
      for (int g = 0; g < 3; ++g) {
        const auto& cell = res.cells[k][g];
        if (cell.count == 0) continue;  // absent length buckets are omitted
        row(step, task_kind_name(kind), groups[g], metric, cell.mean(), seed);
      }
      const auto total = res.task_total(kind);
      if (total.count > 0) row(step, task_kind_name(kind), "all", metric, total.mean(), seed);
    }
    const auto overall = res.overall();
    if (overall.count > 0) row(step, "all", "all", "score", overall.mean(), seed);
    row(step, "all", "all", "loss", res.mean_loss, seed);
  }

  void save(const std::string& path) const { write_text_file(path, buffer); }
};

}  // namespace geomem

#endif  // GEOMEM_MODEL_HPP_
