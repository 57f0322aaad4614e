#include "dxp/worldmodel.hpp"

#include "dxp/ad.hpp"
#include "dxp/binary_io.hpp"

#include "json.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace dxp::wm {

namespace {

constexpr std::string_view kCheckpointMagic = "DXPMDL1";
constexpr std::uint32_t kCheckpointVersion = 1;

// Both engines expose the same small vocabulary so the network is written
// once: EvalEngine computes plain matrices, TapeEngine records onto an
// autodiff tape.
struct EvalEngine {
  using Value = Matrix;
  using Param = Eigen::Map<const Matrix>;

  Value linear(const Param& w, const Param& b, const Value& x) {
    Matrix y = w * x;
    y.colwise() += b.col(0);
    return y;
  }
  Value tanh(const Value& x) { return ad::tanh_of(x); }
  Value sigmoid(const Value& x) { return ad::sigmoid_of(x); }
  Value exp(const Value& x) { return x.array().exp().matrix(); }
  Value add(const Value& a, const Value& b) { return a + b; }
  Value sub(const Value& a, const Value& b) { return a - b; }
  Value mul(const Value& a, const Value& b) { return a.cwiseProduct(b); }
  Value affine(const Value& x, double scale, double shift) { return (x.array() * scale + shift).matrix(); }
  Value concat(const Value& top, const Value& bottom) {
    Matrix out(top.rows() + bottom.rows(), top.cols());
    out << top, bottom;
    return out;
  }
  Value slice(const Value& x, Index start, Index n) { return x.middleRows(start, n); }
};

struct TapeEngine {
  using Value = ad::Var;
  using Param = ad::Var;

  ad::Tape& tape;

  Value linear(Param w, Param b, Value x) { return tape.add_bias(tape.matmul(w, x), b); }
  Value tanh(Value x) { return tape.tanh(x); }
  Value sigmoid(Value x) { return tape.sigmoid(x); }
  Value exp(Value x) { return tape.exp(x); }
  Value add(Value a, Value b) { return tape.add(a, b); }
  Value sub(Value a, Value b) { return tape.sub(a, b); }
  Value mul(Value a, Value b) { return tape.mul(a, b); }
  Value affine(Value x, double scale, double shift) { return tape.affine(x, scale, shift); }
  Value concat(Value top, Value bottom) { return tape.concat_rows(top, bottom); }
  Value slice(Value x, Index start, Index n) { return tape.slice_rows(x, start, n); }
};

template <class E>
using Weights = std::vector<typename E::Param>;

Weights<EvalEngine> eval_weights(const WorldModel& model) {
  Weights<EvalEngine> w;
  w.reserve(kTensorCount);
  for (int id = 0; id < kTensorCount; ++id) {
    w.emplace_back(model.tensor(static_cast<TensorId>(id)));
  }
  return w;
}

template <class E>
typename E::Value mlp(E& e, const Weights<E>& w, int first, int hidden_layers, typename E::Value x) {
  int id = first;
  for (int layer = 0; layer < hidden_layers; ++layer, id += 2) {
    x = e.tanh(e.linear(w[id], w[id + 1], x));
  }
  return e.linear(w[id], w[id + 1], x);
}

// Gated recurrent cell: h' = h + u * (c - h).
template <class E>
typename E::Value recurrent(E& e, const Weights<E>& w, const typename E::Value& h,
                            const typename E::Value& z, const typename E::Value& action, Index deter) {
  auto input = e.concat(z, action);
  auto gates = e.sigmoid(e.linear(w[kGateW], w[kGateB], e.concat(input, h)));
  auto reset = e.slice(gates, 0, deter);
  auto update = e.slice(gates, deter, deter);
  auto cand = e.tanh(e.linear(w[kCandW], w[kCandB], e.concat(input, e.mul(reset, h))));
  return e.add(h, e.mul(update, e.sub(cand, h)));
}

template <class E>
struct Gaussian {
  typename E::Value mean;
  typename E::Value logstd;
};

// Raw log-std is squashed smoothly into [kLogStdMin, kLogStdMax].
template <class E>
Gaussian<E> split_gaussian(E& e, const typename E::Value& raw, Index stoch) {
  return {e.slice(raw, 0, stoch),
          e.affine(e.sigmoid(e.slice(raw, stoch, stoch)), kLogStdMax - kLogStdMin, kLogStdMin)};
}

template <class E>
Gaussian<E> posterior(E& e, const Weights<E>& w, const typename E::Value& h,
                      const typename E::Value& obs, Index stoch) {
  return split_gaussian(e, mlp(e, w, kEncW0, 2, e.concat(h, obs)), stoch);
}

template <class E>
Gaussian<E> prior(E& e, const Weights<E>& w, const typename E::Value& h, Index stoch) {
  return split_gaussian(e, mlp(e, w, kPriorW0, 2, h), stoch);
}

Matrix draw_noise(Index rows, Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix noise(rows, cols);
  for (Index c = 0; c < cols; ++c) {
    for (Index r = 0; r < rows; ++r) {
      noise(r, c) = normal(rng);
    }
  }
  return noise;
}

LatentBatch finish_latent(Matrix h, Gaussian<EvalEngine> g, std::mt19937_64& rng, LatentMode mode) {
  LatentBatch out;
  out.h = std::move(h);
  if (mode == LatentMode::kMean) {
    out.z = g.mean;
  } else {
    out.z = g.mean + g.logstd.array().exp().matrix().cwiseProduct(draw_noise(g.mean.rows(), g.mean.cols(), rng));
  }
  out.z_mean = std::move(g.mean);
  out.z_logstd = std::move(g.logstd);
  return out;
}

void check_vector(const Vector& v, int expected, const char* what) {
  if (v.size() != expected) {
    throw std::invalid_argument(std::string(what) + " has dimension " + std::to_string(v.size()) +
                                ", model expects " + std::to_string(expected));
  }
}

void check_state(const LatentState& s, const ModelDims& d) {
  check_vector(s.h, d.deter, "latent h");
  check_vector(s.z, d.stoch, "latent z");
  if (!s.h.allFinite() || !s.z.allFinite()) {
    throw std::invalid_argument("latent state is not finite");
  }
}

LatentBatch batch_of(const LatentState& s) {
  return {s.h, s.z, s.z_mean, s.z_logstd};
}

}  // namespace

void ModelDims::validate() const {
  if (obs_dim < 1 || action_dim < 1 || deter < 1 || stoch < 1 || hidden < 1) {
    throw std::invalid_argument("model dims must all be positive");
  }
}

std::string_view segment_name(Segment s) {
  switch (s) {
    case Segment::kEncoder: return "encoder";
    case Segment::kRecurrent: return "recurrent";
    case Segment::kPrior: return "prior";
    case Segment::kDecoder: return "decoder";
    case Segment::kReward: return "reward";
    case Segment::kValue: return "value";
    case Segment::kContinue: return "continue";
  }
  return "?";
}

ParamLayout::ParamLayout(const ModelDims& d) {
  d.validate();
  const Index obs = d.obs_dim, act = d.action_dim, deter = d.deter, stoch = d.stoch, hid = d.hidden;
  const Index feat = deter + stoch;
  const Index rec_in = stoch + act + deter;

  struct Shape {
    const char* name;
    Segment seg;
    Index rows;
    Index cols;
  };
  const std::array<Shape, kTensorCount> shapes = {{
      {"encoder.l0.w", Segment::kEncoder, hid, deter + obs},
      {"encoder.l0.b", Segment::kEncoder, hid, 1},
      {"encoder.l1.w", Segment::kEncoder, hid, hid},
      {"encoder.l1.b", Segment::kEncoder, hid, 1},
      {"encoder.out.w", Segment::kEncoder, 2 * stoch, hid},
      {"encoder.out.b", Segment::kEncoder, 2 * stoch, 1},
      {"recurrent.gates.w", Segment::kRecurrent, 2 * deter, rec_in},
      {"recurrent.gates.b", Segment::kRecurrent, 2 * deter, 1},
      {"recurrent.cand.w", Segment::kRecurrent, deter, rec_in},
      {"recurrent.cand.b", Segment::kRecurrent, deter, 1},
      {"prior.l0.w", Segment::kPrior, hid, deter},
      {"prior.l0.b", Segment::kPrior, hid, 1},
      {"prior.l1.w", Segment::kPrior, hid, hid},
      {"prior.l1.b", Segment::kPrior, hid, 1},
      {"prior.out.w", Segment::kPrior, 2 * stoch, hid},
      {"prior.out.b", Segment::kPrior, 2 * stoch, 1},
      {"decoder.l0.w", Segment::kDecoder, hid, feat},
      {"decoder.l0.b", Segment::kDecoder, hid, 1},
      {"decoder.l1.w", Segment::kDecoder, hid, hid},
      {"decoder.l1.b", Segment::kDecoder, hid, 1},
      {"decoder.out.w", Segment::kDecoder, obs, hid},
      {"decoder.out.b", Segment::kDecoder, obs, 1},
      {"reward.l0.w", Segment::kReward, hid, feat},
      {"reward.l0.b", Segment::kReward, hid, 1},
      {"reward.out.w", Segment::kReward, 1, hid},
      {"reward.out.b", Segment::kReward, 1, 1},
      {"value.l0.w", Segment::kValue, hid, feat},
      {"value.l0.b", Segment::kValue, hid, 1},
      {"value.out.w", Segment::kValue, 1, hid},
      {"value.out.b", Segment::kValue, 1, 1},
      {"continue.l0.w", Segment::kContinue, hid, feat},
      {"continue.l0.b", Segment::kContinue, hid, 1},
      {"continue.out.w", Segment::kContinue, 1, hid},
      {"continue.out.b", Segment::kContinue, 1, 1},
  }};

  std::size_t offset = 0;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const Shape& s = shapes[i];
    tensors_[i] = TensorSpec{s.name, s.seg, s.rows, s.cols, offset};
    SegmentRange& range = segments_[static_cast<std::size_t>(s.seg)];
    if (range.size == 0) {
      range.offset = offset;
    }
    range.size += tensors_[i].size();
    offset += tensors_[i].size();
  }
  total_ = offset;
}

WorldModel::WorldModel(const ModelDims& dims)
    : dims_(dims), layout_(dims), params_(Vector::Zero(static_cast<Index>(layout_.size()))) {}

WorldModel WorldModel::initialized(const ModelDims& dims, std::uint64_t seed) {
  WorldModel model(dims);
  std::mt19937_64 rng(seed);
  for (const TensorSpec& spec : model.layout().tensors()) {
    if (spec.cols == 1) {
      continue;  // biases start at zero
    }
    const double limit = std::sqrt(6.0 / static_cast<double>(spec.rows + spec.cols));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (std::size_t k = 0; k < spec.size(); ++k) {
      model.params_[static_cast<Index>(spec.offset + k)] = dist(rng);
    }
  }
  return model;
}

Eigen::Map<const Matrix> WorldModel::tensor(TensorId id) const {
  const TensorSpec& s = layout_.tensor(id);
  return {params_.data() + s.offset, s.rows, s.cols};
}

Eigen::Map<Matrix> WorldModel::tensor(TensorId id) {
  const TensorSpec& s = layout_.tensor(id);
  return {params_.data() + s.offset, s.rows, s.cols};
}

LatentState LatentState::zeros(const ModelDims& d) {
  return {Vector::Zero(d.deter), Vector::Zero(d.stoch), Vector::Zero(d.stoch), Vector::Zero(d.stoch)};
}

LatentBatch LatentBatch::broadcast(const LatentState& s, Index n) {
  return {s.h.replicate(1, n), s.z.replicate(1, n), s.z_mean.replicate(1, n), s.z_logstd.replicate(1, n)};
}

LatentState LatentBatch::column(Index i) const {
  return {h.col(i), z.col(i), z_mean.col(i), z_logstd.col(i)};
}

LatentState observe_step(const WorldModel& model, const LatentState& prev, const Vector& action,
                         const Vector& observation, std::mt19937_64& rng, LatentMode mode) {
  const ModelDims& d = model.dims();
  check_state(prev, d);
  check_vector(action, d.action_dim, "action");
  check_vector(observation, d.obs_dim, "observation");
  EvalEngine e;
  const auto w = eval_weights(model);
  Matrix h = recurrent(e, w, Matrix(prev.h), Matrix(prev.z), Matrix(action), d.deter);
  auto g = posterior(e, w, h, Matrix(observation), d.stoch);
  return finish_latent(std::move(h), std::move(g), rng, mode).column(0);
}

LatentBatch imagine_step(const WorldModel& model, const LatentBatch& prev, const Matrix& actions,
                         std::mt19937_64& rng, LatentMode mode) {
  const ModelDims& d = model.dims();
  if (prev.h.rows() != d.deter || prev.z.rows() != d.stoch || actions.rows() != d.action_dim ||
      actions.cols() != prev.size()) {
    throw std::invalid_argument("imagine_step: batch dimensions do not match the model");
  }
  EvalEngine e;
  const auto w = eval_weights(model);
  Matrix h = recurrent(e, w, prev.h, prev.z, actions, d.deter);
  auto g = prior(e, w, h, d.stoch);
  return finish_latent(std::move(h), std::move(g), rng, mode);
}

LatentState imagine_step(const WorldModel& model, const LatentState& prev, const Vector& action,
                         std::mt19937_64& rng, LatentMode mode) {
  check_state(prev, model.dims());
  check_vector(action, model.dims().action_dim, "action");
  return imagine_step(model, batch_of(prev), Matrix(action), rng, mode).column(0);
}

HeadOutputs predict_heads(const WorldModel& model, const LatentState& s) {
  check_state(s, model.dims());
  EvalEngine e;
  const auto w = eval_weights(model);
  const Matrix feat = e.concat(s.h, s.z);
  HeadOutputs out;
  out.reward = mlp(e, w, kRewardW0, 1, feat)(0, 0);
  out.value = mlp(e, w, kValueW0, 1, feat)(0, 0);
  out.continue_prob = ad::sigmoid(mlp(e, w, kContW0, 1, feat)(0, 0));
  out.observation = mlp(e, w, kDecW0, 2, feat).col(0);
  return out;
}

RowVector predict_reward(const WorldModel& model, const LatentBatch& s) {
  EvalEngine e;
  const auto w = eval_weights(model);
  return mlp(e, w, kRewardW0, 1, e.concat(s.h, s.z)).row(0);
}

LossEvaluation evaluate_loss(const WorldModel& model, Batch batch, std::uint64_t noise_seed,
                             const TrainConfig& cfg, std::optional<LossComponent> grad_of,
                             const StoppedInputs* frozen) {
  const ModelDims& d = model.dims();
  if (batch.empty()) {
    throw std::invalid_argument("evaluate_loss: empty batch");
  }
  const Index B = static_cast<Index>(batch.size());
  const Index T = static_cast<Index>(batch.front()->length());
  const Index O = d.obs_dim;
  const Index A = d.action_dim;
  if (T == 0) {
    throw std::invalid_argument("evaluate_loss: zero-length trajectories");
  }

  std::vector<Matrix> obs(static_cast<std::size_t>(T), Matrix(O, B));
  std::vector<Matrix> act(static_cast<std::size_t>(T), Matrix(A, B));
  Matrix reward(T, B), terminal(T, B), first(T, B);
  for (Index b = 0; b < B; ++b) {
    const replay::Trajectory& traj = *batch[static_cast<std::size_t>(b)];
    if (static_cast<Index>(traj.length()) != T) {
      throw std::invalid_argument("evaluate_loss: trajectories in a batch must share T_seq");
    }
    for (Index t = 0; t < T; ++t) {
      const replay::Transition& tr = traj.transitions[static_cast<std::size_t>(t)];
      if (static_cast<Index>(tr.observation.size()) != O || static_cast<Index>(tr.action.size()) != A) {
        throw std::invalid_argument("evaluate_loss: transition dimensions do not match the model");
      }
      for (Index i = 0; i < O; ++i) obs[static_cast<std::size_t>(t)](i, b) = tr.observation[static_cast<std::size_t>(i)];
      for (Index i = 0; i < A; ++i) act[static_cast<std::size_t>(t)](i, b) = tr.action[static_cast<std::size_t>(i)];
      reward(t, b) = cfg.mixed_value_target ? tr.reward_total : tr.reward_ext;
      terminal(t, b) = tr.is_terminal ? 1.0 : 0.0;
      first(t, b) = tr.is_first ? 1.0 : 0.0;
    }
  }
  // The reward head always regresses the environment reward.
  Matrix reward_ext(T, B);
  for (Index b = 0; b < B; ++b) {
    for (Index t = 0; t < T; ++t) {
      reward_ext(t, b) = batch[static_cast<std::size_t>(b)]->transitions[static_cast<std::size_t>(t)].reward_ext;
    }
  }

  ad::Tape tape;
  tape.reserve(static_cast<std::size_t>(T) * 96 + kTensorCount + 16);
  TapeEngine e{tape};
  Weights<TapeEngine> w;
  w.reserve(kTensorCount);
  for (int id = 0; id < kTensorCount; ++id) {
    w.push_back(tape.parameter(Matrix(model.tensor(static_cast<TensorId>(id)))));
  }

  std::mt19937_64 rng(noise_seed);
  const double inv_bt = 1.0 / static_cast<double>(B * T);
  const Matrix recon_w = Matrix::Constant(O, B, inv_bt / static_cast<double>(O));
  const Matrix step_w = Matrix::Constant(1, B, inv_bt);
  const Matrix dyn_w = Matrix::Constant(d.stoch, B, inv_bt / (2.0 * d.stoch));

  ad::Var h = tape.constant(Matrix::Zero(d.deter, B));
  ad::Var z = tape.constant(Matrix::Zero(d.stoch, B));
  std::vector<ad::Var> recon_terms, reward_terms, cont_terms, dyn_terms, values;
  Matrix step_recon(T, B);
  StoppedInputs stopped;
  if (frozen && (static_cast<Index>(frozen->posterior_mean.size()) != T ||
                 frozen->value_target.rows() != T || frozen->value_target.cols() != B)) {
    throw std::invalid_argument("evaluate_loss: frozen inputs do not match the batch");
  }

  for (Index t = 0; t < T; ++t) {
    const Eigen::RowVectorXd keep = (1.0 - first.row(t).array()).matrix();
    const ad::Var h_prev = tape.mul_const(h, keep.replicate(d.deter, 1));
    const ad::Var z_prev = tape.mul_const(z, keep.replicate(d.stoch, 1));
    h = recurrent(e, w, h_prev, z_prev, tape.constant(act[static_cast<std::size_t>(t)]), d.deter);

    const ad::Var o = tape.constant(obs[static_cast<std::size_t>(t)]);
    const auto post = posterior(e, w, h, o, d.stoch);
    z = tape.add(post.mean, tape.mul(tape.exp(post.logstd), tape.constant(draw_noise(d.stoch, B, rng))));
    const auto pri = prior(e, w, h, d.stoch);
    const ad::Var feat = tape.concat_rows(h, z);

    const ad::Var sq_err = tape.square(tape.sub(mlp(e, w, kDecW0, 2, feat), o));
    recon_terms.push_back(tape.weighted_sum(sq_err, recon_w));
    step_recon.row(t) = tape.value(sq_err).colwise().mean();

    const ad::Var r_hat = mlp(e, w, kRewardW0, 1, feat);
    reward_terms.push_back(tape.weighted_sum(
        tape.square(tape.sub(r_hat, tape.constant(reward_ext.row(t)))), step_w));

    values.push_back(mlp(e, w, kValueW0, 1, feat));

    // BCE with logits: softplus(x) - y * x, y = 1 - terminal.
    const ad::Var logit = mlp(e, w, kContW0, 1, feat);
    cont_terms.push_back(tape.weighted_sum(tape.softplus(logit), step_w));
    cont_terms.push_back(tape.weighted_sum(logit, -(1.0 - terminal.row(t).array()).matrix() * inv_bt));

    stopped.posterior_mean.push_back(tape.value(post.mean));
    stopped.posterior_logstd.push_back(tape.value(post.logstd));
    const auto ts = static_cast<std::size_t>(t);
    const ad::Var q_mean = frozen ? tape.constant(frozen->posterior_mean[ts]) : tape.detach(post.mean);
    const ad::Var q_logstd = frozen ? tape.constant(frozen->posterior_logstd[ts]) : tape.detach(post.logstd);
    dyn_terms.push_back(tape.weighted_sum(tape.square(tape.sub(pri.mean, q_mean)), dyn_w));
    dyn_terms.push_back(tape.weighted_sum(tape.square(tape.sub(pri.logstd, q_logstd)), dyn_w));
  }

  // n-step bootstrapped value targets from the detached value predictions.
  Matrix v(T, B);
  for (Index t = 0; t < T; ++t) v.row(t) = tape.value(values[static_cast<std::size_t>(t)]);
  Matrix target = Matrix::Zero(T, B), mask = Matrix::Zero(T, B);
  for (Index b = 0; b < B; ++b) {
    for (Index t = 0; t < T; ++t) {
      if (terminal(t, b) > 0.5) {
        mask(t, b) = 1.0;  // terminal states are worth nothing
        continue;
      }
      double g = 0.0, disc = 1.0;
      bool valid = false;
      for (int k = 1; k <= cfg.value_horizon; ++k) {
        const Index idx = t + k;
        if (idx >= T || first(idx, b) > 0.5) {
          if (valid) g += disc * v(idx - 1, b);
          break;
        }
        g += disc * reward(idx, b);
        disc *= cfg.discount;
        valid = true;
        if (terminal(idx, b) > 0.5) break;
        if (k == cfg.value_horizon) g += disc * v(idx, b);
      }
      if (valid) {
        target(t, b) = g;
        mask(t, b) = 1.0;
      }
    }
  }
  stopped.value_target = target;
  stopped.value_mask = mask;
  if (frozen) {
    target = frozen->value_target;
    mask = frozen->value_mask;
  }
  const double n_valid = mask.sum();
  std::vector<ad::Var> value_terms;
  if (n_valid > 0.0) {
    for (Index t = 0; t < T; ++t) {
      value_terms.push_back(tape.weighted_sum(
          tape.square(tape.sub(values[static_cast<std::size_t>(t)], tape.constant(target.row(t)))),
          mask.row(t) / n_valid));
    }
  }

  auto sum = [&tape](const std::vector<ad::Var>& terms) {
    if (terms.empty()) return tape.constant(Matrix::Zero(1, 1));
    ad::Var acc = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) acc = tape.add(acc, terms[i]);
    return acc;
  };
  const ad::Var recon = sum(recon_terms);
  const ad::Var rew = sum(reward_terms);
  const ad::Var val = sum(value_terms);
  const ad::Var cont = sum(cont_terms);
  const ad::Var dyn = sum(dyn_terms);
  const ad::Var total =
      tape.add(tape.add(tape.add(tape.add(recon, rew), val), cont), tape.affine(dyn, cfg.beta_dyn, 0.0));

  LossEvaluation out;
  out.stopped = std::move(stopped);
  out.losses = {tape.scalar(recon), tape.scalar(rew), tape.scalar(val),
                tape.scalar(dyn),   tape.scalar(cont), tape.scalar(total)};
  out.signals.resize(static_cast<std::size_t>(B));
  for (Index b = 0; b < B; ++b) {
    SequenceSignals& s = out.signals[static_cast<std::size_t>(b)];
    s.recon_error = step_recon.col(b).mean();
    const double count = mask.col(b).sum();
    s.value_error = count > 0.0
                        ? ((target.col(b) - v.col(b)).cwiseAbs().cwiseProduct(mask.col(b))).sum() / count
                        : 0.0;
  }

  if (grad_of) {
    ad::Var root = total;
    switch (*grad_of) {
      case LossComponent::kRecon: root = recon; break;
      case LossComponent::kReward: root = rew; break;
      case LossComponent::kValue: root = val; break;
      case LossComponent::kDynamics: root = dyn; break;
      case LossComponent::kContinue: root = cont; break;
      case LossComponent::kTotal: root = total; break;
    }
    out.gradient = Vector::Zero(static_cast<Index>(model.layout().size()));
    if (tape.requires_grad(root)) {
      tape.backward(root);
      for (int id = 0; id < kTensorCount; ++id) {
        const Matrix& g = tape.grad(w[static_cast<std::size_t>(id)]);
        if (g.size() == 0) continue;
        const TensorSpec& spec = model.layout().tensor(static_cast<TensorId>(id));
        out.gradient.segment(static_cast<Index>(spec.offset), static_cast<Index>(spec.size())) =
            Eigen::Map<const Vector>(g.data(), g.size());
      }
    }
  }
  return out;
}

TrainOutcome train_batch(WorldModel& model, AdamState& opt, Batch batch, std::mt19937_64& rng,
                         const TrainConfig& cfg) {
  const auto n = static_cast<Index>(model.layout().size());
  if (opt.m.size() != n || opt.v.size() != n) {
    throw std::invalid_argument("train_batch: optimizer state does not match the model");
  }
  const std::uint64_t noise_seed = rng();
  LossEvaluation eval = evaluate_loss(model, batch, noise_seed, cfg, LossComponent::kTotal);

  TrainOutcome out;
  out.losses = eval.losses;
  out.signals = std::move(eval.signals);
  Vector& g = eval.gradient;
  out.grad_norm = g.norm();
  if (!std::isfinite(eval.losses.total) || !std::isfinite(out.grad_norm)) {
    ++opt.rejected_steps;
    return out;
  }
  if (out.grad_norm > cfg.grad_clip) {
    g *= cfg.grad_clip / out.grad_norm;
  }
  ++opt.step;
  const double t = static_cast<double>(opt.step);
  opt.m = cfg.beta1 * opt.m + (1.0 - cfg.beta1) * g;
  opt.v = cfg.beta2 * opt.v + (1.0 - cfg.beta2) * g.cwiseAbs2();
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  model.params().array() -=
      cfg.learning_rate * (opt.m.array() / c1) / ((opt.v.array() / c2).sqrt() + cfg.adam_epsilon);
  out.applied = true;
  return out;
}

void write_checkpoint(std::ostream& out, const WorldModel& model, const AdamState& opt) {
  const ModelDims& d = model.dims();
  io::write_magic(out, kCheckpointMagic);
  io::write_pod<std::uint32_t>(out, kCheckpointVersion);
  for (const int v : {d.obs_dim, d.action_dim, d.deter, d.stoch, d.hidden}) {
    io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(v));
  }
  io::write_pod<std::uint64_t>(out, opt.step);
  io::write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(model.params().size()));
  const auto write_vec = [&out](const Vector& v) {
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  };
  write_vec(model.params());
  write_vec(opt.m);
  write_vec(opt.v);
}

std::pair<WorldModel, AdamState> read_checkpoint(std::istream& in) {
  io::expect_magic(in, kCheckpointMagic);
  const auto version = io::read_pod<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw io::FormatError("unsupported model checkpoint version " + std::to_string(version));
  }
  ModelDims d;
  d.obs_dim = static_cast<int>(io::read_pod<std::uint32_t>(in));
  d.action_dim = static_cast<int>(io::read_pod<std::uint32_t>(in));
  d.deter = static_cast<int>(io::read_pod<std::uint32_t>(in));
  d.stoch = static_cast<int>(io::read_pod<std::uint32_t>(in));
  d.hidden = static_cast<int>(io::read_pod<std::uint32_t>(in));
  WorldModel model(d);
  AdamState opt(model.layout().size());
  opt.step = io::read_pod<std::uint64_t>(in);
  const auto count = io::read_pod<std::uint64_t>(in);
  if (count != model.layout().size()) {
    throw io::FormatError("checkpoint parameter count does not match its dims");
  }
  const auto read_vec = [&in](Vector& v) {
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!in) throw io::FormatError("truncated model checkpoint");
  };
  read_vec(model.params());
  read_vec(opt.m);
  read_vec(opt.v);
  return {std::move(model), std::move(opt)};
}

void save_checkpoint(const WorldModel& model, const AdamState& opt, const std::filesystem::path& path) {
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    write_checkpoint(out, model, opt);
  }
  const ModelDims& d = model.dims();
  nlohmann::json sidecar = {
      {"format", kCheckpointMagic},
      {"version", kCheckpointVersion},
      {"dims",
       {{"obs_dim", d.obs_dim}, {"action_dim", d.action_dim}, {"deter", d.deter}, {"stoch", d.stoch},
        {"hidden", d.hidden}}},
      {"param_count", model.layout().size()},
      {"scalar", "float64"},
      {"step", opt.step},
  };
  std::ofstream side(path.string() + ".json", std::ios::trunc);
  side << sidecar.dump(2) << '\n';
}

std::pair<WorldModel, AdamState> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_checkpoint(in);
}

}  // namespace dxp::wm
