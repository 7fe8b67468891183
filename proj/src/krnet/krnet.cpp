#include "vaekrnet/krnet/krnet.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

#include "vaekrnet/numerics/gaussian.hpp"

namespace vkr {

using namespace ops;

namespace {
constexpr std::size_t kChunkRows = 8192;
}

std::vector<std::size_t> even_schedule(std::size_t n, std::size_t blocks) {
  if (blocks == 0 || blocks > n) {
    throw std::invalid_argument("schedule: block count " + std::to_string(blocks) + " must lie in [1, " +
                                std::to_string(n) + "]");
  }
  std::vector<std::size_t> counts(blocks);
  for (std::size_t i = 0; i < blocks; ++i) {
    const double removed = std::round(static_cast<double>(i * n) / static_cast<double>(blocks));
    counts[i] = n - static_cast<std::size_t>(removed);
  }
  return counts;
}

KRnetConfig make_krnet_config(std::size_t n, std::size_t blocks, std::size_t depth, std::size_t hidden) {
  KRnetConfig c;
  c.dim = n;
  c.blocks = blocks;
  c.depth = depth;
  c.hidden = hidden;
  c.schedule = even_schedule(n, blocks);
  return c;
}

void validate(const KRnetConfig& c) {
  if (c.dim == 0) throw std::invalid_argument("krnet: dimension must be positive");
  if (c.blocks == 0 || c.blocks > c.dim) {
    throw std::invalid_argument("krnet: block count K=" + std::to_string(c.blocks) + " must lie in [1, n=" +
                                std::to_string(c.dim) + "]");
  }
  if (c.depth == 0) throw std::invalid_argument("krnet: depth L must be positive");
  if (c.hidden == 0) throw std::invalid_argument("krnet: hidden width must be positive");
  if (c.schedule.size() != c.blocks) {
    throw std::invalid_argument("krnet: schedule has " + std::to_string(c.schedule.size()) + " entries, expected K=" +
                                std::to_string(c.blocks));
  }
  if (c.schedule.front() != c.dim) throw std::invalid_argument("krnet: schedule must start at n");
  for (std::size_t i = 1; i < c.schedule.size(); ++i) {
    if (c.schedule[i] >= c.schedule[i - 1]) throw std::invalid_argument("krnet: schedule must strictly decrease");
  }
  if (c.schedule.back() < 1) throw std::invalid_argument("krnet: every stage needs an active dimension");
  if (!(c.alpha > 0.0 && c.alpha < 1.0)) throw std::invalid_argument("krnet: alpha must lie in (0, 1)");
  if (c.nonlinear && (!(c.nonlinear_cutoff > 0.0) || c.nonlinear_bins == 0)) {
    throw std::invalid_argument("krnet: invalid nonlinear layer settings");
  }
}

KRnet::KRnet(const KRnetConfig& config, Rng& rng, const std::string& name) : config_(config) {
  validate(config_);
  const std::size_t stages = config_.blocks == 1 ? 1 : config_.blocks - 1;
  auto add = [this](FlowLayerPtr layer, std::size_t offset) { steps_.push_back({std::move(layer), offset}); };
  for (std::size_t s = 0; s < stages; ++s) {
    const std::size_t k = config_.schedule[s];
    const std::size_t next = config_.blocks == 1 ? k : config_.schedule[s + 1];
    const std::string stage = name + ".s" + std::to_string(s);
    if (config_.rotation) add(std::make_unique<RotationLU>(k, stage + ".rot"), 0);
    for (std::size_t l = 0; l < config_.depth; ++l) {
      const std::string inner = stage + ".l" + std::to_string(l);
      add(std::make_unique<ScaleBias>(k, inner + ".sb"), 0);
      CouplingConfig cc{k, config_.hidden, static_cast<int>(l % 2), config_.alpha};
      add(std::make_unique<AffineCoupling>(cc, rng, inner + ".cp"), 0);
    }
    if (config_.nonlinear && next < k) {
      NonlinearConfig nc{k - next, config_.nonlinear_cutoff, config_.nonlinear_bins, 1e-6};
      add(std::make_unique<NonlinearInvertible>(nc, stage + ".nl"), next);
    }
    stage_end_.push_back(steps_.size());
  }
  if (config_.nonlinear) {
    NonlinearConfig nc{config_.schedule.back(), config_.nonlinear_cutoff, config_.nonlinear_bins, 1e-6};
    add(std::make_unique<NonlinearInvertible>(nc, name + ".final.nl"), 0);
    stage_end_.back() = steps_.size();
  }
}

KRnet::KRnet(const KRnet& other) : config_(other.config_), stage_end_(other.stage_end_) {
  steps_.reserve(other.steps_.size());
  for (const Step& s : other.steps_) steps_.push_back({s.layer->clone(), s.offset});
}

KRnet& KRnet::operator=(const KRnet& other) {
  if (this != &other) *this = KRnet(other);
  return *this;
}

FlowResult KRnet::apply(Tape& tape, const Var& in, std::size_t step, bool inverse) const {
  const Step& s = steps_[step];
  if (s.offset == 0) return inverse ? s.layer->inverse(tape, in) : s.layer->forward(tape, in);
  const Var head = slice_cols(in, 0, s.offset);
  const Var rest = slice_cols(in, s.offset, in.cols() - s.offset);
  FlowResult r = inverse ? s.layer->inverse(tape, rest) : s.layer->forward(tape, rest);
  r.out = concat_cols({head, r.out});
  return r;
}

FlowResult KRnet::run(Tape& tape, const Var& in, std::size_t first, std::size_t last, bool inverse) const {
  if (in.cols() != config_.dim) {
    throw std::invalid_argument("krnet: input has " + std::to_string(in.cols()) + " columns, expected " +
                                std::to_string(config_.dim));
  }
  Var cur = in;
  Var logdet = tape.constant(Tensor::matrix(in.rows(), 1));
  const std::size_t begin = first == 0 ? 0 : stage_end_[first - 1];
  const std::size_t end = stage_end_[last - 1];
  for (std::size_t k = 0; k < end - begin; ++k) {
    const std::size_t i = inverse ? end - 1 - k : begin + k;
    FlowResult r = apply(tape, cur, i, inverse);
    cur = r.out;
    logdet = logdet + r.logdet;
  }
  return {cur, logdet};
}

FlowResult KRnet::forward(Tape& tape, const Var& y) const { return run(tape, y, 0, stage_count(), false); }
FlowResult KRnet::inverse(Tape& tape, const Var& z) const { return run(tape, z, 0, stage_count(), true); }

Var KRnet::log_pdf(Tape& tape, const Var& y) const {
  const FlowResult r = forward(tape, y);
  return std_normal_log_pdf(r.out) + r.logdet;
}

namespace {
template <typename Fn>
FlowValues chunked(const Tensor& in, std::size_t out_cols, Fn&& fn) {
  const std::size_t rows = in.rows(), cols = in.cols();
  FlowValues all{Tensor::matrix(rows, out_cols), Tensor::matrix(rows, 1)};
  for (std::size_t start = 0; start < rows; start += kChunkRows) {
    const std::size_t count = std::min(kChunkRows, rows - start);
    Tensor part = Tensor::matrix(count, cols);
    part.matrix() = in.matrix().middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count));
    Tape tape;
    const FlowResult r = fn(tape, tape.constant(std::move(part)));
    all.out.matrix().middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count)) =
        r.out.value().matrix();
    all.logdet.matrix().middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count)) =
        r.logdet.value().matrix();
  }
  return all;
}
}  // namespace

FlowValues KRnet::forward(const Tensor& y) const {
  return chunked(y, config_.dim, [this](Tape& t, const Var& v) { return forward(t, v); });
}

FlowValues KRnet::inverse(const Tensor& z) const {
  return chunked(z, config_.dim, [this](Tape& t, const Var& v) { return inverse(t, v); });
}

Tensor KRnet::log_pdf(const Tensor& y) const {
  return chunked(y, 1, [this](Tape& t, const Var& v) {
           return FlowResult{log_pdf(t, v), t.constant(Tensor::matrix(v.rows(), 1))};
         }).out;
}

Tensor KRnet::sample(std::size_t count, Rng& rng) const {
  const Tensor z = gauss_sample(rng, {count, config_.dim});
  return inverse(z).out;
}

Tensor KRnet::forward_stages(const Tensor& y, std::size_t first, std::size_t last) const {
  if (first > last || last > stage_count()) throw std::invalid_argument("krnet: stage range out of bounds");
  if (first == last) return y;
  Tape tape;
  return run(tape, tape.constant(y), first, last, false).out.value();
}

void KRnet::initialize(const Tensor& batch) {
  if (batch.cols() != config_.dim) throw std::invalid_argument("krnet init: batch width mismatch");
  Tensor cur = batch;
  for (std::size_t i = 0; i < steps_.size(); ++i) {
    Step& s = steps_[i];
    if (s.layer->needs_init()) {
      Tensor active = Tensor::matrix(cur.rows(), s.layer->width());
      active.matrix() = cur.matrix().middleCols(static_cast<Eigen::Index>(s.offset),
                                                static_cast<Eigen::Index>(s.layer->width()));
      s.layer->initialize(active);
    }
    Tape tape;
    cur = apply(tape, tape.constant(cur), i, false).out.value();
  }
}

void KRnet::initialize_identity() {
  for (Step& s : steps_) {
    if (s.layer->needs_init()) s.layer->initialize_identity();
  }
}

bool KRnet::initialized() const {
  for (const Step& s : steps_) {
    if (s.layer->needs_init()) return false;
  }
  return true;
}

ParameterList KRnet::parameters() {
  ParameterList out;
  for (Step& s : steps_) {
    for (Parameter* p : s.layer->parameters()) out.push_back(p);
  }
  return out;
}

ConstParameterList KRnet::parameters() const {
  ConstParameterList out;
  for (const Step& s : steps_) {
    for (const Parameter* p : std::as_const(*s.layer).parameters()) out.push_back(p);
  }
  return out;
}

void KRnet::save(Manifest& m, const std::string& prefix) const {
  m.set(prefix + "dim", config_.dim);
  m.set(prefix + "blocks", config_.blocks);
  m.set(prefix + "depth", config_.depth);
  m.set(prefix + "hidden", config_.hidden);
  m.set_sizes(prefix + "schedule", config_.schedule);
  m.set(prefix + "rotation", config_.rotation);
  m.set(prefix + "nonlinear", config_.nonlinear);
  m.set(prefix + "nonlinear_cutoff", config_.nonlinear_cutoff);
  m.set(prefix + "nonlinear_bins", config_.nonlinear_bins);
  m.set(prefix + "alpha", config_.alpha);
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < steps_.size(); ++i) {
    if (steps_[i].layer->needs_init()) pending.push_back(i);
  }
  m.set_sizes(prefix + "uninitialized_layers", pending);
  m.add_parameters(parameters());
}

KRnetConfig KRnet::config_from(const Manifest& m, const std::string& prefix) {
  KRnetConfig c;
  c.dim = m.get_size(prefix + "dim");
  c.blocks = m.get_size(prefix + "blocks");
  c.depth = m.get_size(prefix + "depth");
  c.hidden = m.get_size(prefix + "hidden");
  c.schedule = m.get_sizes(prefix + "schedule");
  c.rotation = m.get_bool(prefix + "rotation");
  c.nonlinear = m.get_bool(prefix + "nonlinear");
  c.nonlinear_cutoff = m.get_double(prefix + "nonlinear_cutoff");
  c.nonlinear_bins = m.get_size(prefix + "nonlinear_bins");
  c.alpha = m.get_double(prefix + "alpha");
  return c;
}

void KRnet::load(const Manifest& m, std::size_t& cursor, const std::string& prefix) {
  m.load_parameters(parameters(), cursor);
  const std::vector<std::size_t> pending = m.get_sizes(prefix + "uninitialized_layers");
  std::size_t next = 0;
  for (std::size_t i = 0; i < steps_.size(); ++i) {
    auto* sb = dynamic_cast<ScaleBias*>(steps_[i].layer.get());
    if (!sb) continue;
    const bool uninit = next < pending.size() && pending[next] == i;
    if (uninit) {
      ++next;
    } else {
      sb->set(sb->scale().value, sb->bias().value);
    }
  }
  if (next != pending.size()) throw ManifestError("krnet: uninitialized layer list does not match the model");
}

}  // namespace vkr
