// SPDX-License-Identifier: Apache-2.0
#include "cpl/model/model.hpp"

#include <algorithm>
#include <cmath>

#include "cpl/common/binary_io.hpp"
#include "cpl/common/error.hpp"
#include "cpl/common/rng.hpp"
#include "cpl/numcore/ops.hpp"

namespace cpl::model {

using num::Tape;
using num::Tensor;
using num::Var;

namespace {

constexpr double kLayerNormEps = 1e-5;

Tensor fan_in_uniform(Rng& rng, std::size_t rows, std::size_t cols) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  std::vector<double> data(rows * cols);
  for (double& v : data) v = rng.uniform(-bound, bound);
  return Tensor({rows, cols}, std::move(data));
}

void expect_shape(const Tensor& t, std::size_t rows, std::size_t cols, const std::string& name) {
  require(t.rank() == 2 && t.rows() == rows && t.cols() == cols, ErrorCode::dimension,
          "projector block " + name + " has shape " + num::shape_string(t.shape()) + ", expected [" +
              std::to_string(rows) + "x" + std::to_string(cols) + "]");
}

}  // namespace

ProjectorConfig ProjectorConfig::resolved() const {
  ProjectorConfig c = *this;
  require(c.text_dim >= 1, ErrorCode::contract, "projector needs a positive text dimension");
  require(!c.channel_dims.empty(), ErrorCode::contract, "projector needs at least one visual level");
  for (auto ch : c.channel_dims) require(ch >= 1, ErrorCode::contract, "visual level with zero channels");
  if (c.model_dim == 0) c.model_dim = c.text_dim;
  if (c.ff_dim == 0) c.ff_dim = 4 * c.model_dim;
  require(c.heads >= 1 && c.model_dim % c.heads == 0, ErrorCode::contract,
          "head count " + std::to_string(c.heads) + " must divide d_m=" + std::to_string(c.model_dim));
  return c;
}

ProjectorParams ProjectorParams::initialize(const ProjectorConfig& config, std::uint64_t seed) {
  ProjectorParams p;
  p.config = config.resolved();
  const ProjectorConfig& c = p.config;
  Rng rng(mix_seed(seed, stable_hash("projector")));
  const std::size_t dm = c.model_dim, dk = c.head_dim(), q = c.channel_dims.size();
  for (auto ch : c.channel_dims) p.in_proj.push_back(fan_in_uniform(rng, ch, dm));
  p.level_embedding = fan_in_uniform(rng, q, dm);
  p.query_proj = fan_in_uniform(rng, c.text_dim, dm);
  for (std::uint32_t h = 0; h < c.heads; ++h) {
    p.w_q.push_back(fan_in_uniform(rng, dm, dk));
    p.w_k.push_back(fan_in_uniform(rng, dm, dk));
    p.w_v.push_back(fan_in_uniform(rng, dm, dk));
    p.w_o.push_back(fan_in_uniform(rng, dk, dm));
  }
  p.ln1_gain = Tensor({dm}, 1.0);
  p.ln1_bias = Tensor({dm}, 0.0);
  p.ln2_gain = Tensor({dm}, 1.0);
  p.ln2_bias = Tensor({dm}, 0.0);
  p.ff_in = fan_in_uniform(rng, dm, c.ff_dim);
  p.ff_out = fan_in_uniform(rng, c.ff_dim, dm);
  p.out_proj = fan_in_uniform(rng, dm, c.text_dim);
  return p;
}

void ProjectorParams::validate() const {
  const ProjectorConfig c = config.resolved();
  require(c == config, ErrorCode::contract, "projector config is not resolved");
  const std::size_t dm = c.model_dim, dk = c.head_dim();
  require(in_proj.size() == c.channel_dims.size(), ErrorCode::dimension, "projector level count mismatch");
  require(w_q.size() == c.heads && w_k.size() == c.heads && w_v.size() == c.heads && w_o.size() == c.heads,
          ErrorCode::dimension, "projector head count mismatch");
  for (std::size_t q = 0; q < in_proj.size(); ++q) expect_shape(in_proj[q], c.channel_dims[q], dm, "in_proj");
  expect_shape(level_embedding, c.channel_dims.size(), dm, "level_embedding");
  expect_shape(query_proj, c.text_dim, dm, "query_proj");
  for (std::size_t h = 0; h < c.heads; ++h) {
    expect_shape(w_q[h], dm, dk, "w_q");
    expect_shape(w_k[h], dm, dk, "w_k");
    expect_shape(w_v[h], dm, dk, "w_v");
    expect_shape(w_o[h], dk, dm, "w_o");
  }
  for (const Tensor* t : {&ln1_gain, &ln1_bias, &ln2_gain, &ln2_bias}) {
    require(t->numel() == dm, ErrorCode::dimension, "layer norm parameters must have d_m entries");
  }
  expect_shape(ff_in, dm, c.ff_dim, "ff_in");
  expect_shape(ff_out, c.ff_dim, dm, "ff_out");
  expect_shape(out_proj, dm, c.text_dim, "out_proj");
  visit([](const std::string& name, const Tensor& t) {
    require(t.all_finite(), ErrorCode::non_finite, "projector block " + name + " is not finite");
  });
}

std::size_t ProjectorParams::parameter_count() const {
  std::size_t n = 0;
  visit([&](const std::string&, const Tensor& t) { n += t.numel(); });
  return n;
}

bool operator==(const ProjectorParams& a, const ProjectorParams& b) {
  if (!(a.config == b.config)) return false;
  std::vector<const Tensor*> lhs, rhs;
  a.visit([&](const std::string&, const Tensor& t) { lhs.push_back(&t); });
  b.visit([&](const std::string&, const Tensor& t) { rhs.push_back(&t); });
  if (lhs.size() != rhs.size()) return false;
  for (std::size_t i = 0; i < lhs.size(); ++i) {
    if (!(*lhs[i] == *rhs[i])) return false;
  }
  return true;
}

ProjectorVars bind(Tape& tape, const ProjectorParams& params, bool trainable) {
  ProjectorVars v;
  const auto make = [&](const Tensor& t) { return trainable ? tape.leaf(t) : tape.constant(t); };
  for (const auto& t : params.in_proj) v.in_proj.push_back(make(t));
  v.level_embedding = make(params.level_embedding);
  v.query_proj = make(params.query_proj);
  for (std::size_t h = 0; h < params.w_q.size(); ++h) {
    v.w_q.push_back(make(params.w_q[h]));
    v.w_k.push_back(make(params.w_k[h]));
    v.w_v.push_back(make(params.w_v[h]));
    v.w_o.push_back(make(params.w_o[h]));
  }
  v.ln1_gain = make(params.ln1_gain);
  v.ln1_bias = make(params.ln1_bias);
  v.ln2_gain = make(params.ln2_gain);
  v.ln2_bias = make(params.ln2_bias);
  v.ff_in = make(params.ff_in);
  v.ff_out = make(params.ff_out);
  v.out_proj = make(params.out_proj);
  return v;
}

Var project(const ProjectorVars& vars, const ProjectorConfig& config, Var text_features,
            const store::LevelSummaries& levels, ProjectorTrace* trace) {
  Tape& tape = *text_features.tape();
  const auto& ft = text_features.value();
  if (!(ft.rank() == 2 && ft.cols() == config.text_dim)) raise(ErrorCode::dimension,
          "text features have shape " + num::shape_string(ft.shape()) + ", projector expects d_t=" +
              std::to_string(config.text_dim));
  if (!(levels.size() == config.channel_dims.size())) raise(ErrorCode::dimension,
          "record has " + std::to_string(levels.size()) + " levels, projector expects " +
              std::to_string(config.channel_dims.size()));
  std::vector<Var> tokens;
  tokens.reserve(levels.size());
  for (std::size_t q = 0; q < levels.size(); ++q) {
    if (!(levels[q].size() == config.channel_dims[q])) raise(ErrorCode::dimension,
            "level " + std::to_string(q) + " has " + std::to_string(levels[q].size()) + " channels, expected " +
                std::to_string(config.channel_dims[q]));
    tokens.push_back(matmul(tape.constant(Tensor::matrix(1, levels[q].size(), levels[q])), vars.in_proj[q]));
  }
  const Var visual = add(stack_rows(tokens), vars.level_embedding);

  const Var x0 = matmul(text_features, vars.query_proj);
  const Var h1 = layer_norm(x0, vars.ln1_gain, vars.ln1_bias, kLayerNormEps);
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(config.head_dim()));
  std::vector<Var> heads;
  heads.reserve(config.heads);
  if (trace) trace->attention.clear();
  for (std::size_t h = 0; h < config.heads; ++h) {
    const Var q = matmul(h1, vars.w_q[h]);
    const Var k = matmul(visual, vars.w_k[h]);
    const Var v = matmul(visual, vars.w_v[h]);
    const Var weights = softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt_dk));
    if (trace) trace->attention.push_back(weights.value());
    heads.push_back(matmul(matmul(weights, v), vars.w_o[h]));
  }
  const Var x1 = add(x0, add_all(heads));
  const Var h2 = layer_norm(x1, vars.ln2_gain, vars.ln2_bias, kLayerNormEps);
  const Var x2 = add(x1, matmul(gelu(matmul(h2, vars.ff_in)), vars.ff_out));
  return matmul(x2, vars.out_proj);
}

Tensor project(const ProjectorParams& params, const Tensor& text_features, const store::LevelSummaries& levels,
               ProjectorTrace* trace) {
  Tape tape;
  const ProjectorVars vars = bind(tape, params, false);
  return project(vars, params.config, tape.constant(text_features), levels, trace).value();
}

FusionState FusionState::initialize(std::vector<std::string> classes, std::size_t text_dim) {
  require(!classes.empty() && text_dim >= 1, ErrorCode::contract, "adapter needs classes and a text dimension");
  FusionState f;
  f.adapter = Tensor({classes.size(), text_dim}, 0.0);
  f.adapter_classes = std::move(classes);
  return f;
}

void FusionState::validate() const {
  require(adapter.rank() == 2 && adapter.rows() == adapter_classes.size(), ErrorCode::dimension,
          "adapter has " + std::to_string(adapter.rows()) + " rows for " + std::to_string(adapter_classes.size()) +
              " classes");
  require(adapter.all_finite() && std::isfinite(alpha) && std::isfinite(beta), ErrorCode::non_finite,
          "fusion state is not finite");
}

Tensor FusionState::adapter_for(std::span<const std::string> classes) const {
  Tensor out({classes.size(), adapter.cols()}, 0.0);
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const auto it = std::find(adapter_classes.begin(), adapter_classes.end(), classes[i]);
    if (it == adapter_classes.end()) continue;
    const auto src = adapter.row(static_cast<std::size_t>(it - adapter_classes.begin()));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

void ClassifierConfig::validate() const {
  require(temperature > 0.0 && std::isfinite(temperature), ErrorCode::contract,
          "temperature must be positive, got " + std::to_string(temperature));
}

Tensor fuse(const Tensor& f_t, const Tensor& f_tv, const Tensor& adapter, double alpha, double beta) {
  if (!(f_t.same_shape(f_tv) && f_t.same_shape(adapter) && f_t.rank() == 2)) raise(ErrorCode::dimension,
          "fuse needs three D x d_t matrices, got " + num::shape_string(f_t.shape()) + ", " +
              num::shape_string(f_tv.shape()) + ", " + num::shape_string(adapter.shape()));
  Tensor out = f_t;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = f_t[i] + alpha * f_tv[i] + beta * adapter[i];
  return out;
}

Var fuse(Var f_t, Var f_tv, Var adapter, Var alpha, Var beta) {
  return add(add(f_t, scale_by(f_tv, alpha)), scale_by(adapter, beta));
}

Var class_logits(Var fused, const std::vector<double>& image_feature, double temperature) {
  if (!(fused.value().cols() == image_feature.size())) raise(ErrorCode::dimension,
          "text rows have d_t=" + std::to_string(fused.value().cols()) + " but the image feature has " +
              std::to_string(image_feature.size()) + " dims");
  const double n = num::norm(image_feature);
  if (!(n > 0.0)) raise(ErrorCode::degenerate, "image feature has zero norm");
  std::vector<double> unit(image_feature);
  for (double& v : unit) v /= n;
  Tape& tape = *fused.tape();
  const std::size_t d = unit.size();
  const Var image = tape.constant(Tensor::matrix(d, 1, std::move(unit)));
  return scale(transpose(matmul(l2_normalize_rows(fused), image)), 1.0 / temperature);
}

std::vector<double> classify(const Tensor& fused, std::span<const double> image_feature,
                             const ClassifierConfig& config) {
  config.validate();
  if (!(fused.rank() == 2 && fused.cols() == image_feature.size())) raise(ErrorCode::dimension,
          "classify: text rows and image feature differ in dimension");
  const double fn = num::norm(image_feature);
  if (!(fn > 0.0)) raise(ErrorCode::degenerate, "image feature has zero norm");
  Tensor logits({1, fused.rows()});
  for (std::size_t i = 0; i < fused.rows(); ++i) {
    const double rn = num::norm(fused.row(i));
    if (!(rn > 0.0)) raise(ErrorCode::degenerate, "text feature row " + std::to_string(i) + " has zero norm");
    logits[i] = num::dot(fused.row(i), image_feature) / (rn * fn) / config.temperature;
  }
  return num::softmax_rows(logits).to_vector();
}

void CplModel::validate() const {
  projector.validate();
  fusion.validate();
  classifier.validate();
  require(fusion.adapter.cols() == projector.config.text_dim, ErrorCode::dimension,
          "adapter width differs from the projector's d_t");
}

ModelVars bind(Tape& tape, const CplModel& model, const Trainable& trainable) {
  const auto make = [&](bool grad, Tensor t) { return grad ? tape.leaf(std::move(t)) : tape.constant(std::move(t)); };
  ModelVars v;
  v.projector = bind(tape, model.projector, trainable.projector);
  v.adapter = make(trainable.adapter, model.fusion.adapter);
  v.alpha = make(trainable.alpha, Tensor::scalar(model.fusion.alpha));
  v.beta = make(trainable.beta, Tensor::scalar(model.fusion.beta));
  return v;
}

Var image_logits(const ModelVars& vars, const CplModel& model, const Tensor& text_features,
                 const store::FeatureRecord& record) {
  Tape& tape = *vars.adapter.tape();
  const Var ft = tape.constant(text_features);
  const Var ftv = project(vars.projector, model.projector.config, ft, record.level_summaries);
  const Var fused = fuse(ft, ftv, vars.adapter, vars.alpha, vars.beta);
  return class_logits(fused, record.final_feature, model.classifier.temperature);
}

std::vector<double> image_probabilities(const CplModel& model, std::span<const std::string> classes,
                                        const Tensor& text_features, const store::FeatureRecord& record) {
  if (!(text_features.rows() == classes.size())) raise(ErrorCode::dimension,
          "got " + std::to_string(text_features.rows()) + " text rows for " + std::to_string(classes.size()) +
              " classes");
  const Tensor ftv = project(model.projector, text_features, record.level_summaries);
  const Tensor fused =
      fuse(text_features, ftv, model.fusion.adapter_for(classes), model.fusion.alpha, model.fusion.beta);
  return classify(fused, record.final_feature, model.classifier);
}

namespace {

void put_tensor(ByteWriter& w, const std::string& name, const Tensor& t) {
  w.short_string(name);
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) w.u32(static_cast<std::uint32_t>(e));
  for (double v : t.data()) w.f64(v);
}

Tensor get_tensor(ByteReader& r, const std::string& expected) {
  const std::string name = r.short_string();
  require(name == expected, ErrorCode::format, "checkpoint block '" + name + "' where '" + expected + "' was expected");
  const std::uint32_t rank = r.u32();
  require(rank >= 1 && rank <= 4, ErrorCode::format, "checkpoint block " + name + " has rank " + std::to_string(rank));
  num::Shape shape(rank);
  std::size_t count = 1;
  for (auto& e : shape) {
    e = r.u32();
    require(e >= 1, ErrorCode::format, "checkpoint block " + name + " has an empty extent");
    count *= e;
  }
  require(count <= r.remaining() / 8, ErrorCode::truncated, "checkpoint block " + name + " is truncated");
  std::vector<double> data(count);
  for (double& v : data) v = r.f64();
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const CplModel& model) {
  model.validate();
  ByteWriter w;
  w.magic("CPLM");
  w.u32(kCheckpointVersion);
  const auto& c = model.projector.config;
  w.u32(c.text_dim);
  w.u32(c.model_dim);
  w.u32(c.heads);
  w.u32(c.ff_dim);
  w.u32(static_cast<std::uint32_t>(c.channel_dims.size()));
  for (auto ch : c.channel_dims) w.u32(ch);
  w.u32(static_cast<std::uint32_t>(model.projector.parameter_count()));
  model.projector.visit([&](const std::string& name, const Tensor& t) { put_tensor(w, name, t); });
  put_tensor(w, "adapter", model.fusion.adapter);
  for (const auto& name : model.fusion.adapter_classes) w.short_string(name);
  w.f64(model.fusion.alpha);
  w.f64(model.fusion.beta);
  w.f64(model.classifier.temperature);
  w.u8(static_cast<std::uint8_t>(model.prompts.mode));
  w.u32(static_cast<std::uint32_t>(model.prompts.k));
  w.long_string(model.prompts.template_text);
  return w.bytes();
}

CplModel decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "checkpoint");
  r.expect_magic("CPLM");
  const std::uint32_t version = r.u32();
  require(version == kCheckpointVersion, ErrorCode::version, "checkpoint version " + std::to_string(version));
  CplModel m;
  auto& c = m.projector.config;
  c.text_dim = r.u32();
  c.model_dim = r.u32();
  c.heads = r.u32();
  c.ff_dim = r.u32();
  const std::uint32_t levels = r.u32();
  require(levels >= 1 && levels <= r.remaining() / 4, ErrorCode::format, "checkpoint level count is invalid");
  for (std::uint32_t q = 0; q < levels; ++q) c.channel_dims.push_back(r.u32());
  const std::uint32_t declared = r.u32();
  try {
    c = c.resolved();
  } catch (const Error& e) {
    raise(ErrorCode::format, std::string("checkpoint projector config: ") + e.what());
  }
  // Size the block lists, then read them in visit order.
  m.projector.in_proj.resize(levels);
  m.projector.w_q.resize(c.heads);
  m.projector.w_k.resize(c.heads);
  m.projector.w_v.resize(c.heads);
  m.projector.w_o.resize(c.heads);
  m.projector.visit([&](const std::string& name, Tensor& t) { t = get_tensor(r, name); });
  require(m.projector.parameter_count() == declared, ErrorCode::format, "checkpoint parameter count disagrees");
  m.fusion.adapter = get_tensor(r, "adapter");
  for (std::size_t i = 0; i < m.fusion.adapter.rows(); ++i) m.fusion.adapter_classes.push_back(r.short_string());
  m.fusion.alpha = r.f64();
  m.fusion.beta = r.f64();
  m.classifier.temperature = r.f64();
  const std::uint8_t mode = r.u8();
  require(mode <= static_cast<std::uint8_t>(cache::PromptMode::class_static), ErrorCode::format,
          "checkpoint prompt mode " + std::to_string(mode));
  m.prompts.mode = static_cast<cache::PromptMode>(mode);
  m.prompts.k = r.u32();
  m.prompts.template_text = r.long_string();
  require(r.at_end(), ErrorCode::format, "checkpoint has trailing bytes");
  m.validate();
  return m;
}

void write_checkpoint(const CplModel& model, const std::filesystem::path& path) {
  write_file_bytes(path, encode_checkpoint(model));
}

CplModel read_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file_bytes(path)); }

}  // namespace cpl::model
