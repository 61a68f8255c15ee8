// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cpl/concept_cache/prompts.hpp"
#include "cpl/feature_store/records.hpp"
#include "cpl/numcore/autodiff.hpp"
#include "cpl/numcore/tensor.hpp"

namespace cpl::model {

struct ProjectorConfig {
  std::uint32_t text_dim = 0;
  std::uint32_t model_dim = 0;  // 0 means text_dim
  std::uint32_t heads = 4;
  std::uint32_t ff_dim = 0;     // 0 means 4 * model_dim
  std::vector<std::uint32_t> channel_dims;  // one per level

  // Fills the derived defaults and checks h | d_m.
  ProjectorConfig resolved() const;
  std::uint32_t head_dim() const { return model_dim / heads; }

  friend bool operator==(const ProjectorConfig&, const ProjectorConfig&) = default;
};

// One decoder block. Instantiated with Tensor for storage and Var for a
// recorded forward pass.
template <typename T>
struct ProjectorBlocks {
  std::vector<T> in_proj;  // per level, C_q x d_m
  T level_embedding;       // Q x d_m
  T query_proj;            // d_t x d_m
  std::vector<T> w_q, w_k, w_v;  // per head, d_m x d_k
  std::vector<T> w_o;            // per head, d_k x d_m
  T ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  T ff_in;     // d_m x d_ff
  T ff_out;    // d_ff x d_m
  T out_proj;  // d_m x d_t

  // Visits every block in a fixed order with a stable name.
  template <typename F>
  void visit(F&& f) {
    for (std::size_t q = 0; q < in_proj.size(); ++q) f("in_proj." + std::to_string(q), in_proj[q]);
    f("level_embedding", level_embedding);
    f("query_proj", query_proj);
    for (std::size_t h = 0; h < w_q.size(); ++h) {
      const std::string s = "." + std::to_string(h);
      f("w_q" + s, w_q[h]);
      f("w_k" + s, w_k[h]);
      f("w_v" + s, w_v[h]);
      f("w_o" + s, w_o[h]);
    }
    f("ln1_gain", ln1_gain);
    f("ln1_bias", ln1_bias);
    f("ln2_gain", ln2_gain);
    f("ln2_bias", ln2_bias);
    f("ff_in", ff_in);
    f("ff_out", ff_out);
    f("out_proj", out_proj);
  }
  template <typename F>
  void visit(F&& f) const {
    const_cast<ProjectorBlocks*>(this)->visit([&](const std::string& name, T& t) { f(name, static_cast<const T&>(t)); });
  }
};

struct ProjectorParams : ProjectorBlocks<num::Tensor> {
  ProjectorConfig config;

  // Symmetric uniform fan-in weights, unit gains, zero biases.
  static ProjectorParams initialize(const ProjectorConfig& config, std::uint64_t seed);
  void validate() const;
  std::size_t parameter_count() const;

  friend bool operator==(const ProjectorParams& a, const ProjectorParams& b);
};

using ProjectorVars = ProjectorBlocks<num::Var>;

ProjectorVars bind(num::Tape& tape, const ProjectorParams& params, bool trainable);

struct ProjectorTrace {
  std::vector<num::Tensor> attention;  // per head, D x Q
};

// Cross-attention of D text queries over Q visual tokens, then feed-forward
// and the output projection. Returns D x d_t.
num::Var project(const ProjectorVars& vars, const ProjectorConfig& config, num::Var text_features,
                 const store::LevelSummaries& levels, ProjectorTrace* trace = nullptr);
num::Tensor project(const ProjectorParams& params, const num::Tensor& text_features,
                    const store::LevelSummaries& levels, ProjectorTrace* trace = nullptr);

inline constexpr double kResidualInit = 1e-4;

struct FusionState {
  num::Tensor adapter;  // D x d_t, one row per adapter class
  std::vector<std::string> adapter_classes;
  double alpha = kResidualInit;
  double beta = kResidualInit;

  static FusionState initialize(std::vector<std::string> classes, std::size_t text_dim);
  void validate() const;
  // Adapter rows reordered to `classes`; classes without a trained row get
  // zeros.
  num::Tensor adapter_for(std::span<const std::string> classes) const;

  friend bool operator==(const FusionState&, const FusionState&) = default;
};

struct ClassifierConfig {
  double temperature = 0.01;
  void validate() const;
  friend bool operator==(const ClassifierConfig&, const ClassifierConfig&) = default;
};

// f_t + alpha f_tv + beta A, no re-normalization.
num::Tensor fuse(const num::Tensor& f_t, const num::Tensor& f_tv, const num::Tensor& adapter, double alpha,
                 double beta);
num::Var fuse(num::Var f_t, num::Var f_tv, num::Var adapter, num::Var alpha, num::Var beta);

// Cosine similarity of each row with f_v divided by tau; 1 x D.
num::Var class_logits(num::Var fused, const std::vector<double>& image_feature, double temperature);
std::vector<double> classify(const num::Tensor& fused, std::span<const double> image_feature,
                             const ClassifierConfig& config);

// Everything a checkpoint carries.
struct CplModel {
  ProjectorParams projector;
  FusionState fusion;
  ClassifierConfig classifier;
  cache::PromptConfig prompts;

  void validate() const;
  friend bool operator==(const CplModel&, const CplModel&) = default;
};

struct ModelVars {
  ProjectorVars projector;
  num::Var adapter, alpha, beta;
};

// Which parts of the model get gradients. The rest are recorded as constants.
struct Trainable {
  bool projector = true;
  bool adapter = true;
  bool alpha = true;
  bool beta = true;
};

ModelVars bind(num::Tape& tape, const CplModel& model, const Trainable& trainable);

// classify(fuse(f_t, project(f_t, levels))) for one image, as logits. The
// adapter var must have one row per text feature row.
num::Var image_logits(const ModelVars& vars, const CplModel& model, const num::Tensor& text_features,
                      const store::FeatureRecord& record);

// Class probabilities for one image given its prompt features, with the
// adapter mapped onto `classes`.
std::vector<double> image_probabilities(const CplModel& model, std::span<const std::string> classes,
                                        const num::Tensor& text_features, const store::FeatureRecord& record);

// "CPLM" | u32 version=1 | projector config | u32 parameter count, per block:
// u16 name, u32 rank, u32 extents, f64 values | adapter block + class names |
// f64 alpha, beta, tau | u8 prompt mode, u32 K, u32 template.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const CplModel& model);
CplModel decode_checkpoint(std::span<const std::uint8_t> bytes);
void write_checkpoint(const CplModel& model, const std::filesystem::path& path);
CplModel read_checkpoint(const std::filesystem::path& path);

}  // namespace cpl::model
