#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "icl/featmap/featmap.hpp"
#include "icl/ndtensor/tape.hpp"
#include "icl/taskgen/prompt.hpp"

namespace icl::models {

/// Named weight arrays in declaration order. Frozen entries are bound as
/// tape constants and never receive gradients.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    nd::Tensor value;
    bool trainable = true;
  };

  std::size_t add(std::string name, nd::Tensor value, bool trainable = true);
  std::size_t size() const { return entries_.size(); }
  const Entry& operator[](std::size_t i) const { return entries_.at(i); }
  // Replaces a value; the shape must not change.
  void set(std::size_t i, nd::Tensor value);
  std::size_t index_of(const std::string& name) const;
  std::size_t trainable_count() const;
  const std::vector<Entry>& entries() const { return entries_; }

 private:
  std::vector<Entry> entries_;
};

// Parameters placed on a tape, index-aligned with the store.
struct Bound {
  std::vector<nd::Var> vars;
  const nd::Var& operator[](std::size_t i) const { return vars.at(i); }
};
Bound bind(nd::Tape& tape, const ParamStore& params);

// Which per-prompt features feed an MLP.
enum class InputKind {
  Vectorized,      // vectorize(A, max_rows)
  PsiLastRow,      // psi(A)_{N,:}
  PsiLastElement,  // psi(A)_{N,d+1}
  Concat,          // [vectorize(A, max_rows), psi(A)_{N,:}]
};
std::string input_kind_name(InputKind k);
InputKind input_kind_from_string(const std::string& s);

// psi_L or psi_K with a kernel.
struct FeatureMapSpec {
  enum class Kind { PsiL, PsiK } kind = Kind::PsiK;
  feat::KernelSpec kernel = feat::HilbertKernel{1};
};
std::string feature_map_name(const FeatureMapSpec& f);
nlohmann::json to_json(const FeatureMapSpec& f);
// {"map": "psi_L"} or {"map": "psi_K", "kernel": {...}}.
FeatureMapSpec feature_map_from_json(const nlohmann::json& j, const std::string& path);

struct MLPSpec {
  int d = 1;
  InputKind input = InputKind::Vectorized;
  FeatureMapSpec feature;
  std::size_t width = 1024;
  // Prompt rows after padding (max context + 1); used by vectorized inputs.
  std::size_t max_rows = 2;
};
std::size_t mlp_input_dim(const MLPSpec& s);

enum class PhiKind { L1, Softmax };

struct SGPTSpec {
  int d = 1;
  std::size_t layers = 1;
  std::size_t width = 32;
  PhiKind phi = PhiKind::L1;
  feat::MaskMode mask = feat::MaskMode::None;
};

struct RefTransformerSpec {
  int d = 1;
  std::size_t layers = 1;
  std::size_t heads = 1;
  std::size_t width = 32;
  bool causal = false;
  bool layer_norm = true;
  bool mlp = true;
  // Attention mask used when causal is false.
  feat::MaskMode mask = feat::MaskMode::None;
};

using ModelSpec = std::variant<MLPSpec, SGPTSpec, RefTransformerSpec>;

nlohmann::json to_json(const ModelSpec& spec);
// Throws FormatError naming the offending field.
ModelSpec model_spec_from_json(const nlohmann::json& j, const std::string& path = "model");
int model_dim(const ModelSpec& spec);

/// A predictor M(A) on prompts whose query label is zeroed.
class Model {
 public:
  virtual ~Model() = default;
  virtual ModelSpec spec() const = 0;
  // Predictions for `prompts`, shape [M], in input order.
  virtual nd::Var forward(nd::Tape& tape, const Bound& params, std::span<const tasks::PromptMatrix> prompts) const = 0;

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  double predict(const tasks::PromptMatrix& prompt) const;
  std::vector<double> predict(std::span<const tasks::PromptMatrix> prompts) const;

 protected:
  ParamStore params_;
};

// Weights: N(0, 1/fan_in) for trainable matrices, N(0, 1/(d+1)) for the frozen
// SGPT embedding, drawn from the Init domain of `seed`.
std::unique_ptr<Model> make_model(const ModelSpec& spec, std::uint64_t seed);

class MLPModel final : public Model {
 public:
  MLPModel(const MLPSpec& spec, std::uint64_t seed);
  ModelSpec spec() const override { return spec_; }
  nd::Var forward(nd::Tape& tape, const Bound& params, std::span<const tasks::PromptMatrix> prompts) const override;
  // Input vector for one prompt.
  std::vector<double> features(const tasks::PromptMatrix& prompt) const;

 private:
  MLPSpec spec_;
};

class SGPTModel final : public Model {
 public:
  SGPTModel(const SGPTSpec& spec, std::uint64_t seed);
  ModelSpec spec() const override { return spec_; }
  nd::Var forward(nd::Tape& tape, const Bound& params, std::span<const tasks::PromptMatrix> prompts) const override;
  // Hidden state H^(L) for prompts of equal length, shape [B, n, k]. The
  // forward pass itself only evaluates the query row in the last layer.
  nd::Var hidden(nd::Tape& tape, const Bound& params, std::span<const tasks::PromptMatrix> prompts) const;

 private:
  SGPTSpec spec_;
};

class RefTransformerModel final : public Model {
 public:
  RefTransformerModel(const RefTransformerSpec& spec, std::uint64_t seed);
  ModelSpec spec() const override { return spec_; }
  nd::Var forward(nd::Tape& tape, const Bound& params, std::span<const tasks::PromptMatrix> prompts) const override;
  // Residual stream after the last block (and final layer norm if enabled)
  // for prompts of equal length, shape [B, n, m].
  nd::Var hidden(nd::Tape& tape, const Bound& params, std::span<const tasks::PromptMatrix> prompts) const;

 private:
  RefTransformerSpec spec_;
};

// sigma(v W0) W1 for one input vector, relu activation, no biases.
double mlp_forward(const MLPModel& model, std::span<const double> v);
double sgpt_forward(const SGPTModel& model, const tasks::PromptMatrix& a);
double ref_transformer_forward(const RefTransformerModel& model, const tasks::PromptMatrix& a);
// Downstream MLP applied to the selected psi features of `a`.
double one_layer_psi_forward(const MLPModel& model, const tasks::PromptMatrix& a);

// Selected row of psi(A): psi_L rows are divided by the number of context
// examples so their scale does not grow with N.
std::vector<double> psi_features(const FeatureMapSpec& f, const tasks::PromptMatrix& a);
// [vectorize(A, max_rows), psi_features]; length max_rows (d+1) + (d+1).
std::vector<double> concat_input(const tasks::PromptMatrix& a, std::span<const double> psi_row, std::size_t max_rows);

// "ICLCKPT v1\n", one line of JSON metadata (spec, extra), then every weight
// array as little-endian float64 in declaration order.
void save_checkpoint(std::ostream& out, const Model& model, const nlohmann::json& extra = nlohmann::json::object());
struct LoadedCheckpoint {
  std::unique_ptr<Model> model;
  nlohmann::json meta;
};
LoadedCheckpoint load_checkpoint(std::istream& in);

}  // namespace icl::models
