#include "icl/models/models.hpp"

#include <cmath>
#include <istream>
#include <ostream>

#include "icl/errors.hpp"
#include "icl/jsonutil.hpp"
#include "icl/ndtensor/ops.hpp"
#include "icl/overloaded.hpp"

namespace icl::models {

using nd::Shape;
using nd::Tape;
using nd::Tensor;
using nd::Var;
using tasks::PromptMatrix;

namespace {

Tensor gaussian(Shape shape, double variance, const tasks::Rng& rng, std::uint64_t index) {
  auto s = rng.stream(tasks::Purpose::Weights, index);
  std::vector<double> v(nd::shape_size(shape));
  const double sd = std::sqrt(variance);
  for (double& x : v) x = sd * s.normal();
  return Tensor(std::move(shape), std::move(v));
}

// Adds an N(0, 1/fan_in) matrix.
std::size_t add_matrix(ParamStore& p, const std::string& name, std::size_t rows, std::size_t cols,
                       const tasks::Rng& rng) {
  return p.add(name, gaussian({rows, cols}, 1.0 / static_cast<double>(rows), rng, p.size()));
}

// Concatenates per-group prediction vectors.
Var join(const std::vector<Var>& parts) {
  Var out = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) out = nd::concat_last(out, parts[i]);
  return out;
}

// Calls `group(begin, end)` for each run of prompts with equal row count.
template <class F>
Var for_each_length_group(std::span<const PromptMatrix> prompts, F&& group) {
  if (prompts.empty()) throw ContractError("forward: no prompts");
  std::vector<Var> parts;
  std::size_t begin = 0;
  while (begin < prompts.size()) {
    std::size_t end = begin + 1;
    while (end < prompts.size() && prompts[end].rows() == prompts[begin].rows() &&
           prompts[end].dim() == prompts[begin].dim())
      ++end;
    parts.push_back(group(prompts.subspan(begin, end - begin)));
    begin = end;
  }
  return join(parts);
}

void check_prompt(const PromptMatrix& a, int d) {
  if (!a.query_label_zeroed()) throw ContractError("model input: query label must be zeroed");
  if (static_cast<int>(a.dim()) != d) {
    throw DimensionError("model expects d=" + std::to_string(d) + ", prompt has d=" + std::to_string(a.dim()));
  }
}

// Stacked prompt data as a [B*n, d+1] constant.
Var stack_prompts(Tape& tape, std::span<const PromptMatrix> group) {
  const std::size_t n = group.front().rows();
  const std::size_t c = group.front().cols();
  std::vector<double> data;
  data.reserve(group.size() * n * c);
  for (const auto& a : group) data.insert(data.end(), a.data().begin(), a.data().end());
  return tape.constant(Tensor({group.size() * n, c}, std::move(data)));
}

// Allowed-entry mask [B, rows, n] for attention rows `first_row..first_row+rows`.
Tensor attention_mask(std::size_t batch, std::size_t first_row, std::size_t rows, std::size_t n, feat::MaskMode mode) {
  std::vector<double> m(batch * rows * n, 1.0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t i = first_row + r;
      for (std::size_t j = 0; j < n; ++j) {
        const bool blocked = (mode != feat::MaskMode::None && j == i) || (mode == feat::MaskMode::StrictCausal && j > i);
        if (blocked) m[(b * rows + r) * n + j] = 0.0;
      }
    }
  return Tensor({batch, rows, n}, std::move(m));
}

Var apply_phi(Tape& tape, const Var& scores, PhiKind phi, feat::MaskMode mode, std::size_t first_row) {
  const Shape& s = scores.shape();
  if (phi == PhiKind::Softmax) {
    if (mode == feat::MaskMode::None) return nd::row_softmax(scores);
    return nd::row_softmax(scores, attention_mask(s[0], first_row, s[1], s[2], mode));
  }
  if (mode == feat::MaskMode::None) return nd::row_l1_normalize(scores);
  return nd::row_l1_normalize(nd::mul(scores, tape.constant(attention_mask(s[0], first_row, s[1], s[2], mode))));
}

feat::MaskMode mask_field(const nlohmann::json& j, const std::string& path) {
  if (!j.contains("mask")) return feat::MaskMode::None;
  try {
    return feat::mask_from_string(jsonutil::get_string(j, path, "mask"));
  } catch (const FormatError& e) {
    throw FormatError(path + ".mask: " + e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------- ParamStore

std::size_t ParamStore::add(std::string name, Tensor value, bool trainable) {
  for (const auto& e : entries_)
    if (e.name == name) throw ContractError("duplicate parameter name '" + name + "'");
  entries_.push_back(Entry{std::move(name), std::move(value), trainable});
  return entries_.size() - 1;
}

void ParamStore::set(std::size_t i, Tensor value) {
  auto& e = entries_.at(i);
  if (value.shape() != e.value.shape()) {
    throw DimensionError("parameter '" + e.name + "' has shape " + nd::to_string(e.value.shape()) + ", got " +
                         nd::to_string(value.shape()));
  }
  e.value = std::move(value);
}

std::size_t ParamStore::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name == name) return i;
  throw ContractError("no parameter named '" + name + "'");
}

std::size_t ParamStore::trainable_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_)
    if (e.trainable) n += e.value.size();
  return n;
}

Bound bind(Tape& tape, const ParamStore& params) {
  Bound b;
  b.vars.reserve(params.size());
  for (const auto& e : params.entries()) b.vars.push_back(tape.leaf(e.value, e.trainable));
  return b;
}

// ---------------------------------------------------------------- specs

std::string input_kind_name(InputKind k) {
  switch (k) {
    case InputKind::Vectorized:
      return "vectorized";
    case InputKind::PsiLastRow:
      return "psi_last_row";
    case InputKind::PsiLastElement:
      return "psi_last_element";
    case InputKind::Concat:
      return "concat";
  }
  return "vectorized";
}

InputKind input_kind_from_string(const std::string& s) {
  if (s == "vectorized") return InputKind::Vectorized;
  if (s == "psi_last_row") return InputKind::PsiLastRow;
  if (s == "psi_last_element") return InputKind::PsiLastElement;
  if (s == "concat") return InputKind::Concat;
  throw FormatError("unknown input kind '" + s + "'");
}

std::string feature_map_name(const FeatureMapSpec& f) {
  if (f.kind == FeatureMapSpec::Kind::PsiL) return "psi_L";
  return "psi_K_" + feat::kernel_name(f.kernel);
}

std::size_t mlp_input_dim(const MLPSpec& s) {
  const std::size_t c = static_cast<std::size_t>(s.d) + 1;
  switch (s.input) {
    case InputKind::Vectorized:
      return s.max_rows * c;
    case InputKind::PsiLastRow:
      return c;
    case InputKind::PsiLastElement:
      return 1;
    case InputKind::Concat:
      return s.max_rows * c + c;
  }
  return 0;
}

nlohmann::json to_json(const FeatureMapSpec& f) {
  if (f.kind == FeatureMapSpec::Kind::PsiL) return {{"map", "psi_L"}};
  return {{"map", "psi_K"}, {"kernel", feat::to_json(f.kernel)}};
}

FeatureMapSpec feature_map_from_json(const nlohmann::json& j, const std::string& path) {
  FeatureMapSpec f;
  const std::string map = jsonutil::get_string(j, path, "map");
  if (map == "psi_L") {
    f.kind = FeatureMapSpec::Kind::PsiL;
  } else if (map == "psi_K") {
    f.kind = FeatureMapSpec::Kind::PsiK;
    f.kernel = feat::kernel_from_json(jsonutil::require_field(j, path, "kernel"), path + ".kernel");
  } else {
    throw FormatError(path + ".map: expected psi_L or psi_K, got '" + map + "'");
  }
  return f;
}

int model_dim(const ModelSpec& spec) {
  return std::visit([](const auto& s) { return s.d; }, spec);
}

nlohmann::json to_json(const ModelSpec& spec) {
  return std::visit(
      overloaded{
          [](const MLPSpec& s) {
            nlohmann::json j{{"kind", "mlp"}, {"d", s.d}, {"input", input_kind_name(s.input)},
                             {"width", s.width}, {"max_rows", s.max_rows}};
            if (s.input != InputKind::Vectorized) j["feature"] = to_json(s.feature);
            return j;
          },
          [](const SGPTSpec& s) {
            return nlohmann::json{{"kind", "sgpt"},
                                  {"d", s.d},
                                  {"layers", s.layers},
                                  {"width", s.width},
                                  {"phi", s.phi == PhiKind::L1 ? "l1" : "softmax"},
                                  {"mask", feat::mask_name(s.mask)}};
          },
          [](const RefTransformerSpec& s) {
            return nlohmann::json{{"kind", "ref_transformer"}, {"d", s.d},
                                  {"layers", s.layers},         {"heads", s.heads},
                                  {"width", s.width},           {"causal", s.causal},
                                  {"layer_norm", s.layer_norm}, {"mlp", s.mlp},
                                  {"mask", feat::mask_name(s.mask)}};
          },
      },
      spec);
}

ModelSpec model_spec_from_json(const nlohmann::json& j, const std::string& path) {
  using namespace jsonutil;
  const std::string kind = get_string(j, path, "kind");
  const int d = static_cast<int>(get_int(j, path, "d"));
  if (d < 1) throw FormatError(path + ".d: must be >= 1");
  auto positive = [&](const std::string& key, std::size_t fallback) {
    const std::size_t v = j.contains(key) ? get_size(j, path, key) : fallback;
    if (v == 0) throw FormatError(path + "." + key + ": must be >= 1");
    return v;
  };
  if (kind == "mlp") {
    MLPSpec s;
    s.d = d;
    try {
      s.input = j.contains("input") ? input_kind_from_string(get_string(j, path, "input")) : InputKind::Vectorized;
    } catch (const FormatError& e) {
      if (std::string(e.what()).rfind(path, 0) == 0) throw;
      throw FormatError(path + ".input: " + e.what());
    }
    s.width = positive("width", 1024);
    s.max_rows = positive("max_rows", 2);
    if (s.input != InputKind::Vectorized) {
      s.feature = feature_map_from_json(require_field(j, path, "feature"), path + ".feature");
    }
    return s;
  }
  if (kind == "sgpt") {
    SGPTSpec s;
    s.d = d;
    s.layers = positive("layers", 1);
    s.width = positive("width", 32);
    const std::string phi = j.contains("phi") ? get_string(j, path, "phi") : "l1";
    if (phi != "l1" && phi != "softmax") throw FormatError(path + ".phi: expected l1 or softmax");
    s.phi = phi == "l1" ? PhiKind::L1 : PhiKind::Softmax;
    s.mask = mask_field(j, path);
    return s;
  }
  if (kind == "ref_transformer") {
    RefTransformerSpec s;
    s.d = d;
    s.layers = positive("layers", 1);
    s.heads = positive("heads", 1);
    s.width = positive("width", 32);
    if (s.width % s.heads != 0) throw FormatError(path + ".heads: must divide width");
    s.causal = j.contains("causal") ? get_bool(j, path, "causal") : false;
    s.layer_norm = j.contains("layer_norm") ? get_bool(j, path, "layer_norm") : true;
    s.mlp = j.contains("mlp") ? get_bool(j, path, "mlp") : true;
    s.mask = mask_field(j, path);
    return s;
  }
  throw FormatError(path + ".kind: unknown model kind '" + kind + "'");
}

// ---------------------------------------------------------------- Model

double Model::predict(const PromptMatrix& prompt) const {
  return predict(std::span<const PromptMatrix>(&prompt, 1)).front();
}

std::vector<double> Model::predict(std::span<const PromptMatrix> prompts) const {
  Tape tape;
  Bound b;
  for (const auto& e : params_.entries()) b.vars.push_back(tape.constant(e.value));
  return forward(tape, b, prompts).value().to_vector();
}

std::unique_ptr<Model> make_model(const ModelSpec& spec, std::uint64_t seed) {
  return std::visit(overloaded{
                        [&](const MLPSpec& s) -> std::unique_ptr<Model> { return std::make_unique<MLPModel>(s, seed); },
                        [&](const SGPTSpec& s) -> std::unique_ptr<Model> { return std::make_unique<SGPTModel>(s, seed); },
                        [&](const RefTransformerSpec& s) -> std::unique_ptr<Model> {
                          return std::make_unique<RefTransformerModel>(s, seed);
                        },
                    },
                    spec);
}

// ---------------------------------------------------------------- features

std::vector<double> psi_features(const FeatureMapSpec& f, const PromptMatrix& a) {
  if (f.kind == FeatureMapSpec::Kind::PsiL) {
    auto row = feat::psi_L_last_row(a);
    const double n = static_cast<double>(std::max<std::size_t>(a.context_size(), 1));
    for (double& v : row) v /= n;
    return row;
  }
  return feat::psi_K_last_row(a, f.kernel);
}

std::vector<double> concat_input(const PromptMatrix& a, std::span<const double> psi_row, std::size_t max_rows) {
  if (psi_row.size() != a.cols()) throw DimensionError("concat_input: psi row must have d+1 entries");
  auto v = tasks::vectorize(a, max_rows);
  v.insert(v.end(), psi_row.begin(), psi_row.end());
  return v;
}

// ---------------------------------------------------------------- MLP

MLPModel::MLPModel(const MLPSpec& spec, std::uint64_t seed) : spec_(spec) {
  if (spec.d < 1 || spec.width == 0) throw ContractError("MLP needs d >= 1 and width >= 1");
  const tasks::Rng rng(seed, tasks::Domain::Init);
  add_matrix(params_, "W0", mlp_input_dim(spec), spec.width, rng);
  add_matrix(params_, "W1", spec.width, 1, rng);
}

std::vector<double> MLPModel::features(const PromptMatrix& a) const {
  check_prompt(a, spec_.d);
  switch (spec_.input) {
    case InputKind::Vectorized:
      return tasks::vectorize(a, spec_.max_rows);
    case InputKind::PsiLastRow:
      return psi_features(spec_.feature, a);
    case InputKind::PsiLastElement:
      return {psi_features(spec_.feature, a).back()};
    case InputKind::Concat:
      return concat_input(a, psi_features(spec_.feature, a), spec_.max_rows);
  }
  return {};
}

Var MLPModel::forward(Tape& tape, const Bound& params, std::span<const PromptMatrix> prompts) const {
  if (prompts.empty()) throw ContractError("forward: no prompts");
  const std::size_t in = mlp_input_dim(spec_);
  std::vector<double> x;
  x.reserve(prompts.size() * in);
  for (const auto& a : prompts) {
    auto f = features(a);
    x.insert(x.end(), f.begin(), f.end());
  }
  const Var input = tape.constant(Tensor({prompts.size(), in}, std::move(x)));
  const Var out = nd::matmul(nd::relu(nd::matmul(input, params[0])), params[1]);
  return nd::reshape(out, {prompts.size()});
}

double mlp_forward(const MLPModel& model, std::span<const double> v) {
  const auto& spec = std::get<MLPSpec>(model.spec());
  if (v.size() != mlp_input_dim(spec)) {
    throw ContractError("mlp_forward: input has length " + std::to_string(v.size()) + ", expected " +
                        std::to_string(mlp_input_dim(spec)));
  }
  Tape tape;
  const Var x = tape.constant(Tensor({1, v.size()}, std::vector<double>(v.begin(), v.end())));
  const Var w0 = tape.constant(model.params()[0].value);
  const Var w1 = tape.constant(model.params()[1].value);
  return nd::matmul(nd::relu(nd::matmul(x, w0)), w1).value().item();
}

double one_layer_psi_forward(const MLPModel& model, const PromptMatrix& a) {
  const auto& spec = std::get<MLPSpec>(model.spec());
  if (spec.input != InputKind::PsiLastRow && spec.input != InputKind::PsiLastElement) {
    throw ContractError("one_layer_psi_forward: model input must be psi features");
  }
  return mlp_forward(model, model.features(a));
}

// ---------------------------------------------------------------- SGPT

SGPTModel::SGPTModel(const SGPTSpec& spec, std::uint64_t seed) : spec_(spec) {
  if (spec.d < 1 || spec.width == 0 || spec.layers == 0) throw ContractError("SGPT needs d, width, layers >= 1");
  const tasks::Rng rng(seed, tasks::Domain::Init);
  const std::size_t c = static_cast<std::size_t>(spec.d) + 1;
  params_.add("W0", gaussian({c, spec.width}, 1.0 / static_cast<double>(c), rng, 0), false);
  for (std::size_t l = 0; l < spec.layers; ++l) {
    add_matrix(params_, "W_proj" + std::to_string(l), spec.width, spec.width, rng);
    add_matrix(params_, "W_mlp" + std::to_string(l), spec.width, spec.width, rng);
  }
  add_matrix(params_, "W_O", spec.width, 1, rng);
}

namespace {

// One SGPT block on flattened rows: U = G W_proj + H, H' = gelu(U W_mlp) + U.
Var sgpt_block(const Var& g_flat, const Var& h_flat, const Var& w_proj, const Var& w_mlp) {
  const Var u = nd::add(nd::matmul(g_flat, w_proj), h_flat);
  return nd::add(nd::gelu(nd::matmul(u, w_mlp)), u);
}

}  // namespace

Var SGPTModel::hidden(Tape& tape, const Bound& params, std::span<const PromptMatrix> group) const {
  for (const auto& a : group) check_prompt(a, spec_.d);
  const std::size_t b = group.size();
  const std::size_t n = group.front().rows();
  const std::size_t k = spec_.width;
  Var h = nd::matmul(stack_prompts(tape, group), params[0]);  // [B*n, k]
  for (std::size_t l = 0; l < spec_.layers; ++l) {
    const Var h3 = nd::reshape(h, {b, n, k});
    const Var p = apply_phi(tape, nd::batched_matmul(h3, nd::transpose(h3)), spec_.phi, spec_.mask, 0);
    const Var g = nd::reshape(nd::batched_matmul(p, h3), {b * n, k});
    h = sgpt_block(g, h, params[1 + 2 * l], params[2 + 2 * l]);
  }
  return nd::reshape(h, {b, n, k});
}

Var SGPTModel::forward(Tape& tape, const Bound& params, std::span<const PromptMatrix> prompts) const {
  const std::size_t k = spec_.width;
  const std::size_t last = spec_.layers - 1;
  return for_each_length_group(prompts, [&](std::span<const PromptMatrix> group) {
    for (const auto& a : group) check_prompt(a, spec_.d);
    const std::size_t b = group.size();
    const std::size_t n = group.front().rows();
    Var h = nd::matmul(stack_prompts(tape, group), params[0]);
    for (std::size_t l = 0; l < last; ++l) {
      const Var h3 = nd::reshape(h, {b, n, k});
      const Var p = apply_phi(tape, nd::batched_matmul(h3, nd::transpose(h3)), spec_.phi, spec_.mask, 0);
      const Var g = nd::reshape(nd::batched_matmul(p, h3), {b * n, k});
      h = sgpt_block(g, h, params[1 + 2 * l], params[2 + 2 * l]);
    }
    // Only the query row of the last layer reaches the output.
    const Var h3 = nd::reshape(h, {b, n, k});
    const Var hq = nd::select_row(h3, n - 1);  // [B, k]
    const Var scores = nd::reshape(nd::batched_matmul(h3, nd::reshape(hq, {b, k, 1})), {b, 1, n});
    const Var p = apply_phi(tape, scores, spec_.phi, spec_.mask, n - 1);
    const Var g = nd::reshape(nd::batched_matmul(p, h3), {b, k});
    const Var out = sgpt_block(g, hq, params[1 + 2 * last], params[2 + 2 * last]);
    return nd::reshape(nd::matmul(out, params[params.vars.size() - 1]), {b});
  });
}

double sgpt_forward(const SGPTModel& model, const PromptMatrix& a) { return model.predict(a); }

// ---------------------------------------------------------------- reference transformer

RefTransformerModel::RefTransformerModel(const RefTransformerSpec& spec, std::uint64_t seed) : spec_(spec) {
  if (spec.d < 1 || spec.width == 0 || spec.layers == 0 || spec.heads == 0 || spec.width % spec.heads != 0) {
    throw ContractError("reference transformer needs d, width, layers, heads >= 1 and heads | width");
  }
  const tasks::Rng rng(seed, tasks::Domain::Init);
  const std::size_t c = static_cast<std::size_t>(spec.d) + 1;
  const std::size_t m = spec.width;
  add_matrix(params_, "embed_W", c, m, rng);
  params_.add("embed_b", Tensor::zeros({m}));
  for (std::size_t l = 0; l < spec.layers; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    if (spec.layer_norm) {
      params_.add(p + "ln1_g", Tensor::filled({m}, 1.0));
      params_.add(p + "ln1_b", Tensor::zeros({m}));
    }
    add_matrix(params_, p + "W_Q", m, m, rng);
    add_matrix(params_, p + "W_K", m, m, rng);
    add_matrix(params_, p + "W_V", m, m, rng);
    add_matrix(params_, p + "W_attn_out", m, m, rng);
    params_.add(p + "b_attn_out", Tensor::zeros({m}));
    if (spec.mlp) {
      if (spec.layer_norm) {
        params_.add(p + "ln2_g", Tensor::filled({m}, 1.0));
        params_.add(p + "ln2_b", Tensor::zeros({m}));
      }
      add_matrix(params_, p + "W_fc", m, 4 * m, rng);
      params_.add(p + "b_fc", Tensor::zeros({4 * m}));
      add_matrix(params_, p + "W_fc_out", 4 * m, m, rng);
      params_.add(p + "b_fc_out", Tensor::zeros({m}));
    }
  }
  if (spec.layer_norm) {
    params_.add("ln_f_g", Tensor::filled({m}, 1.0));
    params_.add("ln_f_b", Tensor::zeros({m}));
  }
  add_matrix(params_, "readout_W", m, 1, rng);
  params_.add("readout_b", Tensor::zeros({1}));
}

Var RefTransformerModel::hidden(Tape& tape, const Bound& params, std::span<const PromptMatrix> group) const {
  for (const auto& a : group) check_prompt(a, spec_.d);
  const std::size_t b = group.size();
  const std::size_t n = group.front().rows();
  const std::size_t m = spec_.width;
  const std::size_t hd = m / spec_.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  std::size_t next = 0;
  auto take = [&]() -> const Var& { return params[next++]; };

  const Var& we = take();
  const Var& be = take();
  Var h = nd::add_bias(nd::matmul(stack_prompts(tape, group), we), be);  // [B*n, m]
  const feat::MaskMode mode = spec_.causal ? feat::MaskMode::StrictCausal : spec_.mask;
  // Causal attention keeps the diagonal; StrictCausal in the mask helper
  // removes it, so build the causal mask separately.
  std::optional<Tensor> mask;
  if (spec_.causal) {
    std::vector<double> mv(b * n * n, 0.0);
    for (std::size_t t = 0; t < b; ++t)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j) mv[(t * n + i) * n + j] = 1.0;
    mask = Tensor({b, n, n}, std::move(mv));
  } else if (mode != feat::MaskMode::None) {
    mask = attention_mask(b, 0, n, n, mode);
  }

  for (std::size_t l = 0; l < spec_.layers; ++l) {
    Var x = h;
    if (spec_.layer_norm) {
      const Var& g1 = take();
      const Var& b1 = take();
      x = nd::layer_norm(h, g1, b1);
    }
    const Var q = nd::reshape(nd::matmul(x, take()), {b, n, m});
    const Var kk = nd::reshape(nd::matmul(x, take()), {b, n, m});
    const Var v = nd::reshape(nd::matmul(x, take()), {b, n, m});
    Var heads;
    for (std::size_t hh = 0; hh < spec_.heads; ++hh) {
      const Var qh = spec_.heads == 1 ? q : nd::slice_last(q, hh * hd, hd);
      const Var kh = spec_.heads == 1 ? kk : nd::slice_last(kk, hh * hd, hd);
      const Var vh = spec_.heads == 1 ? v : nd::slice_last(v, hh * hd, hd);
      const Var scores = nd::scale(nd::batched_matmul(qh, nd::transpose(kh)), inv_sqrt);
      const Var out = nd::batched_matmul(nd::row_softmax(scores, mask), vh);
      heads = hh == 0 ? out : nd::concat_last(heads, out);
    }
    const Var& wo = take();
    const Var& bo = take();
    h = nd::add(h, nd::add_bias(nd::matmul(nd::reshape(heads, {b * n, m}), wo), bo));
    if (spec_.mlp) {
      Var y = h;
      if (spec_.layer_norm) {
        const Var& g2 = take();
        const Var& b2 = take();
        y = nd::layer_norm(h, g2, b2);
      }
      const Var& w1 = take();
      const Var& b1 = take();
      const Var& w2 = take();
      const Var& b2 = take();
      h = nd::add(h, nd::add_bias(nd::matmul(nd::gelu(nd::add_bias(nd::matmul(y, w1), b1)), w2), b2));
    }
  }
  if (spec_.layer_norm) {
    const Var& gf = take();
    const Var& bf = take();
    h = nd::layer_norm(h, gf, bf);
  }
  return nd::reshape(h, {b, n, m});
}

Var RefTransformerModel::forward(Tape& tape, const Bound& params, std::span<const PromptMatrix> prompts) const {
  const std::size_t count = params.vars.size();
  return for_each_length_group(prompts, [&](std::span<const PromptMatrix> group) {
    const Var h = hidden(tape, params, group);
    const Var q = nd::select_row(h, group.front().rows() - 1);  // [B, m]
    const Var out = nd::add_bias(nd::matmul(q, params[count - 2]), params[count - 1]);
    return nd::reshape(out, {group.size()});
  });
}

double ref_transformer_forward(const RefTransformerModel& model, const PromptMatrix& a) { return model.predict(a); }

// ---------------------------------------------------------------- checkpoints

void save_checkpoint(std::ostream& out, const Model& model, const nlohmann::json& extra) {
  nlohmann::json meta{{"spec", to_json(model.spec())}, {"extra", extra}};
  nlohmann::json arrays = nlohmann::json::array();
  for (const auto& e : model.params().entries()) arrays.push_back({{"name", e.name}, {"shape", e.value.shape()}});
  meta["arrays"] = std::move(arrays);
  out << "ICLCKPT v1\n" << meta.dump() << '\n';
  for (const auto& e : model.params().entries()) tasks::write_f64_le(out, e.value.data());
  if (!out) throw std::runtime_error("checkpoint write failed");
}

LoadedCheckpoint load_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "ICLCKPT v1") throw FormatError("checkpoint: bad header, expected 'ICLCKPT v1'");
  if (!std::getline(in, line)) throw FormatError("checkpoint: missing metadata line");
  LoadedCheckpoint ck;
  try {
    ck.meta = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what());
  }
  ck.model = make_model(model_spec_from_json(jsonutil::require_field(ck.meta, "checkpoint", "spec"), "checkpoint.spec"), 0);
  const auto& arrays = jsonutil::require_field(ck.meta, "checkpoint", "arrays");
  auto& params = ck.model->params();
  if (!arrays.is_array() || arrays.size() != params.size()) throw FormatError("checkpoint.arrays: count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& e = params[i];
    if (arrays[i].value("name", "") != e.name || arrays[i].value("shape", Shape{}) != e.value.shape()) {
      throw FormatError("checkpoint.arrays[" + std::to_string(i) + "]: expected " + e.name + " " +
                        nd::to_string(e.value.shape()));
    }
    std::vector<double> v(e.value.size());
    tasks::read_f64_le(in, v);
    params.set(i, Tensor(e.value.shape(), std::move(v)));
  }
  return ck;
}

}  // namespace icl::models
