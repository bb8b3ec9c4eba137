#include "icl/xcli/config.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "icl/errors.hpp"
#include "icl/jsonutil.hpp"

namespace icl::xcli {

namespace {

using jsonutil::get_bool;
using jsonutil::get_number;
using jsonutil::get_size;
using jsonutil::get_string;
using jsonutil::require_field;

// Kernels written as {"kind": "hilbert"} take the family's dimension.
void inject_hilbert_d(nlohmann::json& j, int d) {
  if (j.is_object()) {
    if (j.contains("kind") && j["kind"] == "hilbert" && !j.contains("d")) j["d"] = d;
    for (auto& [k, v] : j.items()) inject_hilbert_d(v, d);
  } else if (j.is_array()) {
    for (auto& v : j) inject_hilbert_d(v, d);
  }
}

void check_id(const std::string& id, const std::string& path) {
  if (id.empty()) throw FormatError(path + ": must not be empty");
  if (id.find_first_of(",\"\n\r") != std::string::npos) {
    throw FormatError(path + ": must not contain commas, quotes or newlines");
  }
}

std::vector<std::size_t> size_list(const nlohmann::json& v, const std::string& path) {
  std::vector<std::size_t> out;
  if (v.is_number_integer()) {
    if (v.get<long long>() < 1) throw FormatError(path + ": must be >= 1");
    out.push_back(v.get<std::size_t>());
    return out;
  }
  if (!v.is_array() || v.empty()) throw FormatError(path + ": expected a positive integer or a non-empty array");
  for (const auto& x : v) {
    if (!x.is_number_integer() || x.get<long long>() < 1) throw FormatError(path + ": entries must be integers >= 1");
    out.push_back(x.get<std::size_t>());
  }
  if (!std::is_sorted(out.begin(), out.end()) || std::adjacent_find(out.begin(), out.end()) != out.end()) {
    throw FormatError(path + ": values must be strictly ascending");
  }
  return out;
}

std::size_t single_size(const nlohmann::json& v, const std::string& path) {
  if (!v.is_number_integer() || v.get<long long>() < 1) throw FormatError(path + ": expected an integer >= 1");
  return v.get<std::size_t>();
}

SweepConfig sweep_from_json(const nlohmann::json& j, const std::string& path) {
  SweepConfig s;
  const std::string kind = get_string(j, path, "kind");
  if (kind == "task_scaling") {
    s.kind = SweepConfig::Kind::TaskScaling;
    s.ts = size_list(require_field(j, path, "T"), path + ".T");
    s.ns = {single_size(require_field(j, path, "N"), path + ".N")};
  } else if (kind == "context_scaling") {
    s.kind = SweepConfig::Kind::ContextScaling;
    s.ts = {single_size(require_field(j, path, "T"), path + ".T")};
    s.ns = size_list(require_field(j, path, "N"), path + ".N");
  } else {
    throw FormatError(path + ".kind: expected task_scaling or context_scaling, got '" + kind + "'");
  }
  if (j.contains("learners")) {
    const auto& l = j.at("learners");
    if (!l.is_array()) throw FormatError(path + ".learners: expected array of learner ids");
    for (const auto& id : l) {
      if (!id.is_string()) throw FormatError(path + ".learners: expected array of learner ids");
      s.learners.push_back(id.get<std::string>());
    }
  }
  return s;
}

std::size_t max_n(const BlockConfig& b) {
  std::size_t m = 0;
  for (const auto& s : b.sweeps)
    for (std::size_t n : s.ns) m = std::max(m, n);
  return m;
}

bool sweep_uses(const SweepConfig& s, const std::string& id) {
  return s.learners.empty() || std::find(s.learners.begin(), s.learners.end(), id) != s.learners.end();
}

BlockConfig block_from_json(const nlohmann::json& j, const std::string& path) {
  if (!j.is_object()) throw FormatError(path + ": expected object");
  BlockConfig b;
  b.family = tasks::family_from_json(require_field(j, path, "family"), path + ".family");
  const int d = tasks::input_dim(b.family);
  b.label = j.contains("label") ? get_string(j, path, "label") : tasks::family_kind(b.family);
  check_id(b.label, path + ".label");

  const auto& sweeps = require_field(j, path, "sweeps");
  if (!sweeps.is_array() || sweeps.empty()) throw FormatError(path + ".sweeps: expected a non-empty array");
  for (std::size_t i = 0; i < sweeps.size(); ++i) {
    b.sweeps.push_back(sweep_from_json(sweeps[i], path + ".sweeps[" + std::to_string(i) + "]"));
  }

  // T comes from the sweeps; "tasks" only needs to be present for parsing.
  nlohmann::json train_json = require_field(j, path, "train");
  if (train_json.is_object() && !train_json.contains("tasks")) {
    std::size_t t = 1;
    for (const auto& s : b.sweeps) t = std::max(t, s.ts.back());
    train_json["tasks"] = t;
  }
  b.train = train::train_config_from_json(train_json, path + ".train");

  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    const std::string ep = path + ".eval";
    if (!e.is_object()) throw FormatError(ep + ": expected object");
    b.eval_tasks = jsonutil::optional(e, "tasks", b.eval_tasks, [&] { return get_size(e, ep, "tasks"); });
    if (b.eval_tasks == 0) throw FormatError(ep + ".tasks: must be >= 1");
    b.eval_seed = jsonutil::optional<std::uint64_t>(e, "seed", 0, [&] { return get_size(e, ep, "seed"); });
    if (e.contains("noise_sigma")) b.noise_filter = get_number(e, ep, "noise_sigma");
  }

  const auto& learners = require_field(j, path, "learners");
  if (!learners.is_array() || learners.empty()) throw FormatError(path + ".learners: expected a non-empty array");
  std::set<std::string> ids;
  for (std::size_t i = 0; i < learners.size(); ++i) {
    const std::string lp = path + ".learners[" + std::to_string(i) + "]";
    const auto& lj = learners[i];
    LearnerConfig l;
    l.id = get_string(lj, lp, "id");
    check_id(l.id, lp + ".id");
    if (!ids.insert(l.id).second) throw FormatError(lp + ".id: duplicate learner id '" + l.id + "'");
    nlohmann::json tj = train_json;
    if (lj.contains("train")) tj.merge_patch(lj.at("train"));
    l.train = train::train_config_from_json(tj, lj.contains("train") ? lp + ".train" : path + ".train");
    const bool has_model = lj.contains("model");
    if (has_model == lj.contains("estimator")) throw FormatError(lp + ": needs exactly one of model or estimator");
    if (has_model) {
      nlohmann::json mj = lj.at("model");
      if (!mj.is_object()) throw FormatError(lp + ".model: expected object");
      if (!mj.contains("d")) mj["d"] = d;
      if (mj.value("kind", "") == "mlp" && !mj.contains("max_rows")) {
        mj["max_rows"] = std::max(l.train.max_context(), max_n(b)) + 1;
      }
      inject_hilbert_d(mj, d);
      l.model = models::model_spec_from_json(mj, lp + ".model");
      if (models::model_dim(*l.model) != d) throw FormatError(lp + ".model.d: does not match the family dimension");
    } else {
      nlohmann::json ej = lj.at("estimator");
      inject_hilbert_d(ej, d);
      l.estimator = estimator_from_json(ej, lp + ".estimator");
      validate_for_family(*l.estimator, b.family, lp + ".estimator");
    }
    b.learners.push_back(std::move(l));
  }

  for (std::size_t i = 0; i < b.sweeps.size(); ++i) {
    const std::string sp = path + ".sweeps[" + std::to_string(i) + "]";
    for (const auto& id : b.sweeps[i].learners) {
      if (!ids.count(id)) throw FormatError(sp + ".learners: unknown learner '" + id + "'");
    }
    for (const auto& l : b.learners) {
      if (!sweep_uses(b.sweeps[i], l.id) || !l.model) continue;
      const std::size_t n = b.sweeps[i].ns.back();
      if (n > l.train.max_context()) {
        throw FormatError(sp + ".N: " + std::to_string(n) + " exceeds the trained context lengths of '" + l.id + "'");
      }
      if (const auto* mlp = std::get_if<models::MLPSpec>(&*l.model); mlp && n + 1 > mlp->max_rows) {
        throw FormatError(sp + ".N: " + std::to_string(n) + " exceeds max_rows of '" + l.id + "'");
      }
    }
  }
  return b;
}

}  // namespace

ExperimentConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw FormatError("config: expected a JSON object");
  ExperimentConfig c;
  c.name = get_string(j, "config", "name");
  check_id(c.name, "config.name");
  if (c.name.find_first_of("/\\") != std::string::npos) throw FormatError("config.name: must not contain slashes");
  c.description = jsonutil::optional<std::string>(j, "description", "", [&] { return get_string(j, "config", "description"); });
  if (j.contains("seeds")) {
    const auto& s = j.at("seeds");
    if (!s.is_array() || s.empty()) throw FormatError("config.seeds: expected a non-empty array of integers");
    c.seeds.clear();
    for (const auto& v : s) {
      if (!v.is_number_integer() || v.get<long long>() < 0) {
        throw FormatError("config.seeds: expected non-negative integers");
      }
      c.seeds.push_back(v.get<std::uint64_t>());
    }
    auto sorted = c.seeds;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw FormatError("config.seeds: duplicate seed");
    }
  }
  c.threads = jsonutil::optional(j, "threads", c.threads, [&] { return get_size(j, "config", "threads"); });
  if (c.threads == 0) throw FormatError("config.threads: must be >= 1");
  c.checkpoints = jsonutil::optional(j, "checkpoints", true, [&] { return get_bool(j, "config", "checkpoints"); });

  if (j.contains("blocks")) {
    const auto& blocks = j.at("blocks");
    if (!blocks.is_array() || blocks.empty()) throw FormatError("config.blocks: expected a non-empty array");
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      c.blocks.push_back(block_from_json(blocks[i], "config.blocks[" + std::to_string(i) + "]"));
    }
  } else {
    // Single-block shorthand: block fields at the top level.
    c.blocks.push_back(block_from_json(j, "config"));
  }
  std::set<std::string> labels;
  for (std::size_t i = 0; i < c.blocks.size(); ++i) {
    if (!labels.insert(c.blocks[i].label).second) {
      throw FormatError("config.blocks[" + std::to_string(i) + "].label: duplicate label '" + c.blocks[i].label + "'");
    }
  }
  return c;
}

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : c.blocks) {
    nlohmann::json learners = nlohmann::json::array();
    for (const auto& l : b.learners) {
      nlohmann::json lj{{"id", l.id}, {"train", train::to_json(l.train)}};
      if (l.model) lj["model"] = models::to_json(*l.model);
      if (l.estimator) lj["estimator"] = to_json(*l.estimator);
      learners.push_back(std::move(lj));
    }
    nlohmann::json sweeps = nlohmann::json::array();
    for (const auto& s : b.sweeps) {
      nlohmann::json sj;
      if (s.kind == SweepConfig::Kind::TaskScaling) {
        sj = {{"kind", "task_scaling"}, {"T", s.ts}, {"N", s.ns.front()}};
      } else {
        sj = {{"kind", "context_scaling"}, {"T", s.ts.front()}, {"N", s.ns}};
      }
      if (!s.learners.empty()) sj["learners"] = s.learners;
      sweeps.push_back(std::move(sj));
    }
    nlohmann::json eval{{"tasks", b.eval_tasks}, {"seed", b.eval_seed}};
    if (b.noise_filter) eval["noise_sigma"] = *b.noise_filter;
    blocks.push_back({{"label", b.label},
                      {"family", tasks::to_json(b.family)},
                      {"train", train::to_json(b.train)},
                      {"eval", eval},
                      {"learners", learners},
                      {"sweeps", sweeps}});
  }
  return {{"name", c.name},     {"description", c.description}, {"seeds", c.seeds},
          {"threads", c.threads}, {"checkpoints", c.checkpoints}, {"blocks", blocks}};
}

std::vector<CellPlan> plan_cells(const BlockConfig& b, std::size_t block_index) {
  std::vector<CellPlan> cells;
  for (std::size_t li = 0; li < b.learners.size(); ++li) {
    std::map<std::size_t, std::set<std::size_t>> points;
    for (const auto& s : b.sweeps) {
      if (!sweep_uses(s, b.learners[li].id)) continue;
      for (std::size_t t : s.ts)
        for (std::size_t n : s.ns) points[t].insert(n);
    }
    for (const auto& [t, ns] : points) cells.push_back(CellPlan{block_index, li, t, {ns.begin(), ns.end()}});
  }
  return cells;
}

}  // namespace icl::xcli
