#include "varjepa/cli.hpp"

#include "varjepa/errors.hpp"

#include <cstdio>
#include <set>

namespace varjepa {

namespace {

/// Walks a JSON object, remembering which keys were read so leftovers can be
/// reported as unknown.
class Reader {
 public:
  Reader(const nlohmann::json& j, std::string path, std::vector<std::string>& unknown)
      : j_(j), path_(std::move(path)), unknown_(unknown) {
    if (!j_.is_object()) throw ConfigError("config: '" + display() + "' must be an object");
  }
  ~Reader() {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) unknown_.push_back(path_.empty() ? k : path_ + "." + k);
    }
  }
  Reader(const Reader&) = delete;
  Reader& operator=(const Reader&) = delete;

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config: '" + child(key) + "' has the wrong type");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }

  Reader sub(const char* key) {
    seen_.insert(key);
    static const nlohmann::json empty = nlohmann::json::object();
    auto it = j_.find(key);
    return Reader(it == j_.end() ? empty : *it, child(key), unknown_);
  }

 private:
  std::string display() const { return path_.empty() ? "<root>" : path_; }
  std::string child(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  const nlohmann::json& j_;
  std::string path_;
  std::vector<std::string>& unknown_;
  std::set<std::string> seen_;
};

void throw_unknown(const std::vector<std::string>& unknown) {
  if (unknown.empty()) return;
  std::string msg = "config: unknown keys:";
  for (const auto& k : unknown) msg += " " + k;
  throw ConfigError(msg);
}

Activation parse_activation(const std::string& s) {
  try {
    return activation_from_string(s);
  } catch (const ConfigError&) {
    throw ConfigError("config: unknown activation '" + s + "'");
  }
}

void read_weights(Reader r, LossWeights& w) {
  r.get("alpha_rec", w.alpha_rec);
  r.get("alpha_gen", w.alpha_gen);
  r.get("alpha_kl_sx", w.alpha_kl_sx);
  r.get("alpha_kl_z", w.alpha_kl_z);
  r.get("alpha_kl_sy", w.alpha_kl_sy);
  r.get("lambda_sx", w.lambda_sx);
  r.get("lambda_sy", w.lambda_sy);
}

nlohmann::json weights_json(const LossWeights& w) {
  return {{"alpha_rec", w.alpha_rec},     {"alpha_gen", w.alpha_gen}, {"alpha_kl_sx", w.alpha_kl_sx},
          {"alpha_kl_z", w.alpha_kl_z},   {"alpha_kl_sy", w.alpha_kl_sy}, {"lambda_sx", w.lambda_sx},
          {"lambda_sy", w.lambda_sy}};
}

void read_optim(Reader r, AdamWConfig& o) {
  r.get("lr", o.lr);
  r.get("weight_decay", o.weight_decay);
  r.get("beta1", o.beta1);
  r.get("beta2", o.beta2);
  r.get("eps", o.eps);
}

nlohmann::json optim_json(const AdamWConfig& o) {
  return {{"lr", o.lr}, {"weight_decay", o.weight_decay}, {"beta1", o.beta1}, {"beta2", o.beta2}, {"eps", o.eps}};
}

void read_probe(Reader r, ProbeConfig& p) {
  r.get("epochs", p.epochs);
  r.get("lr", p.lr);
  r.get("weight_decay", p.weight_decay);
  r.get("batch_size", p.batch_size);
  r.get("train_fraction", p.train_fraction);
}

nlohmann::json probe_json(const ProbeConfig& p) {
  return {{"epochs", p.epochs},
          {"lr", p.lr},
          {"weight_decay", p.weight_decay},
          {"batch_size", p.batch_size},
          {"train_fraction", p.train_fraction}};
}

}  // namespace

RunKind config_kind(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("kind") || !j.at("kind").is_string()) {
    throw ConfigError("config: missing string field 'kind' (simulation | tabular)");
  }
  const std::string k = j.at("kind").get<std::string>();
  if (k == "simulation") return RunKind::simulation;
  if (k == "tabular") return RunKind::tabular;
  throw ConfigError("config: unknown kind '" + k + "'");
}

SimulationRunConfig simulation_config_from_json(const nlohmann::json& j) {
  if (config_kind(j) != RunKind::simulation) throw ConfigError("config: expected kind 'simulation'");
  std::string variant = "A";
  if (j.contains("variant")) {
    if (!j.at("variant").is_string()) throw ConfigError("config: 'variant' has the wrong type");
    variant = j.at("variant").get<std::string>();
  }
  SimulationRunConfig c;
  if (variant.size() == 1 && variant[0] >= 'A' && variant[0] <= 'J') {
    c.variant = make_variant(variant[0]);
  } else {
    c.variant.id = variant;  // custom: defaults are variant A's weights
  }
  std::vector<std::string> unknown;
  {
    Reader r(j, "", unknown);
    std::string kind;
    r.get("kind", kind);
    r.get("variant", variant);
    VariantConfig& v = c.variant;
    r.get("seed", v.seed);
    r.get("epochs", v.epochs);
    r.get("batch_size", v.batch_size);
    read_weights(r.sub("weights"), v.weights);
    {
      Reader a = r.sub("anneal");
      a.get("kl_sx_steps", v.anneal_steps_kl_sx);
      a.get("kl_z_steps", v.anneal_steps_kl_z);
      a.get("kl_sy_steps", v.anneal_steps_kl_sy);
      a.get("start_step", v.anneal_start);
    }
    read_optim(r.sub("optimizer"), v.optim);
    {
      Reader m = r.sub("model");
      m.get("d_obs", v.dims.d_obs);
      m.get("d_s", v.dims.d_s);
      m.get("d_z", v.dims.d_z);
      m.get("hidden", v.dims.hidden);
      m.get("depth", v.dims.depth);
      std::string act = to_string(v.dims.activation);
      m.get("activation", act);
      v.dims.activation = parse_activation(act);
    }
    {
      Reader s = r.sub("sigreg");
      s.get("n_directions", v.sigreg.n_directions);
      s.get("n_frequencies", v.sigreg.cf.n_frequencies);
      s.get("max_frequency", v.sigreg.cf.max_frequency);
      std::string w = v.sigreg.cf.weighting == CfWeighting::uniform ? "uniform" : "gaussian";
      s.get("weighting", w);
      if (w == "uniform") {
        v.sigreg.cf.weighting = CfWeighting::uniform;
      } else if (w == "gaussian") {
        v.sigreg.cf.weighting = CfWeighting::gaussian;
      } else {
        throw ConfigError("config: sigreg.weighting must be 'uniform' or 'gaussian'");
      }
    }
    read_probe(r.sub("probe"), v.probe);
    {
      Reader d = r.sub("diagnostics");
      std::string emb = c.diag_embedding == EmbeddingSource::sample ? "sample" : "mean";
      d.get("embedding", emb);
      if (emb == "sample") {
        c.diag_embedding = EmbeddingSource::sample;
      } else if (emb == "mean") {
        c.diag_embedding = EmbeddingSource::mean;
      } else {
        throw ConfigError("config: diagnostics.embedding must be 'sample' or 'mean'");
      }
      d.get("n_eval", c.n_eval);
    }
  }
  throw_unknown(unknown);
  if (c.n_eval < 0) throw ConfigError("config: diagnostics.n_eval must be >= 0");
  try {
    c.variant.validate();
  } catch (const InvalidInput& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

nlohmann::json to_json(const SimulationRunConfig& c) {
  const VariantConfig& v = c.variant;
  return {{"kind", "simulation"},
          {"variant", v.id},
          {"seed", v.seed},
          {"epochs", v.epochs},
          {"batch_size", v.batch_size},
          {"weights", weights_json(v.weights)},
          {"anneal",
           {{"kl_sx_steps", v.anneal_steps_kl_sx},
            {"kl_z_steps", v.anneal_steps_kl_z},
            {"kl_sy_steps", v.anneal_steps_kl_sy},
            {"start_step", v.anneal_start}}},
          {"optimizer", optim_json(v.optim)},
          {"model",
           {{"d_obs", v.dims.d_obs},
            {"d_s", v.dims.d_s},
            {"d_z", v.dims.d_z},
            {"hidden", v.dims.hidden},
            {"depth", v.dims.depth},
            {"activation", to_string(v.dims.activation)}}},
          {"sigreg",
           {{"n_directions", v.sigreg.n_directions},
            {"n_frequencies", v.sigreg.cf.n_frequencies},
            {"max_frequency", v.sigreg.cf.max_frequency},
            {"weighting", v.sigreg.cf.weighting == CfWeighting::uniform ? "uniform" : "gaussian"}}},
          {"probe", probe_json(v.probe)},
          {"diagnostics",
           {{"embedding", c.diag_embedding == EmbeddingSource::sample ? "sample" : "mean"}, {"n_eval", c.n_eval}}}};
}

TabularRunConfig tabular_config_from_json(const nlohmann::json& j) {
  if (config_kind(j) != RunKind::tabular) throw ConfigError("config: expected kind 'tabular'");
  TabularRunConfig c;
  TabularConfig& t = c.train;
  std::vector<std::string> unknown;
  {
    Reader r(j, "", unknown);
    std::string kind;
    r.get("kind", kind);
    r.get("seed", t.seed);
    r.get("epochs", t.epochs);
    r.get("batch_size", t.batch_size);
    r.get("K", t.K);
    {
      Reader m = r.sub("masks");
      m.get("ctx_min", t.ratios.ctx_min);
      m.get("ctx_max", t.ratios.ctx_max);
      m.get("trg_min", t.ratios.trg_min);
      m.get("trg_max", t.ratios.trg_max);
      m.get("max_retries", t.max_mask_retries);
    }
    read_weights(r.sub("weights"), t.weights);
    {
      Reader a = r.sub("anneal_epochs");
      a.get("kl_sx", t.anneal_epochs_sx);
      a.get("kl_z", t.anneal_epochs_z);
      a.get("kl_sy", t.anneal_epochs_sy);
    }
    read_optim(r.sub("optimizer"), t.optim);
    {
      Reader m = r.sub("model");
      m.get("latent", t.dims.latent);
      m.get("aux", t.dims.aux);
      m.get("hidden", t.dims.hidden);
      m.get("depth", t.dims.depth);
      std::string act = to_string(t.dims.activation);
      m.get("activation", act);
      t.dims.activation = parse_activation(act);
    }
    read_probe(r.sub("probe"), t.probe);
    {
      Reader s = r.sub("selection");
      s.get("probe_every", t.probe_every);
      s.get("patience", t.patience);
      s.get("drop_fraction", t.probe_drop);
      s.get("val_fraction", t.val_fraction);
    }
    {
      Reader e = r.sub("evaluation");
      std::string agg = c.uncertainty == UncertaintyAgg::p90 ? "p90" : "mean";
      e.get("uncertainty", agg);
      if (agg == "p90") {
        c.uncertainty = UncertaintyAgg::p90;
      } else if (agg == "mean") {
        c.uncertainty = UncertaintyAgg::mean;
      } else {
        throw ConfigError("config: evaluation.uncertainty must be 'mean' or 'p90'");
      }
      e.get("test_fraction", c.test_fraction);
    }
  }
  throw_unknown(unknown);
  if (!(c.test_fraction > 0.0 && c.test_fraction < 1.0)) throw ConfigError("config: test_fraction must lie in (0, 1)");
  try {
    t.validate();
  } catch (const InvalidInput& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

nlohmann::json to_json(const TabularRunConfig& c) {
  const TabularConfig& t = c.train;
  return {{"kind", "tabular"},
          {"seed", t.seed},
          {"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"K", t.K},
          {"masks",
           {{"ctx_min", t.ratios.ctx_min},
            {"ctx_max", t.ratios.ctx_max},
            {"trg_min", t.ratios.trg_min},
            {"trg_max", t.ratios.trg_max},
            {"max_retries", t.max_mask_retries}}},
          {"weights", weights_json(t.weights)},
          {"anneal_epochs", {{"kl_sx", t.anneal_epochs_sx}, {"kl_z", t.anneal_epochs_z}, {"kl_sy", t.anneal_epochs_sy}}},
          {"optimizer", optim_json(t.optim)},
          {"model",
           {{"latent", t.dims.latent},
            {"aux", t.dims.aux},
            {"hidden", t.dims.hidden},
            {"depth", t.dims.depth},
            {"activation", to_string(t.dims.activation)}}},
          {"probe", probe_json(t.probe)},
          {"selection",
           {{"probe_every", t.probe_every},
            {"patience", t.patience},
            {"drop_fraction", t.probe_drop},
            {"val_fraction", t.val_fraction}}},
          {"evaluation",
           {{"uncertainty", c.uncertainty == UncertaintyAgg::p90 ? "p90" : "mean"}, {"test_fraction", c.test_fraction}}}};
}

std::string config_hash(const nlohmann::json& j) {
  const std::string s = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace varjepa
