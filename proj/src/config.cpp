// Copyright 2026 The cuti Authors.
// SPDX-License-Identifier: Apache-2.0

#include "cuti/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>

#include "cuti/error.hpp"

namespace cuti {

using nlohmann::json;

namespace {

json patch_doc(const PatchSpec& p) {
  return {{"size", p.size}, {"corner", to_string(p.corner)}, {"offset_x", p.offset_x}, {"offset_y", p.offset_y},
          {"fill", p.fill}, {"value", p.value}, {"seed", p.seed}};
}

json make_defaults() {
  const SyntheticSpec syn;
  const TrainConfig tr;
  const SynthConfig sy;
  const AttackSpec at;
  const OutputConfig out;
  return {
      {"data",
       {{"kind", "synthetic"},
        {"synthetic",
         {{"n_classes", syn.n_classes}, {"n_per_class", syn.n_per_class}, {"image_size", syn.image_size},
          {"styles", syn.styles}, {"seed", syn.seed}}},
        {"idx", json::array()},
        {"root", ""},
        {"split_seed", 0},
        {"source", "plain"},
        {"target", "inverted"},
        {"eval_domains", json::array()}}},
      {"backbone", {{"blocks", {{16, 16}, {32, 32}, {64, 64}}}, {"head_hidden", 128}}},
      {"train",
       {{"mode", "sl"},
        {"max_epochs", tr.max_epochs},
        {"batch_size", tr.batch_size},
        {"seed", 0},
        {"optimizer", tr.optimizer.method},
        {"learning_rate", tr.optimizer.learning_rate},
        {"momentum", tr.optimizer.momentum},
        {"weight_decay", tr.optimizer.weight_decay}}},
      {"loss",
       {{"variant", "alternating"},
        {"epsilon_y", tr.loss.epsilon_y},
        {"clamp", tr.loss.clamp},
        {"phase_offset", tr.loss.phase_offset}}},
      {"synth",
       {{"noisy_adain_fraction", sy.noisy_adain_fraction}, {"noise_scale", sy.noise_scale},
        {"style_source", sy.style_source}, {"invert_prob", sy.invert_prob}, {"hue_jitter", sy.hue_jitter},
        {"contrast_jitter", sy.contrast_jitter}, {"brightness_jitter", sy.brightness_jitter},
        {"max_shift", sy.max_shift}}},
      {"protocol",
       {{"patch", patch_doc(PatchSpec{})},
        {"sl_control", true},
        {"ablation_variants", {"L1", "L2", "L3", "alternating"}},
        {"attack",
         {{"kind", "ftal"}, {"epochs", at.epochs}, {"learning_rate", at.learning_rate},
          {"data_fraction", at.data_fraction}, {"optimizer", at.optimizer}, {"batch_size", at.batch_size},
          {"seed", 0}, {"ewc_lambda", at.ewc_lambda}, {"fisher_samples", at.fisher_samples},
          {"attacker_patch", patch_doc(at.attacker_patch)}, {"attacker_label", at.attacker_label},
          {"attacker_poison_fraction", at.attacker_poison_fraction}}}}},
      {"output", {{"dir", out.dir}, {"report_formats", out.report_formats}}},
  };
}

const json kIdxEntryDefaults = {{"name", ""}, {"images", ""}, {"labels", ""}, {"channels", 0}};

bool same_kind(const json& def, const json& v) {
  if (def.is_number_integer() || def.is_number_unsigned()) return v.is_number_integer() || v.is_number_unsigned();
  if (def.is_number()) return v.is_number();
  if (def.is_string()) return v.is_string();
  if (def.is_boolean()) return v.is_boolean();
  if (def.is_object()) return v.is_object();
  if (def.is_array()) return v.is_array();
  return false;
}

void merge_checked(json& base, const json& user, const std::string& path) {
  if (!user.is_object()) throw ConfigError(path.empty() ? "config must be an object" : path + ": expected an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError(key + ": unknown key");
    json& slot = base[it.key()];
    if (!same_kind(slot, it.value())) throw ConfigError(key + ": wrong type");
    if (slot.is_object()) {
      merge_checked(slot, it.value(), key);
    } else if (key == "data.idx") {
      json items = json::array();
      for (std::size_t i = 0; i < it.value().size(); ++i) {
        json entry = kIdxEntryDefaults;
        merge_checked(entry, it.value()[i], key + "[" + std::to_string(i) + "]");
        items.push_back(entry);
      }
      slot = items;
    } else {
      slot = it.value();
    }
  }
}

template <class T>
T get(const json& doc, const std::string& dotted) {
  const json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted.find('.', start);
    node = &node->at(dotted.substr(start, dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  try {
    return node->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(dotted + ": wrong type");
  }
}

PatchSpec patch_from(const json& j, const std::string& where) {
  PatchSpec p;
  p.size = j.at("size").get<int>();
  try {
    p.corner = corner_from_string(j.at("corner").get<std::string>());
  } catch (const InvalidInput& e) {
    throw ConfigError(where + ".corner: " + e.what());
  }
  p.offset_x = j.at("offset_x").get<int>();
  p.offset_y = j.at("offset_y").get<int>();
  p.fill = j.at("fill").get<std::string>();
  p.value = j.at("value").get<double>();
  p.seed = j.at("seed").get<std::uint64_t>();
  return p;
}

std::vector<std::string> string_list(const json& doc, const std::string& dotted) {
  const json list = get<json>(doc, dotted);
  std::vector<std::string> out;
  for (const auto& v : list) {
    if (!v.is_string()) throw ConfigError(dotted + ": expected a list of strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

}  // namespace

const json& default_config_document() {
  static const json doc = make_defaults();
  return doc;
}

void apply_override(json& doc, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not section.key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (value.is_discarded()) value = text;

  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("override '" + assignment + "' has an empty key");
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

std::string config_hash(const json& doc) {
  json hashed = doc;
  hashed.erase("output");
  const std::string text = hashed.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ExperimentConfig parse_experiment_config(const json& user_doc, const std::vector<std::string>& overrides) {
  json user = user_doc.is_null() ? json::object() : user_doc;
  for (const auto& o : overrides) apply_override(user, o);
  json doc = default_config_document();
  merge_checked(doc, user, "");

  ExperimentConfig c;
  c.document = doc;
  c.hash = config_hash(doc);

  DataConfig& d = c.data;
  d.kind = get<std::string>(doc, "data.kind");
  if (d.kind != "synthetic" && d.kind != "idx") throw ConfigError("data.kind: expected 'synthetic' or 'idx'");
  d.synthetic.n_classes = get<int>(doc, "data.synthetic.n_classes");
  d.synthetic.n_per_class = get<int>(doc, "data.synthetic.n_per_class");
  d.synthetic.image_size = get<int>(doc, "data.synthetic.image_size");
  d.synthetic.styles = string_list(doc, "data.synthetic.styles");
  d.synthetic.seed = get<std::uint64_t>(doc, "data.synthetic.seed");
  for (const auto& e : doc["data"]["idx"]) {
    d.idx.push_back({e.at("name").get<std::string>(), e.at("images").get<std::string>(),
                     e.at("labels").get<std::string>(), e.at("channels").get<int>()});
  }
  d.root = get<std::string>(doc, "data.root");
  d.split_seed = get<std::uint64_t>(doc, "data.split_seed");
  d.source = get<std::string>(doc, "data.source");
  d.target = get<std::string>(doc, "data.target");
  d.eval_domains = string_list(doc, "data.eval_domains");
  if (d.kind == "idx" && d.idx.empty()) throw ConfigError("data.idx: at least one domain is required for kind 'idx'");

  const json blocks = get<json>(doc, "backbone.blocks");
  for (const auto& b : blocks) {
    if (!b.is_array()) throw ConfigError("backbone.blocks: expected a list of channel lists");
    BlockSpec spec;
    for (const auto& ch : b) {
      if (!ch.is_number_integer()) throw ConfigError("backbone.blocks: channel counts must be integers");
      spec.conv_channels.push_back(ch.get<int>());
    }
    c.blocks.push_back(spec);
  }
  c.head_hidden = get<int>(doc, "backbone.head_hidden");

  c.mode = get<std::string>(doc, "train.mode");
  static const std::vector<std::string> kModes{"sl", "target_specified", "target_free", "ownership", "authorization",
                                               "ablation"};
  if (std::find(kModes.begin(), kModes.end(), c.mode) == kModes.end()) {
    throw ConfigError("train.mode: unknown mode '" + c.mode + "'");
  }
  TrainConfig& t = c.train;
  t.mode = c.mode == "sl" ? TrainMode::SL : c.mode == "target_free" ? TrainMode::TargetFree : TrainMode::TargetSpecified;
  t.max_epochs = get<int>(doc, "train.max_epochs");
  t.batch_size = get<int>(doc, "train.batch_size");
  t.seed = get<std::uint64_t>(doc, "train.seed");
  t.optimizer.method = get<std::string>(doc, "train.optimizer");
  t.optimizer.learning_rate = get<double>(doc, "train.learning_rate");
  t.optimizer.momentum = get<double>(doc, "train.momentum");
  t.optimizer.weight_decay = get<double>(doc, "train.weight_decay");

  try {
    t.loss.variant = loss_variant_from_string(get<std::string>(doc, "loss.variant"));
  } catch (const InvalidInput& e) {
    throw ConfigError(std::string("loss.variant: ") + e.what());
  }
  t.loss.epsilon_y = get<double>(doc, "loss.epsilon_y");
  t.loss.clamp = get<double>(doc, "loss.clamp");
  t.loss.phase_offset = get<int>(doc, "loss.phase_offset");

  SynthConfig& s = t.synth;
  s.noisy_adain_fraction = get<double>(doc, "synth.noisy_adain_fraction");
  s.noise_scale = get<double>(doc, "synth.noise_scale");
  s.style_source = get<std::string>(doc, "synth.style_source");
  s.invert_prob = get<double>(doc, "synth.invert_prob");
  s.hue_jitter = get<double>(doc, "synth.hue_jitter");
  s.contrast_jitter = get<double>(doc, "synth.contrast_jitter");
  s.brightness_jitter = get<double>(doc, "synth.brightness_jitter");
  s.max_shift = get<int>(doc, "synth.max_shift");

  c.patch = patch_from(doc["protocol"]["patch"], "protocol.patch");
  c.sl_control = get<bool>(doc, "protocol.sl_control");
  c.ablation_variants = string_list(doc, "protocol.ablation_variants");
  const json& a = doc["protocol"]["attack"];
  try {
    c.attack.kind = attack_kind_from_string(a.at("kind").get<std::string>());
  } catch (const InvalidInput& e) {
    throw ConfigError(std::string("protocol.attack.kind: ") + e.what());
  }
  c.attack.epochs = a.at("epochs").get<int>();
  c.attack.learning_rate = a.at("learning_rate").get<double>();
  c.attack.data_fraction = a.at("data_fraction").get<double>();
  c.attack.optimizer = a.at("optimizer").get<std::string>();
  c.attack.batch_size = a.at("batch_size").get<int>();
  c.attack.seed = a.at("seed").get<std::uint64_t>();
  c.attack.ewc_lambda = a.at("ewc_lambda").get<double>();
  c.attack.fisher_samples = a.at("fisher_samples").get<int>();
  c.attack.attacker_patch = patch_from(a.at("attacker_patch"), "protocol.attack.attacker_patch");
  c.attack.attacker_label = a.at("attacker_label").get<int>();
  c.attack.attacker_poison_fraction = a.at("attacker_poison_fraction").get<double>();

  c.output.dir = get<std::string>(doc, "output.dir");
  c.output.report_formats = string_list(doc, "output.report_formats");

  // Field-level validation, re-labelled as config errors.
  const auto check = [](const char* section, auto&& fn) {
    try {
      fn();
    } catch (const InvalidInput& e) {
      throw ConfigError(std::string(section) + ": " + e.what());
    }
  };
  check("data.synthetic", [&] { d.synthetic.validate(); });
  check("train", [&] { t.validate(); });
  check("protocol.patch", [&] { c.patch.validate(); });
  check("protocol.attack", [&] { c.attack.validate(); });
  check("protocol.ablation_variants", [&] {
    for (const auto& v : c.ablation_variants) loss_variant_from_string(v);
  });
  check("output.report_formats", [&] {
    for (const auto& f : c.output.report_formats) report_format_from_string(f);
  });
  if (c.head_hidden < 0) throw ConfigError("backbone.head_hidden: must be >= 0");
  if (c.blocks.empty()) throw ConfigError("backbone.blocks: at least one block is required");
  for (const auto& b : c.blocks) {
    if (b.conv_channels.empty()) throw ConfigError("backbone.blocks: every block needs at least one conv");
    for (int ch : b.conv_channels)
      if (ch < 1) throw ConfigError("backbone.blocks: channel counts must be >= 1");
  }
  if (d.kind == "synthetic") {
    const auto& styles = d.synthetic.styles;
    const auto known = [&](const std::string& n) { return std::find(styles.begin(), styles.end(), n) != styles.end(); };
    if (!known(d.source)) throw ConfigError("data.source: '" + d.source + "' is not among data.synthetic.styles");
    if (c.mode == "target_specified" && !known(d.target)) {
      throw ConfigError("data.target: '" + d.target + "' is not among data.synthetic.styles");
    }
    for (const auto& e : d.eval_domains)
      if (!known(e)) throw ConfigError("data.eval_domains: '" + e + "' is not among data.synthetic.styles");
  }
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  json doc = json::parse(in, nullptr, /*allow_exceptions=*/false, /*ignore_comments=*/true);
  if (doc.is_discarded()) throw ConfigError(path.string() + ": not valid JSON");
  return parse_experiment_config(doc, overrides);
}

std::filesystem::path data_root(const DataConfig& data) {
  if (!data.root.empty()) return data.root;
  if (const char* env = std::getenv("CUTI_DATA_DIR"); env && *env) return env;
  return std::filesystem::current_path();
}

std::vector<DomainDataset> load_domains(const DataConfig& data) {
  if (data.kind == "synthetic") return make_synthetic_domains(data.synthetic);
  const std::filesystem::path root = data_root(data);
  std::vector<DomainDataset> out;
  for (const auto& e : data.idx) {
    LabeledBatch all = load_idx_dataset(root / e.images, root / e.labels);
    if (e.channels > 0 && all.images.dim(1) != e.channels) all = replicate_channels(all, e.channels);
    DomainDataset d;
    d.name = e.name;
    std::tie(d.train, d.test) = split_and_shuffle(all, data.split_seed);
    int max_label = 0;
    for (int y : all.labels) max_label = std::max(max_label, y);
    d.num_classes = max_label + 1;
    d.image_shape = {all.images.dim(1), all.images.dim(2), all.images.dim(3)};
    out.push_back(std::move(d));
  }
  int k = 0;
  for (const auto& d : out) k = std::max(k, d.num_classes);
  for (auto& d : out) d.num_classes = k;
  return out;
}

const DomainDataset& find_domain(const std::vector<DomainDataset>& domains, const std::string& name) {
  for (const auto& d : domains)
    if (d.name == name) return d;
  throw InvalidInput("no domain named '" + name + "'");
}

BackboneSpec backbone_for(const ExperimentConfig& config, const DomainDataset& domain) {
  BackboneSpec spec;
  spec.in_channels = domain.image_shape[0];
  spec.in_height = domain.image_shape[1];
  spec.in_width = domain.image_shape[2];
  spec.blocks = config.blocks;
  spec.head_hidden = config.head_hidden;
  spec.num_classes = domain.num_classes;
  spec.validate();
  return spec;
}

}  // namespace cuti
