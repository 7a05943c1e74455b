#include "tilemark/run_config.hpp"

#include "tilemark/error.hpp"

namespace tilemark {

namespace {

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  std::uint64_t v = 0;
  try {
    v = std::stoull(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (value.empty() || used != value.size() || value[0] == '-') {
    throw ConfigError(key + ": expected a non-negative integer, got '" + value + "'");
  }
  return v;
}

RunConfig desk_base(ModelKind kind) {
  RunConfig r;
  r.model.kind = kind;
  r.model.basic = BasicUNetConfig::desk();
  r.model.improved = ImprovedUNetConfig::desk();
  r.model.transunet = TransUNetConfig::desk();
  r.train = TrainConfig::paper_preset(kind);
  r.train.batch_size = 2;
  return r;
}

}  // namespace

std::string to_string(GradeStatistic statistic) {
  return statistic == GradeStatistic::kCellFractions ? "cell" : "image";
}

GradeStatistic grade_statistic_from_string(const std::string& name) {
  if (name == "cell") return GradeStatistic::kCellFractions;
  if (name == "image") return GradeStatistic::kImageFractions;
  throw ConfigError("unknown grade statistic '" + name + "' (cell|image)");
}

void DataConfig::validate() const {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("data.val_fraction must lie in (0, 1)");
  if (augment_factor < 1) throw ConfigError("data.augment_factor must be >= 1");
}

void EvalConfig::validate() const {
  GradeThresholds t;
  t.pixel_positive_threshold = pixel_threshold;
  if (grade_thresholds) std::tie(t.t1, t.t2) = *grade_thresholds;
  t.validate();
}

std::vector<std::string> RunConfig::preset_names() {
  return {"basic_unet_paper", "improved_unet_paper", "transunet_paper", "basic_unet_desk",
          "improved_unet_desk", "transunet_desk", "tiny"};
}

RunConfig RunConfig::preset(const std::string& name) {
  RunConfig r;
  if (name == "basic_unet_paper" || name == "improved_unet_paper" || name == "transunet_paper") {
    const auto kind = model_kind_from_string(name.substr(0, name.size() - 6));
    r.model.kind = kind;
    r.train = TrainConfig::paper_preset(kind);
    r.data.augment_factor = 12;
    return r;
  }
  if (name == "basic_unet_desk") {
    r = desk_base(ModelKind::kBasicUNet);
    r.train.max_epochs = 60;
    r.train.patience = 10;
    return r;
  }
  if (name == "improved_unet_desk") {
    r = desk_base(ModelKind::kImprovedUNet);
    r.train.max_epochs = 30;
    return r;
  }
  if (name == "transunet_desk") {
    r = desk_base(ModelKind::kTransUNet);
    r.train.max_epochs = 30;
    r.train.schedule = ScheduleSpec::poly(0.01, 30, 0.9);
    return r;
  }
  if (name == "tiny") {
    r = desk_base(ModelKind::kImprovedUNet);
    r.model.improved.base_channels = 4;
    r.train.max_epochs = 2;
    return r;
  }
  throw ConfigError("unknown preset '" + name + "'");
}

RunConfig RunConfig::from_kv(const KeyValueConfig& kv) {
  RunConfig base;
  KeyValueConfig merged;
  if (auto preset_name = kv.get("preset")) {
    base = preset(*preset_name);
    if (auto kind = kv.get("model.kind"); kind && model_kind_from_string(*kind) != base.model.kind) {
      throw ConfigError("model.kind = " + *kind + " conflicts with preset " + *preset_name);
    }
  } else {
    const auto kind = model_kind_from_string(kv.get("model.kind").value_or("improved_unet"));
    base.model.kind = kind;
    base.train = TrainConfig::paper_preset(kind);
  }
  merged = base.to_kv();
  for (const auto& [key, value] : kv.items()) {
    if (key == "preset") continue;
    const auto dot = key.find('.');
    const std::string section = dot == std::string::npos ? "" : key.substr(0, dot);
    if (section != "model" && section != "train" && section != "data" && section != "eval") {
      throw ConfigError("unknown key '" + key + "'");
    }
    if (section == "model" && !merged.contains(key)) {
      throw ConfigError("unknown key '" + key + "' for model kind " + to_string(base.model.kind));
    }
    merged.set(key, value);
  }

  RunConfig r;
  r.model = read_model_config(merged);
  r.train = read_train_config(merged, r.model.kind);
  for (const auto& [key, value] : merged.items()) {
    if (key.rfind("data.", 0) == 0) {
      const auto k = key.substr(5);
      if (k == "val_fraction") r.data.val_fraction = parse_double(key, value);
      else if (k == "split_seed") r.data.split_seed = parse_u64(key, value);
      else if (k == "augment_factor") r.data.augment_factor = parse_int(key, value);
      else if (k == "augment_seed") r.data.augment_seed = parse_u64(key, value);
      else throw ConfigError("unknown key '" + key + "'");
    } else if (key.rfind("eval.", 0) == 0) {
      const auto k = key.substr(5);
      if (k == "grade_thresholds") {
        if (value == "auto") {
          r.eval.grade_thresholds.reset();
        } else {
          const auto comma = value.find(',');
          if (comma == std::string::npos) throw ConfigError(key + ": expected 'auto' or t1,t2");
          r.eval.grade_thresholds = std::pair{parse_double(key, value.substr(0, comma)),
                                              parse_double(key, value.substr(comma + 1))};
        }
      } else if (k == "pixel_threshold") {
        r.eval.pixel_threshold = parse_double(key, value);
      } else if (k == "grade_statistic") {
        r.eval.grade_statistic = grade_statistic_from_string(value);
      } else {
        throw ConfigError("unknown key '" + key + "'");
      }
    }
  }
  r.validate();
  return r;
}

KeyValueConfig RunConfig::to_kv() const {
  KeyValueConfig kv;
  write_model_config(model, kv);
  write_train_config(train, kv);
  kv.set("data.val_fraction", format_double(data.val_fraction));
  kv.set("data.split_seed", std::to_string(data.split_seed));
  kv.set("data.augment_factor", std::to_string(data.augment_factor));
  kv.set("data.augment_seed", std::to_string(data.augment_seed));
  kv.set("eval.grade_thresholds",
         eval.grade_thresholds ? format_double(eval.grade_thresholds->first) + "," +
                                     format_double(eval.grade_thresholds->second)
                               : "auto");
  kv.set("eval.pixel_threshold", format_double(eval.pixel_threshold));
  kv.set("eval.grade_statistic", to_string(eval.grade_statistic));
  return kv;
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  if (train.model != model.kind) throw ConfigError("train settings belong to another model kind");
  data.validate();
  eval.validate();
}

}  // namespace tilemark
