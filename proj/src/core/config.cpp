#include "core/config.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <stdexcept>

#include "core/errors.hpp"
#include "core/geometry.hpp"
#include "core/io_util.hpp"

namespace scpc::pipeline {

namespace {

enum class KeyType { boolean, integer, real, text, int_list, real_list, text_list };

struct KeySpec {
  const char* name;
  KeyType type;
  const char* default_value;
  const char* description;
};

const std::vector<KeySpec>& registry() {
  static const std::vector<KeySpec> specs = {
      {"out_dir", KeyType::text, "runs/default", "run directory"},
      {"seed", KeyType::integer, "1", "master seed"},

      {"data.kinds", KeyType::text_list, "sphere,cube,cylinder",
       "shape kinds; index in this list is the class id"},
      {"data.points", KeyType::integer, "256", "points per cloud"},
      {"data.sigma", KeyType::real, "0.02", "generation jitter sigma"},
      {"data.train_count", KeyType::integer, "48", "train clouds (round-robin over kinds)"},
      {"data.test_count", KeyType::integer, "24", "test clouds"},

      {"patch.count", KeyType::integer, "16", "patch centers per cloud"},
      {"patch.k", KeyType::integer, "8", "neighbors per patch"},
      {"patch.dilation", KeyType::integer, "2", "positive-sample dilation"},

      {"e1.widths", KeyType::int_list, "32,32", "similarity encoder layer widths"},
      {"e1.out_dim", KeyType::integer, "16", "similarity encoder output dim"},
      {"e1.knn_k", KeyType::integer, "8", "similarity encoder graph k"},
      {"e1.dynamic_graph", KeyType::boolean, "true", "rebuild graph in feature space"},

      {"e2.widths", KeyType::int_list, "32,32,32,32", "representation encoder widths"},
      {"e2.out_dim", KeyType::integer, "64", "representation encoder output dim"},
      {"e2.knn_k", KeyType::integer, "8", "representation encoder graph k"},
      {"e2.dynamic_graph", KeyType::boolean, "true", "rebuild graph in feature space"},

      {"sim.epochs", KeyType::integer, "30", "similarity training epochs"},
      {"sim.batch_clouds", KeyType::integer, "4", "clouds per optimizer step"},
      {"sim.pairs_per_cloud", KeyType::integer, "0", "similar/dissimilar pairs per cloud (0 = one per patch)"},
      {"sim.lr", KeyType::real, "0.002", "initial learning rate"},
      {"sim.lr_decay", KeyType::real, "0.8", "decay factor"},
      {"sim.lr_interval", KeyType::integer, "20", "epochs between decays"},
      {"sim.max_clouds", KeyType::integer, "8", "cap on pretraining clouds (0 = all)"},

      {"con.epochs", KeyType::integer, "40", "contrastive training epochs"},
      {"con.batch_clouds", KeyType::integer, "4", "clouds per optimizer step"},
      {"con.temperature", KeyType::real, "0.1", "softmax temperature"},
      {"con.normalize_features", KeyType::boolean, "false", "unit-normalize aggregated features"},
      {"con.positive", KeyType::text, "dilated", "positive sample: dilated | rotated"},
      {"con.lr", KeyType::real, "0.002", "initial learning rate"},
      {"con.lr_decay", KeyType::real, "0.5", "decay factor"},
      {"con.lr_interval", KeyType::integer, "50", "epochs between decays"},
      {"con.max_clouds", KeyType::integer, "8", "cap on pretraining clouds (0 = all)"},

      {"anneal.lower0", KeyType::real, "0", "initial lower threshold"},
      {"anneal.upper0", KeyType::real, "1", "initial upper threshold"},
      {"anneal.lower_step", KeyType::real, "0.05", "lower-threshold increment"},
      {"anneal.upper_step", KeyType::real, "0.025", "upper-threshold decrement"},
      {"anneal.warmup_epochs", KeyType::integer, "30", "epochs on the full negative set"},
      {"anneal.interval_epochs", KeyType::integer, "5", "epochs between adjustments"},
      {"anneal.min_gap", KeyType::real, "0.05", "smallest allowed interval width"},

      {"mining.enabled", KeyType::boolean, "true", "hard-negative interval vs full complement"},
      {"mine.epoch", KeyType::integer, "-1", "epoch whose thresholds cmd mine uses (-1 = last)"},

      {"probe.epochs", KeyType::integer, "300", "probe training epochs"},
      {"probe.lr", KeyType::real, "0.1", "probe learning rate"},
      {"probe.loss", KeyType::text, "logistic", "probe loss: logistic | hinge"},
      {"probe.fine_tune", KeyType::boolean, "false", "unfreeze the encoder"},
      {"probe.fine_tune_epochs", KeyType::integer, "5", "fine-tune epochs"},
      {"probe.fine_tune_batch_clouds", KeyType::integer, "8", "fine-tune batch size"},

      {"seg.head_layers", KeyType::integer, "1", "segmentation head depth (1 = linear)"},
      {"seg.hidden_width", KeyType::integer, "64", "hidden width for deep heads"},
      {"seg.epochs", KeyType::integer, "300", "segmentation head epochs"},
      {"seg.lr", KeyType::real, "0.1", "segmentation head learning rate"},
      {"seg.label_fraction", KeyType::real, "1.0", "fraction of labeled training shapes"},

      {"sweep.kind", KeyType::text, "noise", "robustness sweep: noise | density"},
      {"sweep.levels", KeyType::real_list, "0,0.01,0.02,0.03,0.04,0.05",
       "noise sigmas, or density fractions in (0,1]"},
      {"sweep.task", KeyType::text, "classification", "classification | segmentation"},

      {"ablate.task", KeyType::text, "classification", "classification | segmentation"},

      {"pipeline.stages", KeyType::text_list, "gen,train-sim,mine,train-con,probe",
       "stages the pipeline command runs, in order"},
  };
  return specs;
}

const KeySpec* find_spec(const std::string& key) {
  for (const auto& spec : registry()) {
    if (key == spec.name) return &spec;
  }
  return nullptr;
}

long parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const long v = std::stol(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key '" + key +
                                "' needs an integer, got '" + value + "'");
  }
}

double parse_real(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key '" + key +
                                "' needs a number, got '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw std::invalid_argument("config: key '" + key +
                              "' needs true/false, got '" + value + "'");
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(value);
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

void check_type(const KeySpec& spec, const std::string& value) {
  switch (spec.type) {
    case KeyType::boolean: parse_bool(spec.name, value); break;
    case KeyType::integer: parse_int(spec.name, value); break;
    case KeyType::real: parse_real(spec.name, value); break;
    case KeyType::text: break;
    case KeyType::int_list:
      for (const auto& item : split_list(value)) parse_int(spec.name, item);
      break;
    case KeyType::real_list:
      for (const auto& item : split_list(value)) parse_real(spec.name, item);
      break;
    case KeyType::text_list: break;
  }
}

void require(bool condition, const std::string& message) {
  if (!condition) throw std::invalid_argument("config: " + message);
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& spec : registry()) values_[spec.name] = spec.default_value;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const KeySpec* spec = find_spec(key);
  if (!spec) throw std::invalid_argument("config: unknown key '" + key + "'");
  check_type(*spec, value);
  values_[key] = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end())
    throw std::invalid_argument("config: unknown key '" + key + "'");
  return it->second;
}

bool RunConfig::get_bool(const std::string& key) const {
  return parse_bool(key, get(key));
}

long RunConfig::get_int(const std::string& key) const {
  return parse_int(key, get(key));
}

double RunConfig::get_double(const std::string& key) const {
  return parse_real(key, get(key));
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  const long v = parse_int(key, get(key));
  require(v >= 0, "key '" + key + "' must be >= 0");
  return static_cast<std::uint64_t>(v);
}

std::vector<std::string> RunConfig::get_list(const std::string& key) const {
  return split_list(get(key));
}

std::vector<double> RunConfig::get_double_list(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : split_list(get(key)))
    out.push_back(parse_real(key, item));
  return out;
}

std::vector<std::size_t> RunConfig::get_size_list(
    const std::string& key) const {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(get(key))) {
    const long v = parse_int(key, item);
    require(v > 0, "key '" + key + "' entries must be > 0");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

void RunConfig::load_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(origin + ":" + std::to_string(line_no) +
                                  ": expected key=value");
    }
    try {
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(origin + ":" + std::to_string(line_no) +
                                  ": " + e.what());
    }
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  load_text(read_text_file(path), path.string());
}

std::string RunConfig::canonical_text(bool include_out_dir) const {
  std::string out;
  for (const auto& [key, value] : values_) {
    if (key == "out_dir" && !include_out_dir) continue;
    out += key;
    out += '=';
    out += value;
    out += '\n';
  }
  return out;
}

std::string RunConfig::hash() const {
  return to_hex(fnv1a64(canonical_text(/*include_out_dir=*/false)));
}

void RunConfig::validate() const {
  for (const auto& [key, value] : values_) {
    const KeySpec* spec = find_spec(key);
    require(spec != nullptr, "unknown key '" + key + "'");
    check_type(*spec, value);
  }

  const auto kinds = get_list("data.kinds");
  require(!kinds.empty(), "data.kinds must name at least one shape");
  std::set<std::string> seen;
  for (const auto& kind : kinds) {
    geometry::shape_kind_from_string(kind);  // throws on unknown kinds
    require(seen.insert(kind).second, "duplicate kind '" + kind + "'");
  }

  const long points = get_int("data.points");
  require(points >= 8, "data.points must be >= 8");
  require(get_double("data.sigma") >= 0.0, "data.sigma must be >= 0");
  require(get_int("data.train_count") >= 1, "data.train_count must be >= 1");
  require(get_int("data.test_count") >= 1, "data.test_count must be >= 1");

  const long patch_count = get_int("patch.count");
  const long patch_k = get_int("patch.k");
  const long dilation = get_int("patch.dilation");
  require(patch_count >= 2, "patch.count must be >= 2");
  require(patch_k >= 1, "patch.k must be >= 1");
  require(dilation >= 1, "patch.dilation must be >= 1");
  require(patch_count <= points, "patch.count must not exceed data.points");
  require(patch_k * dilation <= points - 1,
          "patch.k * patch.dilation must be <= data.points - 1");

  for (const char* prefix : {"e1", "e2"}) {
    const std::string p(prefix);
    const auto widths = get_size_list(p + ".widths");
    require(!widths.empty(), p + ".widths must not be empty");
    require(get_int(p + ".out_dim") >= 1, p + ".out_dim must be >= 1");
    require(get_int(p + ".knn_k") >= 1, p + ".knn_k must be >= 1");
  }

  for (const char* prefix : {"sim", "con"}) {
    const std::string p(prefix);
    require(get_int(p + ".epochs") >= 0, p + ".epochs must be >= 0");
    require(get_int(p + ".batch_clouds") >= 1, p + ".batch_clouds must be >= 1");
    require(get_double(p + ".lr") > 0, p + ".lr must be > 0");
    const double decay = get_double(p + ".lr_decay");
    require(decay > 0 && decay <= 1, p + ".lr_decay must be in (0,1]");
    require(get_int(p + ".lr_interval") >= 1, p + ".lr_interval must be >= 1");
    require(get_int(p + ".max_clouds") >= 0, p + ".max_clouds must be >= 0");
  }
  require(get_int("sim.pairs_per_cloud") >= 0,
          "sim.pairs_per_cloud must be >= 0");
  require(get_double("con.temperature") > 0, "con.temperature must be > 0");
  const auto positive = get("con.positive");
  require(positive == "dilated" || positive == "rotated",
          "con.positive must be dilated or rotated");

  const double lower0 = get_double("anneal.lower0");
  const double upper0 = get_double("anneal.upper0");
  const double min_gap = get_double("anneal.min_gap");
  require(0.0 <= lower0 && lower0 <= upper0 && upper0 <= 1.0,
          "anneal thresholds must satisfy 0 <= lower0 <= upper0 <= 1");
  require(get_double("anneal.lower_step") >= 0, "anneal.lower_step must be >= 0");
  require(get_double("anneal.upper_step") >= 0, "anneal.upper_step must be >= 0");
  require(get_int("anneal.warmup_epochs") >= 1, "anneal.warmup_epochs must be >= 1");
  require(get_int("anneal.interval_epochs") >= 1,
          "anneal.interval_epochs must be >= 1");
  require(min_gap > 0, "anneal.min_gap must be > 0");
  require(upper0 - lower0 >= min_gap,
          "anneal initial interval must be at least min_gap wide");

  require(get_int("probe.epochs") >= 1, "probe.epochs must be >= 1");
  require(get_double("probe.lr") > 0, "probe.lr must be > 0");
  const auto probe_loss = get("probe.loss");
  require(probe_loss == "logistic" || probe_loss == "hinge",
          "probe.loss must be logistic or hinge");
  require(get_int("probe.fine_tune_epochs") >= 1,
          "probe.fine_tune_epochs must be >= 1");
  require(get_int("probe.fine_tune_batch_clouds") >= 1,
          "probe.fine_tune_batch_clouds must be >= 1");

  require(get_int("seg.head_layers") >= 1, "seg.head_layers must be >= 1");
  require(get_int("seg.hidden_width") >= 1, "seg.hidden_width must be >= 1");
  require(get_int("seg.epochs") >= 1, "seg.epochs must be >= 1");
  require(get_double("seg.lr") > 0, "seg.lr must be > 0");
  const double fraction = get_double("seg.label_fraction");
  require(fraction > 0 && fraction <= 1.0,
          "seg.label_fraction must be in (0,1]");

  const auto sweep_kind = get("sweep.kind");
  require(sweep_kind == "noise" || sweep_kind == "density",
          "sweep.kind must be noise or density");
  const auto levels = get_double_list("sweep.levels");
  require(!levels.empty(), "sweep.levels must not be empty");
  for (double level : levels) {
    if (sweep_kind == "noise") {
      require(level >= 0.0, "noise levels must be >= 0");
    } else {
      require(level > 0.0 && level <= 1.0,
              "density levels are fractions in (0,1]");
    }
  }
  for (const char* task_key : {"sweep.task", "ablate.task"}) {
    const auto task = get(task_key);
    require(task == "classification" || task == "segmentation",
            std::string(task_key) + " must be classification or segmentation");
  }

  static const std::set<std::string> known_stages = {
      "gen", "train-sim", "mine", "train-con", "probe",
      "seg-probe", "sweep", "ablate"};
  const auto stages = get_list("pipeline.stages");
  require(!stages.empty(), "pipeline.stages must not be empty");
  for (const auto& stage : stages) {
    require(known_stages.count(stage) == 1,
            "pipeline.stages: unknown stage '" + stage + "'");
    require(stage != "ablate",
            "pipeline.stages must not include ablate (it runs pipelines itself)");
  }

  require(!get("out_dir").empty(), "out_dir must not be empty");
}

std::string RunConfig::describe_keys() {
  std::string out;
  for (const auto& spec : registry()) {
    out += spec.name;
    out += " (default ";
    out += spec.default_value;
    out += "): ";
    out += spec.description;
    out += '\n';
  }
  return out;
}

}  // namespace scpc::pipeline
