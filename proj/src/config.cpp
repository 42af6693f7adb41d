#include "flowscope/config.hpp"

#include <CLI11.hpp>

#include <set>
#include <sstream>

#include "flowscope/error.hpp"
#include "flowscope/io.hpp"

namespace flowscope {

namespace {

using ojson = nlohmann::ordered_json;

constexpr std::array<std::string_view, 8> kSections = {"synth", "ingest",  "featurize", "model",
                                                       "train", "explain", "eval",      "export"};

// Seeds of the individual stages, derived from the top-level seed.
enum SeedStream : std::uint64_t { kSynthSeed = 101, kTrainSeed = 102, kExplainSeed = 103 };

ojson to_sections(const PipelineConfig& c) {
  ojson doc;
  doc["seed"] = c.seed;
  const ScenarioConfig& s = c.synth;
  doc["synth"] = {
      {"n_devices", s.n_devices},         {"benign_flows", s.benign_flows},
      {"dos_flows", s.dos_flows},         {"mirai_flows", s.mirai_flows},
      {"recon_flows", s.recon_flows},     {"horizon", s.horizon},
      {"mimicry_start", s.mimicry.start}, {"mimicry_end", s.mimicry.end},
      {"servers", s.servers},             {"dos_attackers", s.dos_attackers},
      {"mirai_bots", s.mirai_bots},       {"scanners", s.scanners},
      {"dos_victims", s.dos_victims},     {"recon_targets", s.recon_targets},
  };
  doc["ingest"] = {{"input", c.ingest.input},
                   {"sort", c.ingest.sort},
                   {"max_duration", c.ingest.options.max_duration},
                   {"out_of_order_slack", c.ingest.options.out_of_order_slack}};
  doc["featurize"] = {{"vocab", c.featurize.vocab}};
  ojson model = c.model.to_json();
  model.erase("kernel_a");
  model.erase("kernel_b");
  doc["model"] = model;
  ojson train = c.train.to_json();
  train.erase("seed");
  doc["train"] = train;
  doc["explain"] = {{"partition", c.explain_partition},
                    {"mc_samples", c.explain.mc_samples},
                    {"background", c.explain.background},
                    {"grouping", grouping_name(c.explain.grouping)},
                    {"per_class", c.explain.per_class},
                    {"top_k", c.explain.top_k},
                    {"threads", c.explain.threads}};
  doc["eval"] = {{"partitions", c.eval.partitions}};
  doc["export"] = {
      {"formats", c.export_.formats}, {"grid", c.export_.grid}, {"mass", c.export_.mass},
      {"smooth", c.export_.smooth}};
  return doc;
}

PipelineConfig from_sections(const ojson& doc) {
  PipelineConfig c;
  try {
    c.seed = doc.at("seed").get<std::uint64_t>();
    const auto& s = doc.at("synth");
    c.synth.n_devices = s.at("n_devices").get<int>();
    c.synth.benign_flows = s.at("benign_flows").get<int>();
    c.synth.dos_flows = s.at("dos_flows").get<int>();
    c.synth.mirai_flows = s.at("mirai_flows").get<int>();
    c.synth.recon_flows = s.at("recon_flows").get<int>();
    c.synth.horizon = s.at("horizon").get<double>();
    c.synth.mimicry = {s.at("mimicry_start").get<double>(), s.at("mimicry_end").get<double>()};
    c.synth.servers = s.at("servers").get<int>();
    c.synth.dos_attackers = s.at("dos_attackers").get<int>();
    c.synth.mirai_bots = s.at("mirai_bots").get<int>();
    c.synth.scanners = s.at("scanners").get<int>();
    c.synth.dos_victims = s.at("dos_victims").get<int>();
    c.synth.recon_targets = s.at("recon_targets").get<int>();
    const auto& in = doc.at("ingest");
    c.ingest.input = in.at("input").get<std::string>();
    c.ingest.sort = in.at("sort").get<bool>();
    c.ingest.options.max_duration = in.at("max_duration").get<double>();
    c.ingest.options.out_of_order_slack = in.at("out_of_order_slack").get<double>();
    c.featurize.vocab = doc.at("featurize").at("vocab").get<std::string>();
    c.model = ModelConfig::from_json(doc.at("model"));
    c.train = TrainConfig::from_json(doc.at("train"));
    const auto& ex = doc.at("explain");
    c.explain_partition = ex.at("partition").get<std::string>();
    c.explain.mc_samples = ex.at("mc_samples").get<std::size_t>();
    c.explain.background = ex.at("background").get<std::size_t>();
    c.explain.grouping = parse_grouping(ex.at("grouping").get<std::string>());
    c.explain.per_class = ex.at("per_class").get<std::size_t>();
    c.explain.top_k = ex.at("top_k").get<std::size_t>();
    c.explain.threads = ex.at("threads").get<unsigned>();
    c.eval.partitions = doc.at("eval").at("partitions").get<std::vector<std::string>>();
    const auto& exp = doc.at("export");
    c.export_.formats = exp.at("formats").get<std::vector<std::string>>();
    c.export_.grid = exp.at("grid").get<int>();
    c.export_.mass = exp.at("mass").get<double>();
    c.export_.smooth = exp.at("smooth").get<int>();
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::InvalidConfig, std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

// Converts the raw text of one value to the JSON type of its default.
ojson convert(const std::string& key, const std::string& text, const ojson& like) {
  auto bad = [&](const char* what) {
    fail(Errc::InvalidConfig, "config key '" + key + "' expects " + what + ", got '" + text + "'");
  };
  if (like.is_boolean()) {
    if (text == "true") return true;
    if (text == "false") return false;
    bad("true or false");
  }
  if (like.is_number_integer()) {
    try {
      const std::int64_t v = io::parse_int(text);
      if (like.is_number_unsigned() && v < 0) bad("a non-negative integer");
      return v;
    } catch (const Error&) {
      bad("an integer");
    }
  }
  if (like.is_number_float()) {
    try {
      return io::parse_double(text);
    } catch (const Error&) {
      bad("a number");
    }
  }
  return text;
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"' || ch == '\\') out += '\\';
    out += ch;
  }
  return out + '"';
}

std::string format_value(const ojson& v) {
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_unsigned()) return std::to_string(v.get<std::uint64_t>());
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  if (v.is_number_float()) {
    std::string s = io::format_double(v.get<double>());
    if (s.find_first_of(".eEni") == std::string::npos) s += ".0";
    return s;
  }
  if (v.is_array()) {
    std::string out = "[";
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + format_value(v[i]);
    return out + "]";
  }
  return quote(v.get<std::string>());
}

}  // namespace

PipelineConfig PipelineConfig::parse(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigTOML().from_config(in);
  } catch (const CLI::Error& e) {
    fail(Errc::InvalidConfig, std::string("config syntax: ") + e.what());
  }
  ojson doc = to_sections(PipelineConfig{});
  const ojson defaults = doc;
  std::set<std::string> seen;
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    const std::string full = item.fullname();
    if (!seen.insert(full).second) fail(Errc::InvalidConfig, "duplicate config key '" + full + "'");
    if (item.parents.size() > 1) fail(Errc::InvalidConfig, "nested sections are not supported");
    const ojson* like = nullptr;
    ojson* slot = nullptr;
    if (item.parents.empty()) {
      if (item.name != "seed") fail(Errc::InvalidConfig, "unknown top-level key '" + full + "'");
      like = &defaults["seed"];
      slot = &doc["seed"];
    } else {
      const std::string& section = item.parents.front();
      if (std::find(kSections.begin(), kSections.end(), section) == kSections.end()) {
        fail(Errc::InvalidConfig, "unknown config section [" + section + "]");
      }
      if ((section == "train" || section == "explain") && item.name == "seed") {
        fail(Errc::InvalidConfig, "'" + full + "': set the top-level seed instead");
      }
      if (!defaults[section].contains(item.name)) {
        fail(Errc::InvalidConfig, "unknown config key '" + full + "'");
      }
      like = &defaults[section][item.name];
      slot = &doc[section][item.name];
    }
    if (like->is_array()) {
      ojson arr = ojson::array();
      const ojson elem = like->empty() ? ojson("") : (*like)[0];
      for (const auto& v : item.inputs) {
        if (v == "[]" && item.inputs.size() == 1) break;
        arr.push_back(convert(full, v, elem));
      }
      *slot = arr;
    } else {
      if (item.inputs.size() != 1) fail(Errc::InvalidConfig, "'" + full + "' expects one value");
      *slot = convert(full, item.inputs.front(), *like);
    }
  }
  return from_sections(doc);
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  return parse(io::read_text(path));
}

std::string PipelineConfig::to_toml() const {
  const ojson doc = to_sections(*this);
  std::string out = "seed = " + format_value(doc["seed"]) + "\n";
  for (std::string_view section : kSections) {
    out += "\n[" + std::string(section) + "]\n";
    for (const auto& [key, value] : doc[std::string(section)].items()) {
      out += key + " = " + format_value(value) + "\n";
    }
  }
  return out;
}

void PipelineConfig::validate() const {
  synth.validate();
  model.validate();
  train.validate();
  explain.validate();
  auto bad = [](const std::string& msg) { fail(Errc::InvalidConfig, msg); };
  if (!(ingest.options.max_duration > 0.0)) bad("ingest.max_duration must be > 0");
  if (!(ingest.options.out_of_order_slack >= 0.0)) bad("ingest.out_of_order_slack must be >= 0");
  auto is_partition = [](const std::string& p) {
    return std::find(kPartitionNames.begin(), kPartitionNames.end(), p) != kPartitionNames.end();
  };
  if (!is_partition(explain_partition)) bad("explain.partition must name a partition");
  if (eval.partitions.empty()) bad("eval.partitions is empty");
  for (const auto& p : eval.partitions) {
    if (!is_partition(p)) bad("eval.partitions: unknown partition '" + p + "'");
  }
  for (const auto& f : export_.formats) {
    if (f != "svg" && f != "csv") bad("export.formats: unknown format '" + f + "'");
  }
  if (export_.grid < 2) bad("export.grid must be >= 2");
  if (!(export_.mass > 0.0 && export_.mass <= 1.0)) bad("export.mass must be in (0, 1]");
  if (export_.smooth < 0 || export_.smooth >= export_.grid) bad("export.smooth must be in [0, grid)");
}

ScenarioConfig PipelineConfig::scenario() const {
  ScenarioConfig s = synth;
  s.seed = mix_seed(seed, kSynthSeed);
  return s;
}

TrainConfig PipelineConfig::train_config() const {
  TrainConfig t = train;
  t.seed = mix_seed(seed, kTrainSeed);
  return t;
}

ExplainConfig PipelineConfig::explain_config() const {
  ExplainConfig e = explain;
  e.seed = mix_seed(seed, kExplainSeed);
  return e;
}

PortVocabulary PipelineConfig::vocabulary() const {
  return featurize.vocab.empty() ? PortVocabulary::defaults() : PortVocabulary::load(featurize.vocab);
}

}  // namespace flowscope
