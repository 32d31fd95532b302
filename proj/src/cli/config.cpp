#include "drift/cli/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "drift/errors.hpp"
#include "drift/io.hpp"

namespace drift::cli {

namespace {

enum class Kind { Uint, Int, Number, Bool, String, NumberArray, IntArray, UintArray, StringArray, Object, ObjectArray };

struct Field {
  std::string key;
  Kind kind;
  bool required;
  std::vector<Field> children;  // Object and ObjectArray
};

std::string kind_name(Kind k) {
  switch (k) {
    case Kind::Uint: return "a non-negative integer";
    case Kind::Int: return "an integer";
    case Kind::Number: return "a number";
    case Kind::Bool: return "a boolean";
    case Kind::String: return "a string";
    case Kind::NumberArray: return "an array of numbers";
    case Kind::IntArray: return "an array of integers";
    case Kind::UintArray: return "an array of non-negative integers";
    case Kind::StringArray: return "an array of strings";
    case Kind::Object: return "an object";
    case Kind::ObjectArray: return "an array of objects";
  }
  return "?";
}

bool is_uint(const nlohmann::json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

bool all_of(const nlohmann::json& v, bool (*pred)(const nlohmann::json&)) {
  if (!v.is_array()) return false;
  for (const auto& e : v)
    if (!pred(e)) return false;
  return true;
}

bool matches(Kind k, const nlohmann::json& v) {
  switch (k) {
    case Kind::Uint: return is_uint(v);
    case Kind::Int: return v.is_number_integer();
    case Kind::Number: return v.is_number();
    case Kind::Bool: return v.is_boolean();
    case Kind::String: return v.is_string();
    case Kind::NumberArray: return all_of(v, [](const nlohmann::json& e) { return e.is_number(); });
    case Kind::IntArray: return all_of(v, [](const nlohmann::json& e) { return e.is_number_integer(); });
    case Kind::UintArray: return all_of(v, is_uint);
    case Kind::StringArray: return all_of(v, [](const nlohmann::json& e) { return e.is_string(); });
    case Kind::Object: return v.is_object();
    case Kind::ObjectArray: return all_of(v, [](const nlohmann::json& e) { return e.is_object(); });
  }
  return false;
}

void check_object(const nlohmann::json& obj, const std::vector<Field>& fields, const std::string& path,
                  std::vector<std::string>& out) {
  auto at = [&](const std::string& key) { return path.empty() ? key : path + "." + key; };
  for (const auto& [key, value] : obj.items()) {
    const auto it = std::find_if(fields.begin(), fields.end(), [&](const Field& f) { return f.key == key; });
    if (it == fields.end()) {
      out.push_back(at(key) + ": unknown key");
      continue;
    }
    if (!matches(it->kind, value)) {
      out.push_back(at(key) + ": expected " + kind_name(it->kind));
      continue;
    }
    if (it->kind == Kind::Object) check_object(value, it->children, at(key), out);
    if (it->kind == Kind::ObjectArray) {
      for (std::size_t i = 0; i < value.size(); ++i)
        check_object(value[i], it->children, at(key) + "[" + std::to_string(i) + "]", out);
    }
  }
  for (const auto& f : fields)
    if (f.required && !obj.contains(f.key)) out.push_back(at(f.key) + ": required key is missing");
}

std::vector<Field> ranges_fields() {
  return {{"gain_imbalance_min", Kind::Number, false, {}}, {"gain_imbalance_max", Kind::Number, false, {}},
          {"phase_imbalance_max", Kind::Number, false, {}}, {"dc_max", Kind::Number, false, {}},
          {"cubic_real_min", Kind::Number, false, {}},     {"cubic_real_max", Kind::Number, false, {}},
          {"cubic_imag_max", Kind::Number, false, {}},     {"freq_offset_max", Kind::Number, false, {}},
          {"adc_bits_choices", Kind::IntArray, false, {}}};
}

const std::vector<Field>& schema() {
  static const std::vector<Field> s = {
      {"generator",
       Kind::Object,
       true,
       {{"K", Kind::Uint, true, {}},
        {"M", Kind::Uint, true, {}},
        {"samples_per_pair", Kind::Uint, true, {}},
        {"seed", Kind::Uint, true, {}},
        {"frame_length", Kind::Uint, false, {}},
        {"pilot_len", Kind::Uint, false, {}},
        {"modulation", Kind::String, false, {}},
        {"tx_ranges", Kind::Object, false, ranges_fields()},
        {"rx_ranges", Kind::Object, false, ranges_fields()},
        {"channel",
         Kind::Object,
         false,
         {{"max_taps", Kind::Uint, false, {}},
          {"tap_decay", Kind::Number, false, {}},
          {"snr_db", Kind::Number, false, {}},
          {"day", Kind::Int, false, {}}}},
        {"normalize", Kind::Bool, false, {}},
        {"equalize", Kind::Bool, false, {}},
        {"tx_profiles",
         Kind::ObjectArray,
         false,
         {{"iq_gain_imbalance", Kind::Number, true, {}},
          {"iq_phase_imbalance", Kind::Number, true, {}},
          {"dc_offset", Kind::NumberArray, true, {}},
          {"pa_cubic_coeff", Kind::NumberArray, true, {}},
          {"cfo", Kind::Number, true, {}}}},
        {"rx_profiles",
         Kind::ObjectArray,
         false,
         {{"lna_cubic_coeff", Kind::NumberArray, true, {}},
          {"iq_gain_imbalance", Kind::Number, true, {}},
          {"iq_phase_imbalance", Kind::Number, true, {}},
          {"dc_offset", Kind::NumberArray, true, {}},
          {"lo_offset", Kind::Number, true, {}},
          {"adc_bits", Kind::Int, true, {}}}}}},
      {"model", Kind::Object, true, {{"preset", Kind::String, true, {}}, {"embedding_dim", Kind::Uint, false, {}}}},
      {"train",
       Kind::Object,
       true,
       {{"method", Kind::String, false, {}},
        {"epochs", Kind::Uint, true, {}},
        {"batch_size", Kind::Uint, true, {}},
        {"learning_rate", Kind::Number, true, {}},
        {"lambda1", Kind::Number, true, {}},
        {"lambda2", Kind::Number, true, {}},
        {"lambda3", Kind::Number, true, {}},
        {"seed", Kind::Uint, true, {}},
        {"checkpoint_last_n", Kind::Uint, false, {}},
        {"detach_centroids", Kind::Bool, false, {}},
        {"detach_rx_head", Kind::Bool, false, {}},
        {"feature_clamp", Kind::Number, false, {}}}},
      {"protocol",
       Kind::Object,
       true,
       {{"train_receivers", Kind::IntArray, true, {}},
        {"test_receivers", Kind::IntArray, true, {}},
        {"seeds", Kind::UintArray, true, {}},
        {"methods", Kind::StringArray, false, {}},
        {"test_day", Kind::Int, false, {}}}},
  };
  return s;
}

// Runs `fn`, turning a library error into a violation under `path`.
template <typename Fn>
void collect(const std::string& path, std::vector<std::string>& out, Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    std::istringstream lines(e.what());
    std::string line;
    while (std::getline(lines, line)) {
      const auto first = line.find_first_not_of(' ');
      if (first == std::string::npos || line.back() == ':') continue;
      out.push_back(path + ": " + line.substr(first));
    }
  } catch (const nlohmann::json::exception& e) {
    out.push_back(path + ": " + e.what());
  }
}

nlohmann::json canonical_of(const ExperimentConfig& c) {
  auto train = train::to_json(c.train);
  train.erase("preset");
  train.erase("embedding_dim");
  nlohmann::json methods = nlohmann::json::array();
  for (auto m : c.methods) methods.push_back(train::method_name(m));
  auto protocol = eval::to_json(c.protocol);
  protocol["methods"] = methods;
  return {{"generator", synth::to_json(c.generator)},
          {"model", {{"preset", model::preset_name(c.train.preset)}, {"embedding_dim", c.train.embedding_dim}}},
          {"train", train},
          {"protocol", protocol}};
}

}  // namespace

void refresh(ExperimentConfig& cfg) {
  cfg.canonical = canonical_of(cfg);
  cfg.hash = io::sha256_hex(cfg.canonical.dump());
}

ExperimentConfig parse_config_json(const nlohmann::json& j) {
  std::vector<std::string> problems;
  if (!j.is_object()) {
    problems.push_back("config must be a JSON object with sections generator, model, train, protocol");
  } else {
    check_object(j, schema(), "", problems);
  }
  auto raise = [&] {
    std::string msg = "invalid config (" + std::to_string(problems.size()) + " problem" +
                      (problems.size() == 1 ? "" : "s") + "):";
    for (const auto& p : problems) msg += "\n  " + p;
    fail(ErrorKind::Config, msg);
  };
  if (!problems.empty()) raise();

  ExperimentConfig c;
  bool generator_ok = false;
  collect("generator", problems, [&] {
    auto g = synth::to_json(synth::GeneratorConfig{});
    g.merge_patch(j.at("generator"));
    // merge_patch drops null members; profile arrays replace wholesale.
    c.generator = synth::generator_config_from_json(g);
    c.generator.validate();
    generator_ok = true;
  });

  const auto& m = j.at("model");
  collect("model.preset", problems, [&] { c.train.preset = model::preset_from_name(m.at("preset").get<std::string>()); });
  c.train.embedding_dim = m.value("embedding_dim", std::size_t{0});

  const auto& t = j.at("train");
  collect("train.method", problems,
          [&] { c.train.method = train::method_from_name(t.value("method", std::string("DRIFT"))); });
  c.train.epochs = t.at("epochs").get<std::size_t>();
  c.train.batch_size = t.at("batch_size").get<std::size_t>();
  c.train.learning_rate = t.at("learning_rate").get<double>();
  c.train.weights = {t.at("lambda1").get<double>(), t.at("lambda2").get<double>(), t.at("lambda3").get<double>()};
  c.train.seed = t.at("seed").get<std::uint64_t>();
  c.train.checkpoint_last_n = t.value("checkpoint_last_n", std::size_t{5});
  c.train.detach_centroids = t.value("detach_centroids", false);
  c.train.detach_rx_head = t.value("detach_rx_head", false);
  c.train.feature_clamp = t.value("feature_clamp", 0.0);
  collect("train", problems, [&] { c.train.validate(); });

  const auto& p = j.at("protocol");
  c.protocol.train_receivers = p.at("train_receivers").get<std::vector<int>>();
  c.protocol.test_receivers = p.at("test_receivers").get<std::vector<int>>();
  c.protocol.seeds = p.at("seeds").get<std::vector<std::uint64_t>>();
  c.protocol.test_day = p.value("test_day", 0);
  const auto names = p.value("methods", std::vector<std::string>{"DRIFT", "ERM", "MTL", "DANN"});
  if (names.empty()) problems.push_back("protocol.methods: must not be empty");
  for (const auto& name : names)
    collect("protocol.methods", problems, [&] { c.methods.push_back(train::method_from_name(name)); });
  if (generator_ok) collect("protocol", problems, [&] { c.protocol.validate(c.generator.num_receivers); });

  if (!problems.empty()) raise();
  refresh(c);
  return c;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "config not found: " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  const std::string body = text.str();
  if (body.find_first_not_of(" \t\r\n") == std::string::npos) {
    std::vector<std::string> problems;
    check_object(nlohmann::json::object(), schema(), "", problems);
    std::string msg = "invalid config (empty file " + path.string() + "):";
    for (const auto& p : problems) msg += "\n  " + p;
    fail(ErrorKind::Config, msg);
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::Config, path.string() + ": not valid JSON: " + e.what());
  }
  return parse_config_json(j);
}

}  // namespace drift::cli
