#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <json.hpp>
#include <openssl/evp.h>

#include "cli.hpp"
#include "rectattn/errors.hpp"

namespace rectattn::cli {

using nlohmann::json;

namespace {

const std::set<std::string> kTrainKeys = {
    "seed",           "attention_kind", "lambda_eq",        "use_residual", "use_rescale",
    "insertion_depth", "epochs",        "batch_size",       "lr",           "sharpness",
    "sigma_min",      "sigma_max",      "adversarial_init", "record_wall_time",
    "predictor_widths", "equivariance"};
const std::set<std::string> kPathKeys = {"train_dataset", "val_dataset", "out_dir"};
const std::set<std::string> kEqKeys = {"center", "alpha_range", "sigma_range", "mu_range"};

[[noreturn]] void bad(const std::string& key, const std::string& what) {
  throw ConfigError("config key '" + key + "': " + what);
}

double get_number(const json& v, const std::string& key) {
  if (!v.is_number()) bad(key, "expected a number");
  return v.get<double>();
}

std::uint64_t get_unsigned(const json& v, const std::string& key) {
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
    bad(key, "expected a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

bool get_bool(const json& v, const std::string& key) {
  if (!v.is_boolean()) bad(key, "expected true or false");
  return v.get<bool>();
}

std::string get_string(const json& v, const std::string& key) {
  if (!v.is_string()) bad(key, "expected a string");
  return v.get<std::string>();
}

std::array<double, 2> get_pair(const json& v, const std::string& key) {
  if (!v.is_array() || v.size() != 2) bad(key, "expected an array of two numbers");
  return {get_number(v[0], key), get_number(v[1], key)};
}

void parse_equivariance(const json& obj, EquivarianceConfig& eq) {
  if (!obj.is_object()) bad("equivariance", "expected an object");
  for (const auto& [k, v] : obj.items()) {
    const std::string key = "equivariance." + k;
    if (!kEqKeys.count(k)) bad(key, "unknown key");
    const auto p = get_pair(v, key);
    if (k == "center") eq.center = p;
    else if (k == "alpha_range") eq.alpha_range = {p[0], p[1]};
    else if (k == "sigma_range") eq.sigma_range = {p[0], p[1]};
    else eq.mu_range = {p[0], p[1]};
  }
}

void apply_train_key(const std::string& k, const json& v, TrainConfig& c) {
  if (k == "seed") {
    c.seed = get_unsigned(v, k);
  } else if (k == "attention_kind") {
    const auto kind = parse_attention_kind(get_string(v, k));
    if (!kind) bad(k, "expected none, position_wise or rectangular");
    c.attention_kind = *kind;
  } else if (k == "insertion_depth") {
    const auto d = parse_insertion_depth(get_string(v, k));
    if (!d) bad(k, "expected shallow or deep");
    c.insertion_depth = *d;
  } else if (k == "lambda_eq") {
    c.lambda_eq = get_number(v, k);
  } else if (k == "use_residual") {
    c.use_residual = get_bool(v, k);
  } else if (k == "use_rescale") {
    c.use_rescale = get_bool(v, k);
  } else if (k == "epochs") {
    c.epochs = get_unsigned(v, k);
  } else if (k == "batch_size") {
    c.batch_size = get_unsigned(v, k);
  } else if (k == "lr") {
    c.lr = get_number(v, k);
  } else if (k == "sharpness") {
    c.sharpness = get_number(v, k);
  } else if (k == "sigma_min") {
    c.sigma_min = get_number(v, k);
  } else if (k == "sigma_max") {
    c.sigma_max = get_number(v, k);
  } else if (k == "adversarial_init") {
    c.adversarial_init = get_bool(v, k);
  } else if (k == "record_wall_time") {
    c.record_wall_time = get_bool(v, k);
  } else if (k == "predictor_widths") {
    if (!v.is_array() || v.size() != 3) bad(k, "expected an array of three integers");
    for (std::size_t i = 0; i < 3; ++i) {
      c.predictor_widths[i] = get_unsigned(v[i], k);
      if (c.predictor_widths[i] == 0) bad(k, "widths must be positive");
    }
  } else if (k == "equivariance") {
    parse_equivariance(v, c.eq);
  }
}

TrainConfig parse_train_object(const json& doc, const std::set<std::string>& extra_keys) {
  TrainConfig c;
  for (const auto& [k, v] : doc.items()) {
    if (kTrainKeys.count(k)) apply_train_key(k, v, c);
    else if (!extra_keys.count(k)) bad(k, "unknown key");
  }
  try {
    c.validate();
  } catch (const DomainError& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  return c;
}

json train_object(const TrainConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["attention_kind"] = to_string(c.attention_kind);
  j["lambda_eq"] = c.lambda_eq;
  j["use_residual"] = c.use_residual;
  j["use_rescale"] = c.use_rescale;
  j["insertion_depth"] = to_string(c.insertion_depth);
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["lr"] = c.lr;
  j["sharpness"] = c.sharpness;
  j["sigma_min"] = c.sigma_min;
  j["sigma_max"] = c.sigma_max;
  j["adversarial_init"] = c.adversarial_init;
  j["record_wall_time"] = c.record_wall_time;
  j["predictor_widths"] = c.predictor_widths;
  j["equivariance"] = {{"center", c.eq.center},
                       {"alpha_range", {c.eq.alpha_range.lo, c.eq.alpha_range.hi}},
                       {"sigma_range", {c.eq.sigma_range.lo, c.eq.sigma_range.hi}},
                       {"mu_range", {c.eq.mu_range.lo, c.eq.mu_range.hi}}};
  return j;
}

json parse_document(const std::string& text) {
  try {
    json doc = json::parse(text);
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");
    return doc;
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed JSON: ") + e.what());
  }
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  const json doc = parse_document(json_text);
  RunConfig rc;
  rc.train = parse_train_object(doc, kPathKeys);
  for (const std::string& k : kPathKeys) {
    if (!doc.contains(k)) bad(k, "required");
  }
  rc.train_dataset = get_string(doc["train_dataset"], "train_dataset");
  rc.val_dataset = get_string(doc["val_dataset"], "val_dataset");
  rc.out_dir = get_string(doc["out_dir"], "out_dir");
  return rc;
}

RunConfig load_run_config(const std::string& path) { return parse_run_config(read_text(path)); }

std::string checkpoint_sidecar_json(const TrainConfig& cfg, const ModelShape& shape) {
  json j;
  j["format"] = "rectattn-checkpoint";
  j["version"] = 1;
  j["shape"] = {{"classes", shape.classes}, {"channels", shape.channels}, {"height", shape.height},
                {"width", shape.width}};
  j["config"] = train_object(cfg);
  return j.dump(2) + "\n";
}

void read_checkpoint_sidecar(const std::string& path, TrainConfig& cfg, ModelShape& shape) {
  const json doc = parse_document(read_text(path));
  try {
    if (doc.at("format") != "rectattn-checkpoint" || doc.at("version") != 1) {
      throw FormatError("not a checkpoint sidecar: " + path);
    }
    const json& s = doc.at("shape");
    shape.classes = s.at("classes").get<std::size_t>();
    shape.channels = s.at("channels").get<std::size_t>();
    shape.height = s.at("height").get<std::size_t>();
    shape.width = s.at("width").get<std::size_t>();
    cfg = parse_train_object(doc.at("config"), {});
  } catch (const json::exception& e) {
    throw FormatError("malformed checkpoint sidecar " + path + ": " + e.what());
  }
}

namespace {

std::string finish_hex(EVP_MD_CTX* ctx) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return hex.str();
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  EVP_DigestUpdate(ctx, bytes.data(), bytes.size());
  return finish_hex(ctx);
}

std::string file_sha256(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  }
  return finish_hex(ctx);
}

std::size_t thread_cap_from_env() {
  const char* v = std::getenv("RECTATTN_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError("RECTATTN_THREADS must be a positive integer");
  return static_cast<std::size_t>(n);
}

}  // namespace rectattn::cli
