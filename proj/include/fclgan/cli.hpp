#pragma once

// Run configuration: sectioned key = value files merged with command-line
// flags, with per-field provenance.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "fclgan/training.hpp"

namespace fclgan {

enum class Provenance { default_value, file, flag };

inline const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::default_value: return "default";
    case Provenance::file: return "file";
    case Provenance::flag: return "flag";
  }
  return "?";
}

struct RunConfig;

/// One configurable value: `section.key` in files, `--flag` on the command line.
struct ConfigField {
  std::string section, key, flag, type, help;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;

  std::string qualified() const { return section + "." + key; }
};

struct RunConfig {
  TrainConfig train;
  std::filesystem::path data_dir;
  std::filesystem::path run_dir = "run";
  std::map<std::string, Provenance> provenance;

  static const std::vector<ConfigField>& fields();
  static const ConfigField* find(const std::string& qualified);

  Provenance provenance_of(const std::string& qualified) const {
    const auto it = provenance.find(qualified);
    return it == provenance.end() ? Provenance::default_value : it->second;
  }

  std::string get(const std::string& qualified) const;

  /// INI text that load_config reads back to the same values; each key is
  /// preceded by a comment naming its provenance.
  std::string to_ini() const {
    std::ostringstream os;
    std::string section;
    for (const auto& f : fields()) {
      if (f.section != section) {
        if (!section.empty()) os << '\n';
        section = f.section;
        os << '[' << section << "]\n";
      }
      os << "; " << to_string(provenance_of(f.qualified())) << '\n' << f.key << " = " << f.get(*this) << '\n';
    }
    return os.str();
  }
};

namespace detail {

inline std::string shortest(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, r.ptr};
}

template <typename N>
N parse_number(const std::string& key, const std::string& text) {
  N v{};
  const char* b = text.data();
  const char* e = b + text.size();
  const auto r = std::from_chars(b, e, v);
  if (text.empty() || r.ec != std::errc{} || r.ptr != e)
    throw ConfigError("config: " + key + ": invalid value '" + text + "'");
  return v;
}

template <typename N, std::size_t K>
std::array<N, K> parse_list(const std::string& key, const std::string& text) {
  std::array<N, K> out{};
  std::size_t start = 0;
  for (std::size_t i = 0; i < K; ++i) {
    const std::size_t comma = text.find(',', start);
    const bool last = i + 1 == K;
    if (last != (comma == std::string::npos))
      throw ConfigError("config: " + key + ": expected " + std::to_string(K) + " comma-separated values, got '" +
                        text + "'");
    std::string item = text.substr(start, last ? std::string::npos : comma - start);
    item.erase(0, item.find_first_not_of(' '));
    item.erase(item.find_last_not_of(' ') + 1);
    out[i] = parse_number<N>(key, item);
    start = comma + 1;
  }
  return out;
}

template <typename N, std::size_t K>
std::string join_list(const std::array<N, K>& a) {
  std::string s;
  for (std::size_t i = 0; i < K; ++i) {
    if (i) s += ',';
    if constexpr (std::is_floating_point_v<N>)
      s += shortest(a[i]);
    else
      s += std::to_string(a[i]);
  }
  return s;
}

template <typename N>
ConfigField number_field(std::string section, std::string key, std::string flag, std::string help,
                         std::function<N&(RunConfig&)> ref) {
  const std::string q = section + "." + key;
  const char* type = std::is_floating_point_v<N> ? "FLOAT" : "INT";
  return {std::move(section), std::move(key), std::move(flag), type, std::move(help),
          [ref](const RunConfig& c) {
            const N v = ref(const_cast<RunConfig&>(c));
            if constexpr (std::is_floating_point_v<N>)
              return shortest(v);
            else
              return std::to_string(v);
          },
          [ref, q](RunConfig& c, const std::string& s) { ref(c) = parse_number<N>(q, s); }};
}

template <typename E>
ConfigField enum_field(std::string section, std::string key, std::string flag, std::string help,
                       std::function<E&(RunConfig&)> ref, std::function<E(const std::string&)> parse) {
  return {std::move(section), std::move(key), std::move(flag), "TEXT", std::move(help),
          [ref](const RunConfig& c) { return std::string(to_string(ref(const_cast<RunConfig&>(c)))); },
          [ref, parse](RunConfig& c, const std::string& s) { ref(c) = parse(s); }};
}

inline std::vector<ConfigField> make_fields() {
  using R = RunConfig;
  std::vector<ConfigField> f;
  auto num_i = [&](const char* s, const char* k, const char* fl, const char* h, std::function<int&(R&)> r) {
    f.push_back(number_field<int>(s, k, fl, h, std::move(r)));
  };
  auto num_d = [&](const char* s, const char* k, const char* fl, const char* h, std::function<double&(R&)> r) {
    f.push_back(number_field<double>(s, k, fl, h, std::move(r)));
  };

  num_i("train", "epochs", "epochs", "training epochs", [](R& c) -> int& { return c.train.epochs; });
  num_d("train", "lr", "lr", "initial learning rate", [](R& c) -> double& { return c.train.lr; });
  num_d("train", "beta1", "beta1", "Adam beta1", [](R& c) -> double& { return c.train.beta1; });
  num_d("train", "beta2", "beta2", "Adam beta2", [](R& c) -> double& { return c.train.beta2; });
  num_i("train", "lr_halving_epochs", "lr-halving-epochs", "halve the learning rate every this many epochs",
        [](R& c) -> int& { return c.train.lr_halving_epochs; });
  num_i("train", "batch_size", "batch-size", "images per domain per step",
        [](R& c) -> int& { return c.train.batch_size; });
  num_i("train", "crop_size", "crop-size", "square training crop (multiple of 4)",
        [](R& c) -> int& { return c.train.crop_size; });
  num_i("train", "repeats", "repeats", "passes over the data per epoch", [](R& c) -> int& { return c.train.repeats; });
  num_i("train", "negatives", "negatives", "contrastive negatives per anchor",
        [](R& c) -> int& { return c.train.negatives; });
  num_i("train", "buffer_capacity", "buffer-capacity", "negative buffer capacity",
        [](R& c) -> int& { return c.train.buffer_capacity; });
  num_i("train", "pool_capacity", "pool-capacity", "discriminator image pool capacity (0 disables)",
        [](R& c) -> int& { return c.train.pool_capacity; });
  num_d("train", "tau", "tau", "contrastive temperature", [](R& c) -> double& { return c.train.tau; });
  num_i("train", "checkpoint_interval", "checkpoint-interval", "epochs between checkpoints",
        [](R& c) -> int& { return c.train.checkpoint_interval; });
  f.push_back(number_field<std::uint64_t>("train", "seed", "seed", "random seed",
                                          [](R& c) -> std::uint64_t& { return c.train.seed; }));

  num_d("losses", "adv", "w-adv", "adversarial weight", [](R& c) -> double& { return c.train.weights.adv; });
  num_d("losses", "cc", "w-cc", "cycle-consistency weight", [](R& c) -> double& { return c.train.weights.cc; });
  num_d("losses", "ctst", "w-ctst", "contrastive weight", [](R& c) -> double& { return c.train.weights.ctst; });
  num_d("losses", "tv", "w-tv", "total-variation weight", [](R& c) -> double& { return c.train.weights.tv; });

  num_d("spectral", "crop_fraction", "crop-fraction", "kept central fraction of the spectrum",
        [](R& c) -> double& { return c.train.spectral.crop_fraction; });
  num_i("spectral", "chunk", "chunk", "coverage chunk size", [](R& c) -> int& { return c.train.spectral.chunk; });
  num_d("spectral", "quant_scale", "quant-scale", "magnitude quantization scale",
        [](R& c) -> double& { return c.train.spectral.quant_scale; });
  num_d("spectral", "threshold", "threshold", "binarization threshold",
        [](R& c) -> double& { return c.train.spectral.threshold; });
  num_d("spectral", "temperature", "temperature", "soft binarization temperature",
        [](R& c) -> double& { return c.train.spectral.temperature; });
  f.push_back({"spectral", "luminance_weights", "luminance-weights", "LIST", "RGB luminance weights",
               [](const R& c) { return join_list(c.train.spectral.luminance_weights); },
               [](R& c, const std::string& s) {
                 c.train.spectral.luminance_weights = parse_list<double, 3>("spectral.luminance_weights", s);
               }});

  f.push_back(enum_field<StructureKind>(
      "generator", "structure", "structure", "led, encoder_decoder or single_scale",
      [](R& c) -> StructureKind& { return c.train.generator.structure; }, parse_structure));
  num_i("generator", "base_width", "width", "generator base width",
        [](R& c) -> int& { return c.train.generator.base_width; });
  f.push_back({"generator", "allocation", "alloc", "LIST", "residual metas at full, 1/2 and 1/4 resolution",
               [](const R& c) { return join_list(c.train.generator.allocation); },
               [](R& c, const std::string& s) {
                 c.train.generator.allocation = parse_list<int, 3>("generator.allocation", s);
               }});
  f.push_back(enum_field<NormKind>("generator", "norm", "norm", "basic-meta norm: batch, instance or none",
                                   [](R& c) -> NormKind& { return c.train.generator.norm; }, parse_norm));
  f.push_back(enum_field<NormKind>("generator", "residual_norm", "residual-norm", "residual-meta norm",
                                   [](R& c) -> NormKind& { return c.train.generator.residual_norm; }, parse_norm));
  f.push_back(enum_field<ResidualMetaForm>(
      "generator", "residual_form", "residual-form", "residual meta form: d, e or f",
      [](R& c) -> ResidualMetaForm& { return c.train.generator.residual_form; }, parse_form));
  num_i("generator", "kernel", "kernel", "residual-meta kernel size (odd)",
        [](R& c) -> int& { return c.train.generator.kernel; });

  num_i("discriminator", "base_width", "d-width", "discriminator base width",
        [](R& c) -> int& { return c.train.discriminator.base_width; });
  f.push_back(enum_field<NormKind>("discriminator", "norm", "d-norm", "discriminator norm",
                                   [](R& c) -> NormKind& { return c.train.discriminator.norm; }, parse_norm));

  f.push_back({"paths", "data", "data", "PATH", "dataset root (blurred/, sharp/, optional val_*)",
               [](const R& c) { return c.data_dir.string(); },
               [](R& c, const std::string& s) { c.data_dir = s; }});
  f.push_back({"paths", "run_dir", "run-dir", "PATH", "output directory",
               [](const R& c) { return c.run_dir.string(); },
               [](R& c, const std::string& s) { c.run_dir = s; }});
  return f;
}

}  // namespace detail

inline const std::vector<ConfigField>& RunConfig::fields() {
  static const std::vector<ConfigField> f = detail::make_fields();
  return f;
}

inline const ConfigField* RunConfig::find(const std::string& qualified) {
  for (const auto& f : fields())
    if (f.qualified() == qualified) return &f;
  return nullptr;
}

inline std::string RunConfig::get(const std::string& qualified) const {
  const auto* f = find(qualified);
  if (!f) throw ConfigError("config: unknown key '" + qualified + "'");
  return f->get(*this);
}

/// Reads a sectioned INI file into (section.key, value) pairs.
inline std::vector<std::pair<std::string, std::string>> read_config_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open '" + path.string() + "'");
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(is, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("config: " + path.string() + ":" + std::to_string(e.line()) + ": " + e.message());
  }
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError("config: key '" + section + "' is outside any [section]");
    for (const auto& [key, value] : body) out.emplace_back(section + "." + key, value.data());
  }
  return out;
}

/// Defaults, then `file` entries, then `flags`; each stage overrides the
/// previous one and records its provenance. Unknown keys are errors.
inline RunConfig load_config(const std::optional<std::filesystem::path>& file,
                             const std::vector<std::pair<std::string, std::string>>& flags) {
  RunConfig c;
  auto apply = [&](const std::vector<std::pair<std::string, std::string>>& entries, Provenance p) {
    for (const auto& [k, v] : entries) {
      const auto* f = RunConfig::find(k);
      if (!f) {
        const auto dot = k.find('.');
        throw ConfigError("config: unknown key '" + (dot == std::string::npos ? k : k.substr(dot + 1)) + "' (" + k +
                          ")");
      }
      f->set(c, v);
      c.provenance[k] = p;
    }
  };
  if (file) apply(read_config_file(*file), Provenance::file);
  apply(flags, Provenance::flag);
  c.train.validate();
  return c;
}

}  // namespace fclgan
