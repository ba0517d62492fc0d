#include "autoprep/backends.h"

#include <algorithm>
#include <array>

#include "autoprep/external.h"
#include "autoprep/mocks.h"

namespace autoprep {

namespace {

constexpr std::array<std::pair<BackendRole, std::string_view>, 6> kRoleNames{{
    {BackendRole::kEnhancer, "enhancer"},
    {BackendRole::kVoiceActivityDetector, "vad"},
    {BackendRole::kSpeakerEmbedder, "embedder"},
    {BackendRole::kTargetExtractor, "extractor"},
    {BackendRole::kQualityScorer, "scorer"},
    {BackendRole::kTranscriber, "transcriber"},
}};

using Json = nlohmann::ordered_json;

struct EntryReader {
  std::string role;
  const Json &spec;

  std::string type() const {
    if (!spec.is_object() || !spec.contains("type") || !spec.at("type").is_string()) {
      throw ConfigError("backends." + role, "expected an object with a string 'type'");
    }
    return spec.at("type").get<std::string>();
  }
  double real(const char *key) const {
    if (!spec.contains(key) || !spec.at(key).is_number()) {
      throw ConfigError("backends." + role + "." + key, "expected a number");
    }
    return spec.at(key).get<double>();
  }
  std::string text(const char *key) const {
    if (!spec.contains(key) || !spec.at(key).is_string()) {
      throw ConfigError("backends." + role + "." + key, "expected a string");
    }
    return spec.at(key).get<std::string>();
  }
  std::filesystem::path path(const char *key, const std::filesystem::path &base) const {
    std::filesystem::path p = text(key);
    return p.is_relative() ? base / p : p;
  }
  [[noreturn]] void unknown(const std::string &t) const {
    throw ConfigError("backends." + role + ".type", "unsupported type '" + t + "' for this role");
  }
};

std::shared_ptr<ExternalClient> external_client(BackendRole role, const EntryReader &entry,
                                                const std::string &type) {
  const size_t pool = entry.spec.contains("pool_size") ? entry.spec.at("pool_size").get<size_t>() : 1;
  ConnectionPool::Factory factory;
  if (type == "process") {
    if (!entry.spec.contains("command") || !entry.spec.at("command").is_array()) {
      throw ConfigError("backends." + entry.role + ".command", "expected an argv array");
    }
    factory = [argv = entry.spec.at("command").get<std::vector<std::string>>()] {
      return spawn_process(argv);
    };
  } else {
    factory = [path = entry.text("path")] { return connect_socket(path); };
  }
  return std::make_shared<ExternalClient>(role, std::move(factory), pool);
}

bool is_external(const std::string &type) { return type == "process" || type == "socket"; }

}  // namespace

std::string_view role_name(BackendRole role) {
  for (const auto &[r, name] : kRoleNames) {
    if (r == role) return name;
  }
  return "unknown";
}

std::optional<BackendRole> role_from_name(std::string_view name) {
  for (const auto &[r, n] : kRoleNames) {
    if (n == name) return r;
  }
  return std::nullopt;
}

bool Capabilities::supports(int sample_rate) const {
  return sample_rates.empty() ||
         std::find(sample_rates.begin(), sample_rates.end(), sample_rate) != sample_rates.end();
}

BackendSet make_backend_set(const nlohmann::ordered_json &spec, const std::filesystem::path &base_dir) {
  BackendSet set;
  if (spec.is_null()) return set;
  if (!spec.is_object()) throw ConfigError("backends", "expected an object");
  for (const auto &[key, value] : spec.items()) {
    const auto role = role_from_name(key);
    if (!role) throw ConfigError("backends." + key, "unknown backend role");
    const EntryReader entry{key, value};
    const std::string type = entry.type();
    switch (*role) {
      case BackendRole::kEnhancer:
        if (type == "identity") {
          set.enhancer = std::make_shared<IdentityEnhancer>();
        } else if (type == "gain") {
          set.enhancer = std::make_shared<GainEnhancer>(static_cast<float>(entry.real("gain")));
        } else if (is_external(type)) {
          set.enhancer = make_external_enhancer(external_client(*role, entry, type));
        } else {
          entry.unknown(type);
        }
        break;
      case BackendRole::kVoiceActivityDetector:
        if (type == "energy") {
          set.vad = std::make_shared<EnergyVad>(entry.real("hop_s"), entry.real("rms_threshold"));
        } else if (is_external(type)) {
          set.vad = make_external_vad(external_client(*role, entry, type));
        } else {
          entry.unknown(type);
        }
        break;
      case BackendRole::kSpeakerEmbedder:
        if (type == "fixture") {
          set.embedder = std::make_shared<FixtureEmbedder>(
              FixtureEmbedder::from_jsonl(entry.path("path", base_dir)));
        } else if (type == "hash") {
          set.embedder = std::make_shared<HashEmbedder>(static_cast<int>(entry.real("dim")));
        } else if (is_external(type)) {
          set.embedder = make_external_embedder(external_client(*role, entry, type));
        } else {
          entry.unknown(type);
        }
        break;
      case BackendRole::kTargetExtractor:
        if (type == "passthrough") {
          set.extractor = std::make_shared<PassthroughExtractor>();
        } else if (type == "gain") {
          set.extractor = std::make_shared<GainExtractor>(static_cast<float>(entry.real("gain")));
        } else if (is_external(type)) {
          set.extractor = make_external_extractor(external_client(*role, entry, type));
        } else {
          entry.unknown(type);
        }
        break;
      case BackendRole::kQualityScorer:
        if (type == "scripted") {
          set.scorer = std::make_shared<ScriptedScorer>(
              ScriptedScorer::from_jsonl(entry.path("path", base_dir)));
        } else if (is_external(type)) {
          set.scorer = make_external_scorer(external_client(*role, entry, type));
        } else {
          entry.unknown(type);
        }
        break;
      case BackendRole::kTranscriber:
        if (type == "scripted") {
          set.transcriber = std::make_shared<ScriptedTranscriber>(
              ScriptedTranscriber::from_jsonl(entry.path("path", base_dir)));
        } else if (is_external(type)) {
          set.transcriber = make_external_transcriber(external_client(*role, entry, type));
        } else {
          entry.unknown(type);
        }
        break;
    }
  }
  return set;
}

}  // namespace autoprep
