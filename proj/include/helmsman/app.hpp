#pragma once

// Loads and cross-checks the shipped data (taxonomy, corpus, plugins, seed
// workspace) and wires a ready-to-use engine around it.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "helmsman/config.hpp"
#include "helmsman/doc_corpus.hpp"
#include "helmsman/engine.hpp"
#include "helmsman/executor.hpp"
#include "helmsman/plugin_registry.hpp"
#include "helmsman/qa_engine.hpp"
#include "helmsman/session.hpp"
#include "helmsman/taxonomy.hpp"
#include "helmsman/workspace.hpp"

namespace helmsman {

struct DataSet {
  TaskTaxonomy taxonomy;
  docs::FragmentStore fragments;
  plugins::Registry registry;
  ws::WorkspaceState seed;
};

struct DataReport {
  std::optional<DataSet> data;  // set only when `errors` is empty
  std::vector<Error> errors;

  bool ok() const { return errors.empty(); }
};

namespace detail {

template <class F>
bool collect(std::vector<Error>& errors, F&& f) {
  try {
    f();
    return true;
  } catch (const Error& e) {
    errors.push_back(e);
  } catch (const std::exception& e) {
    errors.emplace_back(errc::io_error, e.what());
  }
  return false;
}

}  // namespace detail

/// Loads everything and reports every problem found, not just the first.
inline DataReport load_data(const Config& config, const exec::BuiltinCatalog& builtins) {
  namespace fs = std::filesystem;
  DataReport report;
  auto& errors = report.errors;
  DataSet data;

  for (auto lang : kAllLanguages) {
    detail::collect(errors, [&] {
      data.fragments.add_all(docs::ingest(config.corpus / std::string(to_string(lang)), lang));
    });
  }
  for (const auto& [id, missing_in] : docs::parity_gaps(data.fragments))
    errors.emplace_back(errc::language_parity,
                        "fragment '" + id + "' has no " + std::string(to_string(missing_in)) + " version",
                        nlohmann::json{{"fragment", id}, {"language", to_string(missing_in)}});

  if (detail::collect(errors, [&] { data.taxonomy = load_taxonomy(config.taxonomy); })) {
    auto resolves = [&](std::string_view id, Language lang) { return data.fragments.contains(id, lang); };
    for (const auto& d : find_dangling(data.taxonomy, resolves, kAllLanguages)) errors.push_back(dangling_error(d));
  }

  detail::collect(errors, [&] {
    if (!fs::is_directory(config.plugins))
      throw Error(errc::io_error, "plugin directory " + config.plugins.string() + " does not exist",
                  {{"path", config.plugins.string()}});
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(config.plugins))
      if (entry.is_regular_file() && entry.path().extension() == ".plugin") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      detail::collect(errors, [&] {
        auto m = plugins::load_manifest(f, plugins::Origin::bundled);
        if (m.binding == plugins::Binding::builtin_sim && !builtins.find(m.command))
          throw Error(errc::unknown_builtin,
                      f.string() + ": plugin '" + m.plugin_id + "' names unknown builtin '" + m.command + "'",
                      {{"plugin_id", m.plugin_id}, {"builtin", m.command}});
        if (data.registry.find(m.plugin_id))
          throw Error(errc::duplicate_bundled, f.string() + ": plugin '" + m.plugin_id + "' is defined twice",
                      {{"plugin_id", m.plugin_id}});
        data.registry = plugins::register_plugin(data.registry, std::move(m));
      });
    }
  });

  detail::collect(errors, [&] {
    data.seed = ws::parse_workspace(read_text_file(config.workspace_seed), config.workspace_seed.string());
  });

  if (errors.empty()) report.data = std::move(data);
  return report;
}

inline constexpr std::string_view kUserPluginsFile = "user_plugins.json";

/// Everything a running engine needs, owned in one place.
///
/// With `persistent` set, sessions, workspaces, notes, executions and
/// user-defined plugins live under config.state_dir and survive restarts;
/// otherwise they are kept in memory only.
class Runtime {
 public:
  struct Options {
    bool persistent = true;
    std::unique_ptr<llm::Backend> backend;  // defaults to make_backend(config.backend)
    std::unique_ptr<Clock> clock;           // defaults to SystemClock
    std::unique_ptr<IdSource> ids;          // defaults to RandomIds
  };

  Runtime(Config config, DataSet data, Options options)
      : config_(std::move(config)),
        builtins_(exec::BuiltinCatalog::bundled()),
        persistent_(options.persistent),
        clock_(options.clock ? std::move(options.clock) : std::make_unique<SystemClock>()),
        ids_(options.ids ? std::move(options.ids) : std::make_unique<RandomIds>()),
        backend_(options.backend ? std::move(options.backend) : llm::make_backend(config_.backend)),
        taxonomy_(std::move(data.taxonomy)),
        fragments_(std::move(data.fragments)) {
    namespace fs = std::filesystem;
    auto registry = std::move(data.registry);
    if (persistent_) {
      const auto& dir = config_.state_dir;
      fs::create_directories(dir);
      sessions_ = std::make_unique<session::SessionStore>(dir / "sessions");
      notes_ = std::make_unique<qa::AugmentationStore>(dir / "notes.jsonl");
      log_ = std::make_unique<exec::ExecutionLog>(dir / "executions.jsonl");
      workspaces_ = std::make_unique<WorkspaceRegistry>(std::move(data.seed), dir / "workspaces");
      if (fs::exists(dir / kUserPluginsFile)) {
        auto saved = plugins::registry_from_json(nlohmann::json::parse(read_text_file(dir / kUserPluginsFile)));
        for (auto& [id, m] : saved.manifests)
          if (m.origin == plugins::Origin::user_defined) registry = plugins::register_plugin(registry, std::move(m));
      }
    } else {
      notes_ = std::make_unique<qa::AugmentationStore>();
      log_ = std::make_unique<exec::ExecutionLog>();
      workspaces_ = std::make_unique<WorkspaceRegistry>(std::move(data.seed));
    }
    registry_ = std::make_unique<plugins::PluginRegistry>(std::move(registry));
    executor_ = std::make_unique<exec::Executor>(builtins_, config_.executor, *clock_, *ids_, log_.get());
    engine_ = std::make_unique<Engine>(EngineDeps{taxonomy_, fragments_, documents_, *backend_, *registry_,
                                                  *executor_, *workspaces_, *notes_, *clock_, *ids_},
                                       config_.engine);
  }

  Runtime(const Runtime&) = delete;
  Runtime& operator=(const Runtime&) = delete;

  const Config& config() const { return config_; }
  Engine& engine() { return *engine_; }
  Clock& clock() { return *clock_; }
  llm::Backend& backend() { return *backend_; }
  TaxonomyHolder& taxonomy() { return taxonomy_; }
  docs::FragmentStore& fragments() { return fragments_; }
  docs::DocumentCache& documents() { return documents_; }
  plugins::PluginRegistry& registry() { return *registry_; }
  exec::Executor& executor() { return *executor_; }
  exec::ExecutionLog& executions() { return *log_; }
  WorkspaceRegistry& workspaces() { return *workspaces_; }
  qa::AugmentationStore& notes() { return *notes_; }

  /// Registers a user-defined plugin and persists the user-defined set.
  std::shared_ptr<const plugins::Registry> add_plugin(plugins::PluginManifest m) {
    m.origin = plugins::Origin::user_defined;
    if (m.binding == plugins::Binding::builtin_sim && !builtins_.find(m.command)) {
      plugins::validate_manifest(m);
      throw Error(errc::unknown_builtin, "plugin '" + m.plugin_id + "' names unknown builtin '" + m.command + "'",
                  {{"plugin_id", m.plugin_id}, {"builtin", m.command}});
    }
    std::lock_guard lock(plugin_write_);
    auto next = registry_->add(std::move(m));
    if (persistent_) {
      plugins::Registry user;
      user.version = next->version;
      for (const auto& [id, manifest] : next->manifests)
        if (manifest.origin == plugins::Origin::user_defined) user.manifests.emplace(id, manifest);
      write_file_atomic(config_.state_dir / kUserPluginsFile, plugins::to_json(user).dump(2) + "\n");
    }
    return next;
  }

  // Sessions: a file store when persistent, a map otherwise.

  void save_session(const session::Session& s) {
    if (sessions_) return sessions_->save(s);
    std::lock_guard lock(memory_mutex_);
    memory_sessions_.insert_or_assign(s.session_id, s);
  }

  session::Session load_session(std::string_view id) {
    if (sessions_) return sessions_->load(id);
    std::lock_guard lock(memory_mutex_);
    auto it = memory_sessions_.find(std::string(id));
    if (it == memory_sessions_.end())
      throw Error(errc::session_not_found, "no session '" + std::string(id) + "'", {{"session_id", std::string(id)}});
    return it->second;
  }

 private:
  Config config_;
  exec::BuiltinCatalog builtins_;
  bool persistent_;
  std::unique_ptr<Clock> clock_;
  std::unique_ptr<IdSource> ids_;
  std::unique_ptr<llm::Backend> backend_;
  TaxonomyHolder taxonomy_;
  docs::FragmentStore fragments_;
  docs::DocumentCache documents_;
  std::unique_ptr<plugins::PluginRegistry> registry_;
  std::unique_ptr<session::SessionStore> sessions_;
  std::unique_ptr<qa::AugmentationStore> notes_;
  std::unique_ptr<exec::ExecutionLog> log_;
  std::unique_ptr<WorkspaceRegistry> workspaces_;
  std::unique_ptr<exec::Executor> executor_;
  std::unique_ptr<Engine> engine_;
  std::mutex plugin_write_;
  std::mutex memory_mutex_;
  std::map<std::string, session::Session> memory_sessions_;
};

}  // namespace helmsman
