// atx: synthetic traffic, model training, evaluation and attention explanations.

#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "atx/cli/commands.hpp"

namespace {

std::string flag_name(const std::string& field) {
  std::string s = field;
  for (char& c : s)
    if (c == '_') c = '-';
  return "--" + s;
}

struct SubcommandOptions {
  const atx::cli::CommandSchema* schema = nullptr;
  CLI::App* app = nullptr;
  std::string config;
  bool force = false;
  std::map<std::string, std::string> text;
  std::map<std::string, bool> flags;
  std::map<std::string, CLI::Option*> options;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-based explanations for multi-aircraft trajectory prediction"};
  app.require_subcommand(1);

  std::vector<SubcommandOptions> subs(atx::cli::schemas().size());
  for (std::size_t i = 0; i < subs.size(); ++i) {
    auto& so = subs[i];
    so.schema = &atx::cli::schemas()[i];
    so.app = app.add_subcommand(so.schema->name, so.schema->description);
    so.app->add_option("--config", so.config, "TOML config or a previous run.json");
    so.app->add_flag("--force", so.force, "allow writing into a non-empty output directory");
    for (const auto& f : so.schema->fields) {
      if (f.type == atx::cli::FieldType::kBool) {
        so.flags[f.name] = false;
        so.options[f.name] = so.app->add_flag(flag_name(f.name) + ",!" + "--no-" + flag_name(f.name).substr(2),
                                              so.flags[f.name], f.help);
      } else {
        so.text[f.name];
        so.options[f.name] = so.app->add_option(flag_name(f.name), so.text[f.name], f.help);
      }
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return atx::cli::kExitUsage;
  }

  for (auto& so : subs) {
    if (!so.app->parsed()) continue;
    std::map<std::string, std::string> overrides;
    for (const auto& [name, opt] : so.options) {
      if (opt->count() == 0) continue;
      overrides[name] = so.text.count(name) ? so.text[name] : (so.flags[name] ? "true" : "false");
    }
    nlohmann::json cfg;
    try {
      cfg = atx::cli::resolve_config(*so.schema, so.config.empty() ? std::nullopt : std::optional(so.config),
                                     overrides);
    } catch (const atx::InputError& e) {
      std::cerr << "error: " << e.what() << "\n";
      return atx::cli::kExitUsage;
    }
    return atx::cli::run_command(so.schema->name, cfg, so.force, std::cout, std::cerr);
  }
  return atx::cli::kExitUsage;
}
