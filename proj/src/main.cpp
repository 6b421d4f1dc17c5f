// keyforge - certified key-rate bounds from the command line.
#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "keyforge/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"certified lower bounds on QKD secret key rates"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_path;
  keyforge::cli::RunOptions opts;

  std::string verb;
  for (const char* name : {"asymptotic", "finite", "decoy", "sweep"}) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "JSON config file")->required();
    sub->add_option("--out", out_path, "output file (default: stdout)");
    sub->add_flag("--json", opts.json, "emit JSON instead of CSV");
    sub->add_option("--jobs", opts.jobs, "sweep worker threads (0 = cores)");
    sub->add_flag("--verbose", opts.verbose, "progress notes on stderr");
    sub->callback([&verb, name] { verb = name; });
  }

  CLI11_PARSE(app, argc, argv);

  std::ifstream in(config_path);
  if (!in) {
    std::cerr << "cannot open config file: " << config_path << "\n";
    return 2;
  }
  std::ostringstream text;
  text << in.rdbuf();

  if (out_path.empty())
    return keyforge::cli::run_command(verb, text.str(), std::cout, std::cerr,
                                      opts);
  std::ofstream out(out_path);
  if (!out) {
    std::cerr << "cannot open output file: " << out_path << "\n";
    return 2;
  }
  return keyforge::cli::run_command(verb, text.str(), out, std::cerr, opts);
}
