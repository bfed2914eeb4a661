#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <e2fl/experiment.hpp>

int main(int argc, char** argv) {
  CLI::App app{"e2fl: rank-based federated learning simulator"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  int jobs = 1;
  std::string seed_override;
  CLI::App* run = app.add_subcommand("run", "execute every cell of a config file");
  run->add_option("config", config_path, "experiment config file")->required();
  run->add_option("--out", out_dir, "output directory (default: $E2FL_OUT_ROOT/<stem> or ./<stem>_out)");
  run->add_option("--jobs", jobs, "cell tasks to run in parallel")->check(CLI::PositiveNumber);
  run->add_option("--seed-override", seed_override, "comma-separated seeds replacing every cell's list");

  std::vector<std::string> dirs;
  std::string cmp_out;
  CLI::App* cmp = app.add_subcommand("compare", "compare summary tables of two or more runs");
  cmp->add_option("dirs", dirs, "run output directories, baseline first")->required()->expected(-2);
  cmp->add_option("--out", cmp_out, "directory for comparison.csv (default: current directory)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      e2fl::RunOptions opt;
      opt.config_path = config_path;
      opt.out_dir = out_dir;
      opt.jobs = jobs;
      if (!seed_override.empty())
        for (const std::string& item : e2fl::detail::split_list("--seed-override", seed_override))
          opt.seed_override.push_back(e2fl::detail::cfg_u64("--seed-override", item));
      const std::filesystem::path out = e2fl::run_experiment(opt);
      std::cout << "wrote " << out.string() << "\n";
    } else {
      const std::filesystem::path out = e2fl::compare_runs(dirs, cmp_out);
      std::cout << "wrote " << out.string() << "\n";
    }
  } catch (const e2fl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const e2fl::DivergenceError& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 3;
  } catch (const std::logic_error& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
