// Generates the bundled North Sea desk case: network.json, profiles.csv and
// curves.csv for a timestep range.

#include <CLI11.hpp>

#include <cstdio>

#include "zonalopf/cases.hpp"

int main(int argc, char** argv) {
  CLI::App app{"generate the synthetic North Sea desk dataset",
               "zonal-opf-case"};
  std::string out_dir;
  int t_from = 5750;
  int t_to = 6000;
  app.add_option("--out", out_dir, "output directory")->required();
  app.add_option("--from", t_from, "first timestep (inclusive)");
  app.add_option("--to", t_to, "last timestep (exclusive)");
  CLI11_PARSE(app, argc, argv);

  try {
    if (t_from >= t_to) {
      std::fprintf(stderr, "usage error: --from must be below --to\n");
      return 2;
    }
    zonalopf::write_case_files(out_dir, t_from, t_to);
    std::printf("wrote network.json, profiles.csv, curves.csv for [%d, %d) "
                "to %s\n",
                t_from, t_to, out_dir.c_str());
    return 0;
  } catch (const zonalopf::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
