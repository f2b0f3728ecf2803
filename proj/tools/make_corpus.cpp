// Writes a synthetic four-class corpus: class k has a bright quadrant k.

#include <CLI11.hpp>

#include <iostream>

#include "meddds/nodes.hpp"

int main(int argc, char** argv) {
  CLI::App app{"make_corpus"};
  std::string out;
  std::size_t per_class = 100;
  std::uint32_t size = 32;
  std::uint64_t seed = 1;
  app.add_option("--out", out, "output directory")->required();
  app.add_option("--per-class", per_class)->capture_default_str();
  app.add_option("--size", size)->capture_default_str();
  app.add_option("--seed", seed)->capture_default_str();
  CLI11_PARSE(app, argc, argv);
  try {
    const auto c = meddds::nodes::write_corpus(out, per_class, size, seed);
    std::cout << c.images.size() << " images, truth " << c.truth_csv.string() << '\n';
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
