// Writes a small synthetic workspace (stores, manifests, configs) for trying
// out the frozen-align commands.

#include <iostream>

#include <CLI11.hpp>

#include "frozen_align/error.hpp"
#include "frozen_align/synthetic.hpp"

int main(int argc, char** argv) {
  frozen_align::synthetic::Spec spec;
  std::string out = "toy";
  std::size_t unseen = 2;
  CLI::App app{"Generate a synthetic frozen-align workspace"};
  app.add_option("--out", out, "Target directory");
  app.add_option("--seed", spec.seed, "Generator seed");
  app.add_option("--classes", spec.classes, "Number of classes");
  app.add_option("--unseen", unseen, "Classes held out for the seen/unseen benchmark");
  app.add_option("--images-per-class", spec.images_per_class, "Images per class");
  app.add_option("--latent-dim", spec.latent_dim, "Dimension of the shared latent space");
  app.add_option("--vision-dim", spec.vision_dim, "Vision feature width");
  app.add_option("--text-dim", spec.text_dim, "Text feature width");
  CLI11_PARSE(app, argc, argv);
  try {
    frozen_align::synthetic::write_workspace(spec, out, unseen);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cout << "wrote " << out << "\n";
  return 0;
}
