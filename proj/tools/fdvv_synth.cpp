// Writes synthetic capture sessions of a simulated tactile switch, one file per
// press velocity. The bundled data/ directory was produced with the defaults.
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "fdvv/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Synthetic capture generator", "fdvv-synth"};
  std::string out = "data";
  std::uint64_t seed = 11;
  std::size_t presses = 15;
  app.add_option("--out", out, "Output directory");
  app.add_option("--seed", seed, "Noise seed");
  app.add_option("--presses", presses, "Presses per velocity");
  CLI11_PARSE(app, argc, argv);

  const auto profile = fdvv::clear_like_profile();
  std::filesystem::create_directories(out);
  for (std::size_t i = 0; i < fdvv::kCaptureVelocities.size(); ++i) {
    const double v = fdvv::kCaptureVelocities[i];
    fdvv::CaptureSynthOptions options;
    options.seed = seed + i;
    options.presses = presses;
    const auto session = fdvv::synthetic_capture(profile, v, options);
    const auto path = std::filesystem::path(out) / (profile.id + "_" + std::to_string(static_cast<int>(v)) + ".json");
    std::ofstream(path) << fdvv::serialize_capture(session);
    std::cout << path.string() << '\n';
  }
  return 0;
}
