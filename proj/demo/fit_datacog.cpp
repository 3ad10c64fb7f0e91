// Builds the demonstration cohort, fits the sigmoidal model with age at death
// on every parameter and prints the report plus the two marginal curves.

#include "nlmix/report.hpp"
#include "nlmix/simulate.hpp"
#include "nlmix/trajectory.hpp"

#include <iostream>

int main(int argc, char **argv) {
  using namespace nlmix;
  const int k1 = argc > 1 ? std::stoi(argv[1]) : 300;
  const auto data = make_datacog(20220901);

  ModelSpec spec = ModelSpec::standard(ModelKind::Smm);
  for (auto &c : spec.covariates)
    c = {"ageDeath90"};
  SaemConfig config;
  config.k1 = k1;
  const auto f = fit(data, spec, initial_values(data, ModelKind::Smm), config);
  std::cout << render_report(f);

  const auto [young, old] = marginal_contrast(f, "ageDeath90");
  std::cout << "\ntime  " << young.label << "  " << old.label << '\n';
  for (std::size_t i = 0; i < young.time.size(); i += 10)
    std::cout << fixed(young.time[i], 1) << "  " << fixed(young.value[i], 3) << "  "
              << fixed(old.value[i], 3) << '\n';
}
