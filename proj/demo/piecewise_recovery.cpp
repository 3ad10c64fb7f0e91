// Simulates one abrupt-change dataset from the standard truth and compares
// the estimated fixed effects with the values that generated it.

#include "nlmix/report.hpp"
#include "nlmix/simulate.hpp"

#include <iostream>

int main() {
  using namespace nlmix;
  SimScenario sc = SimScenario::standard(ModelKind::PmmAbrupt);
  sc.n = 300;
  sc.seed = 7;
  const auto data = simulate_dataset(sc, 1);
  const auto start = initial_values(data, sc.kind);
  const auto f = fit(data, sc.model_spec(), start);

  std::cout << "parameter      truth    estimate  SE\n";
  for (const auto &c : f.coefficients)
    std::cout << c.name << "  " << fixed(sc.alpha[c.param], 3) << "  " << format_estimate(c.estimate)
              << "  " << format_estimate(c.se) << '\n';
  std::cout << "sigma  " << fixed(sc.sigma, 3) << "  " << format_estimate(f.sigma) << '\n';
}
