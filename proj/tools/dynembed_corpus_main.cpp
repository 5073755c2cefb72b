// dynembed-corpus: writes the deterministic synthetic training corpus — a
// Zipf-distributed token stream with a planted partner structure, the same
// generator the tests train against.

#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "dynembed/error.hpp"
#include "dynembed/trainer.hpp"
#include "tool_common.hpp"

int main(int argc, char** argv) {
  CLI::App app{"dynembed corpus generator"};

  dynembed::CorpusSpec spec;
  spec.seed = dynembed::tool::default_seed();
  std::string out;
  app.add_option("--out", out, "output text file")->required();
  app.add_option("--seed", spec.seed, "generator seed (default: DYNEMBED_SEED or 0)");
  app.add_option("--vocab", spec.vocab, "vocabulary size");
  app.add_option("--tokens", spec.tokens, "number of tokens");
  app.add_option("--zipf-exponent", spec.zipf_exponent, "rank-frequency exponent");
  app.add_option("--partner-prob", spec.partner_prob,
                 "probability that a token is followed by its partner");

  CLI11_PARSE(app, argc, argv);

  try {
    const std::string text = dynembed::make_zipf_corpus(spec);
    std::ofstream f(out, std::ios::binary | std::ios::trunc);
    if (!f || !(f << text)) {
      std::cerr << "error: cannot write " << out << "\n";
      return 1;
    }
    std::cout << "wrote " << out << " bytes=" << text.size()
              << " vocab=" << spec.vocab << " tokens=" << spec.tokens << "\n";
  } catch (const dynembed::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
