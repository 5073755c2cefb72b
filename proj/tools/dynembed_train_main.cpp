// dynembed-train: the skip-gram training harness CLI.
//
// Trains input/output embedding tables over a text corpus with sampled
// softmax, against either a running service (--backend service --master
// HOST:PORT) or the in-process reference (--backend reference). The two
// backends run the same arithmetic; with a single worker they produce
// bit-identical losses and parameters for the same flags.
//
// Writes into --out:
//   loss_trace.txt       one "step loss" line per completed step
//   accuracy_report.txt  key=value lines (vocab_accuracy first)

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "dynembed/client.hpp"
#include "dynembed/error.hpp"
#include "dynembed/net.hpp"
#include "dynembed/trainer.hpp"
#include "tool_common.hpp"

namespace fs = std::filesystem;
using namespace dynembed;

int main(int argc, char** argv) {
  CLI::App app{"dynembed skip-gram training harness"};

  std::string corpus_path;
  std::string optimizer_name = "sgd";
  std::string backend_name = "service";
  std::string master;
  std::string out_dir;
  TrainConfig cfg;
  cfg.seed = tool::default_seed();
  float lr = 0.05f;
  float momentum = 0.9f;
  std::uint64_t heldout_n = 2000;

  app.add_option("--corpus", corpus_path, "training text file")->required();
  app.add_option("--dim", cfg.embedding_dim, "embedding dimension");
  app.add_option("--steps", cfg.steps, "training steps");
  app.add_option("--optimizer", optimizer_name, "sgd | adagrad | momentum");
  app.add_option("--backend", backend_name, "service | reference");
  app.add_option("--seed", cfg.seed, "run seed (default: DYNEMBED_SEED or 0)");
  app.add_option("--cutoff", cfg.cutoff,
                 "keep the N most frequent tokens, map the rest to \"oov\" "
                 "(0 = unlimited)");
  app.add_option("--master", master, "master endpoint, host:port (service backend)");
  app.add_option("--out", out_dir, "output directory")->required();
  app.add_option("--batch", cfg.batch, "examples per step");
  app.add_option("--num-sampled", cfg.num_sampled, "negatives per step");
  app.add_option("--window", cfg.window, "skip-gram window");
  app.add_option("--threads", cfg.threads, "concurrent training threads");
  app.add_option("--range", cfg.range,
                 "restrict sampling to the most frequent N keys (0 = off)");
  app.add_option("--lr", lr, "learning rate");
  app.add_option("--momentum", momentum, "momentum coefficient");
  app.add_option("--heldout", heldout_n, "held-out pairs for the accuracy report");

  CLI11_PARSE(app, argc, argv);

  try {
    if (optimizer_name == "sgd") {
      cfg.optimizer = OptimizerSpec::sgd(lr);
    } else if (optimizer_name == "adagrad") {
      cfg.optimizer = OptimizerSpec::adagrad(lr);
    } else if (optimizer_name == "momentum") {
      cfg.optimizer = OptimizerSpec::momentum(lr, momentum);
    } else {
      std::cerr << "error: unknown optimizer \"" << optimizer_name << "\"\n";
      return 2;
    }

    std::ifstream corpus_file(corpus_path, std::ios::binary);
    if (!corpus_file) {
      std::cerr << "error: cannot read corpus " << corpus_path << "\n";
      return 1;
    }
    std::stringstream buf;
    buf << corpus_file.rdbuf();
    const std::vector<std::string> tokens = tokenize(buf.str());
    const Vocabulary vocab(tokens, cfg.cutoff);
    const std::vector<SkipGramPair> pairs = window_pairs(tokens, cfg.window);

    std::unique_ptr<TrainerBackend> backend;
    std::shared_ptr<ServiceClient> client;
    if (backend_name == "service") {
      if (master.empty()) {
        std::cerr << "error: --backend service needs --master\n";
        return 2;
      }
      auto [host, port] = parse_host_port(master);
      client = std::make_shared<ServiceClient>(host, port);
      client->hello();
      open_table(client, input_table_config(cfg));
      open_table(client, output_table_config(cfg));
      backend = std::make_unique<ServiceBackend>(client);
    } else if (backend_name == "reference") {
      backend = std::make_unique<ReferenceBackend>(input_table_config(cfg),
                                                   output_table_config(cfg));
    } else {
      std::cerr << "error: unknown backend \"" << backend_name << "\"\n";
      return 2;
    }

    const TrainResult result = train_skipgram(*backend, cfg, pairs, vocab);

    std::vector<SkipGramPair> heldout;
    const std::size_t n_held =
        std::min<std::size_t>(heldout_n, pairs.size());
    heldout.assign(pairs.end() - static_cast<std::ptrdiff_t>(n_held), pairs.end());
    const double accuracy = eval_vocab_accuracy(*backend, heldout, vocab);

    fs::create_directories(out_dir);

    {
      std::ofstream f(fs::path(out_dir) / "loss_trace.txt", std::ios::trunc);
      for (std::size_t s = 0; s < result.losses.size(); ++s) {
        if (std::isnan(result.losses[s])) continue;  // outage-dropped step
        char line[64];
        std::snprintf(line, sizeof(line), "%zu %.17g\n", s, result.losses[s]);
        f << line;
      }
      if (!f) {
        std::cerr << "error: cannot write loss trace\n";
        return 1;
      }
    }

    double last_mean = 0.0;
    std::uint64_t last_n = 0;
    const std::size_t tail_begin =
        result.losses.size() > 1000 ? result.losses.size() - 1000 : 0;
    for (std::size_t s = tail_begin; s < result.losses.size(); ++s) {
      if (std::isnan(result.losses[s])) continue;
      last_mean += result.losses[s];
      ++last_n;
    }
    if (last_n > 0) last_mean /= static_cast<double>(last_n);

    {
      std::ofstream f(fs::path(out_dir) / "accuracy_report.txt", std::ios::trunc);
      char line[256];
      std::snprintf(line, sizeof(line), "vocab_accuracy=%.6f\n", accuracy);
      f << line;
      f << "heldout_pairs=" << heldout.size() << "\n";
      f << "steps=" << cfg.steps << "\n";
      f << "failed_steps=" << result.failed_steps.size() << "\n";
      f << "examples_per_epoch=" << result.examples_per_epoch << "\n";
      std::snprintf(line, sizeof(line), "mean_loss_last_1000=%.17g\n", last_mean);
      f << line;
      f << "optimizer=" << optimizer_name << "\n";
      f << "backend=" << backend_name << "\n";
      f << "dim=" << cfg.embedding_dim << "\n";
      f << "cutoff=" << cfg.cutoff << "\n";
      f << "seed=" << cfg.seed << "\n";
      f << "vocab_kept=" << vocab.kept() << "\n";
      if (!f) {
        std::cerr << "error: cannot write accuracy report\n";
        return 1;
      }
    }

    std::printf("trained steps=%" PRIu64 " failed=%zu vocab_accuracy=%.6f "
                "mean_loss_last_1000=%.6f\n",
                cfg.steps, result.failed_steps.size(), accuracy, last_mean);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
