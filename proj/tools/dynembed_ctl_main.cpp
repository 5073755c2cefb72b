// dynembed-ctl: checkpoint and inspection operations against a running
// master.
//
//   dynembed-ctl --master HOST:PORT save PATH      write a checkpoint
//   dynembed-ctl --master HOST:PORT restore PATH   load a checkpoint
//   dynembed-ctl --master HOST:PORT stats          print service state

#include <cinttypes>
#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "dynembed/client.hpp"
#include "dynembed/error.hpp"
#include "dynembed/net.hpp"

int main(int argc, char** argv) {
  CLI::App app{"dynembed control: save/restore checkpoints, inspect stats"};

  std::string master;
  std::string command;
  std::string path;
  app.add_option("--master", master, "master endpoint, host:port")->required();
  app.add_option("command", command, "save | restore | stats")->required();
  app.add_option("path", path, "checkpoint directory (save/restore)");

  CLI11_PARSE(app, argc, argv);

  try {
    auto [host, port] = dynembed::parse_host_port(master);
    dynembed::ServiceClient client(host, port);

    if (command == "save") {
      if (path.empty()) {
        std::cerr << "error: save needs a checkpoint directory\n";
        return 2;
      }
      auto reply = client.save(path);
      std::cout << "manifest=" << reply.manifest_path << " step=" << reply.step
                << " tables=" << reply.tables << "\n";
    } else if (command == "restore") {
      if (path.empty()) {
        std::cerr << "error: restore needs a checkpoint directory\n";
        return 2;
      }
      auto reply = client.restore(path);
      std::cout << "tables=" << reply.tables << " records=" << reply.records
                << "\n";
    } else if (command == "stats") {
      auto reply = client.stats();
      std::cout << "n_workers=" << reply.n_workers << " step=" << reply.step
                << " tables=" << reply.tables.size() << "\n";
      for (const auto& t : reply.tables) {
        std::printf(
            "table=%s config_digest=%016" PRIx64
            " stored_dim=%u resident=%" PRIu64 " state_digest=%016" PRIx64 "\n",
            t.name.c_str(), t.config_digest, t.stored_dim, t.resident,
            t.state_digest);
      }
    } else {
      std::cerr << "error: unknown command \"" << command
                << "\" (expected save, restore, or stats)\n";
      return 2;
    }
  } catch (const dynembed::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
