// dynembed-master: the routing front end. Workers are listed in shard order;
// worker i serves exactly the keys hashing to shard i.

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dynembed/error.hpp"
#include "dynembed/service.hpp"
#include "tool_common.hpp"

int main(int argc, char** argv) {
  CLI::App app{"dynembed master: routes client requests to shard workers"};

  int port = 0;
  std::string workers_flag;
  app.add_option("--port", port, "listen port (0 picks an ephemeral port)")
      ->required();
  app.add_option("--workers", workers_flag,
                 "comma-separated worker endpoints, host:port per shard, "
                 "index = shard id")
      ->required();

  CLI11_PARSE(app, argc, argv);

  std::vector<std::string> workers;
  std::stringstream ss(workers_flag);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) workers.push_back(item);
  }

  try {
    dynembed::tool::block_shutdown_signals();
    dynembed::MasterServer server({port, workers});
    server.start();
    std::cout << "dynembed-master listening port=" << server.port()
              << " workers=" << server.n_workers() << std::endl;
    const int sig = dynembed::tool::wait_for_signal();
    std::cerr << "shutting down (signal " << sig << ")\n";
    server.stop();
  } catch (const dynembed::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
