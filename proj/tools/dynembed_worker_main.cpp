// dynembed-worker: one shard's storage and compute. The --backend flag
// decides where table contents actually live:
//
//   memory       volatile in-process maps
//   file:DIR     an append-only log under DIR (update-durable, restart-safe)
//   remote:NAME  the in-process remote store registered under NAME
//
// --sandbox serves read-only traffic (lookups without creation, sampling,
// retrieval, stats) and rejects anything that could mutate table state.

#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "dynembed/error.hpp"
#include "dynembed/service.hpp"
#include "tool_common.hpp"

int main(int argc, char** argv) {
  CLI::App app{"dynembed worker: serves one shard of every table"};

  int port = 0;
  std::uint32_t shard_id = 0;
  std::string backend_flag = "memory";
  bool sandbox = false;
  app.add_option("--port", port, "listen port (0 picks an ephemeral port)")
      ->required();
  app.add_option("--shard-id", shard_id, "which shard this worker serves")
      ->required();
  app.add_option("--backend", backend_flag,
                 "storage backend: memory | file:DIR | remote:NAME");
  app.add_flag("--sandbox", sandbox,
               "read-only serving mode: reject every mutating request");

  CLI11_PARSE(app, argc, argv);

  try {
    dynembed::tool::block_shutdown_signals();
    dynembed::WorkerOptions options;
    options.port = port;
    options.shard_id = shard_id;
    options.backend = dynembed::WorkerBackend::parse(backend_flag);
    options.sandbox = sandbox;
    dynembed::WorkerServer server(options);
    server.start();
    std::cout << "dynembed-worker listening port=" << server.port()
              << " shard=" << shard_id << " backend=" << backend_flag
              << " sandbox=" << (sandbox ? 1 : 0) << std::endl;
    const int sig = dynembed::tool::wait_for_signal();
    std::cerr << "shutting down (signal " << sig << ")\n";
    server.stop();
  } catch (const dynembed::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
