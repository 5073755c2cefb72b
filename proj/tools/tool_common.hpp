// Shared helpers for the CLI entry points.
#pragma once

#include <csignal>
#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <string>

namespace dynembed::tool {

// Default seed for tools that take --seed: the DYNEMBED_SEED environment
// variable when set, else 0. An explicit flag always wins.
inline std::uint64_t default_seed() {
  const char* env = std::getenv("DYNEMBED_SEED");
  if (env == nullptr || *env == '\0') return 0;
  return std::strtoull(env, nullptr, 10);
}

// Blocks until SIGINT or SIGTERM arrives. Call before spawning server
// threads so the mask is inherited and the signal is delivered here.
inline void wait_for_shutdown_signal() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  int sig = 0;
  sigwait(&set, &sig);
  std::cerr << "shutting down (signal " << sig << ")\n";
}

inline void block_shutdown_signals() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
}

inline int wait_for_signal() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  int sig = 0;
  sigwait(&set, &sig);
  return sig;
}

}  // namespace dynembed::tool
