// Copyright (c) 2026 The lpdt Authors
// SPDX-License-Identifier: Apache-2.0

#include "lpdt/executor.hpp"

#include <exception>
#include <thread>
#include <vector>

namespace lpdt {

void Executor::run(Index n, const std::function<void(Index)>& fn) const {
  const auto workers = static_cast<Index>(std::min<Index>(threads_, n));
  if (workers <= 1) {
    for (Index i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (Index w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (Index i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace lpdt
