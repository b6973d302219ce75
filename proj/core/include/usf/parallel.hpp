// Copyright Contributors to the usf project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>

namespace usf {

// Number of workers used by parallel_chunks. Defaults to the hardware
// concurrency; override with the USF_WORKERS environment variable.
int worker_count();

// Runs fn(chunk) for chunk in [0, n_chunks). Chunk boundaries are the
// caller's responsibility and must not depend on the worker count; results
// written per chunk index are then reproducible for any worker count.
// Exceptions thrown by fn are rethrown on the calling thread.
void parallel_chunks(int n_chunks, const std::function<void(int)>& fn);

}  // namespace usf
