#pragma once

#include <cstdint>
#include <functional>

namespace i3d {

// Caps the number of worker threads used inside primitives. 1 forces a
// fixed evaluation order and therefore bit-reproducible results.
void set_num_threads(int n);
int num_threads();

// Runs fn(i, worker) for i in [begin, end) using a static partition into
// contiguous chunks, one per worker. `worker` is the chunk index in
// [0, workers_for(end - begin)).
void parallel_for(int64_t begin, int64_t end,
                  const std::function<void(int64_t, int)>& fn);
int workers_for(int64_t count);

}  // namespace i3d
