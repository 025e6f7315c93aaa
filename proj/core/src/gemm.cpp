#include "mtnet/gemm.hpp"

extern "C" void openblas_set_num_threads(int);

namespace mtnet {

void set_compute_threads(int n) {
  if (n < 1) n = 1;
  openblas_set_num_threads(n);
}

}  // namespace mtnet
