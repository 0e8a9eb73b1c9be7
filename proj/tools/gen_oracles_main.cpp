// SPDX-License-Identifier: Apache-2.0
#include <cstdio>

#include "oracle_gen.hpp"

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: gen_oracles <output-dir>\n");
    return 1;
  }
  psfl::oracles::write_oracles(argv[1]);
  std::printf("oracle tables written to %s\n", argv[1]);
  return 0;
}
