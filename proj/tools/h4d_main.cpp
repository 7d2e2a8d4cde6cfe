#include <iostream>

#include "h4d/cli.hpp"

int main(int argc, char** argv) {
  try {
    return h4d::cli::run(argc, argv, std::cout, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
