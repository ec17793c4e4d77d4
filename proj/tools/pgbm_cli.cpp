#include <pgbm/cli.hpp>

int main(int argc, char** argv) { return pgbm::cli::run(argc, argv); }
