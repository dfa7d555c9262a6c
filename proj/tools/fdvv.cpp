#include "fdvv/cli.hpp"

int main(int argc, char** argv) { return fdvv::cli_dispatch({argv + 1, argv + argc}); }
