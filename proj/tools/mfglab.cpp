#include "mfg/harness.hpp"

int main(int argc, char** argv) { return mfg::cli_dispatch(argc, argv); }
