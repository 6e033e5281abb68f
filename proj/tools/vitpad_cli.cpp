#include "vitpad/cli.hpp"

int main(int argc, char** argv) { return vitpad::cli::dispatch(argc, argv); }
