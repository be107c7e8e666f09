#include "hhae/cli.hpp"

int main(int argc, char** argv) { return hhae::dispatch(argc, argv); }
