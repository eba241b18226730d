#include "ucrn/pipeline.hpp"

int main(int argc, char** argv) { return ucrn::run_cli(argc, argv); }
