#include "idea/pipeline.hpp"

int main(int argc, char** argv) { return idea::pipeline::run_cli(argc, argv); }
