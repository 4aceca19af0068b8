#include "softnce/cli.hpp"

int main(int argc, char** argv) { return softnce::dispatch(argc, argv); }
