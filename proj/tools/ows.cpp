#include "ows/app.hpp"

int main(int argc, char** argv) { return ows::run_cli(argc, argv); }
