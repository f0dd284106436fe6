#include "polycount/app.hpp"

int main(int argc, char** argv) { return polycount::app::main(argc, argv); }
