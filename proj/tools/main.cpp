// svpkit: command line front end. Subcommands are registered in cli.hpp and
// grow alongside the library; this translation unit stays a thin shell.
#include <cstdio>

int main(int argc, char** argv) {
    (void)argc;
    (void)argv;
    std::fprintf(stderr, "svpkit: no subcommands wired yet\n");
    return 1;
}
