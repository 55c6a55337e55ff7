// Regenerates tests/fixtures. Usage: make_fixtures <fixtures-dir>
#include "golden.hpp"

#include <iostream>

int main(int argc, char** argv) {
    if (argc != 2) {
        std::cerr << "usage: make_fixtures <dir>\n";
        return 2;
    }
    const vslot::fs::path dir = vslot::fs::path(argv[1]) / "golden_pack";
    vslot::fs::remove_all(dir);
    vslot::save_slot_pack(vslot::testing::golden_pack(), dir);
    std::cout << "wrote " << dir.string() << "\n";
}
