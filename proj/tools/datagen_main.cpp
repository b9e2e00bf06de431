#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "ulab/datagen.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Deterministic 28x28 corpus generator (IDX output)"};
    std::string family = "digits";
    std::string out_dir;
    std::size_t n_train = 6000, n_test = 1000;
    std::uint64_t seed = 1;
    app.add_option("--family", family, "digits | shapes")->capture_default_str();
    app.add_option("--out", out_dir, "output directory")->required();
    app.add_option("--train", n_train, "training sample count")->capture_default_str();
    app.add_option("--test", n_test, "test sample count")->capture_default_str();
    app.add_option("--seed", seed, "generator seed")->capture_default_str();
    CLI11_PARSE(app, argc, argv);

    try {
        const auto fam = ulab::data::corpus_family_from_name(family);
        std::filesystem::create_directories(out_dir);
        ulab::data::write_corpus_idx(out_dir, fam, n_train, n_test, seed);
        std::cout << "wrote " << family << " corpus (" << n_train << " train / " << n_test
                  << " test) to " << out_dir << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
