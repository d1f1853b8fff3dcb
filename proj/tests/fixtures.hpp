#pragma once

#include <filesystem>

#include "boltzdef/data.hpp"

namespace fixture {

struct Split {
    boltzdef::Dataset train;
    boltzdef::Dataset test;
};

/// First n_train / n_test items of the bundled MNIST subset, optionally
/// reduced to the 7x7 binary variant.
inline Split mnist(std::size_t n_train, std::size_t n_test, bool seven = true) {
    const std::filesystem::path dir = BOLTZDEF_DATA_DIR;
    Split s{boltzdef::load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte").head(n_train),
            boltzdef::load_idx(dir / "test-images-idx3-ubyte", dir / "test-labels-idx1-ubyte").head(n_test)};
    if (seven) {
        s.train = boltzdef::downscale_binarize(s.train, 0.5);
        s.test = boltzdef::downscale_binarize(s.test, 0.5);
    }
    return s;
}

} // namespace fixture
